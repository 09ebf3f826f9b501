use std::fs::File;
use std::io::{self, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, ExitCode, Stdio};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use wavecpl::acceleration::Variant;
use wavecpl::api::config::SchemeKind;
use wavecpl::cplscheme::Stats;
use wavecpl::CouplingConfig;
use wavecpl_harness::case::{
    run_inprocess, run_participant_tcp, write_csv, Case, CaseResult, CaseSpec, ParticipantOutcome,
};
use wavecpl_harness::heat::{HeatIntegrator, HeatParams};
use wavecpl_harness::oscillator::{OscillatorParams, Side};
use wavecpl_harness::sweep::{self, Axis};

#[derive(Parser)]
#[command(name = "wavecpl-harness", version, about = "Coupled oscillator and heat-equation convergence studies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Two-mass oscillator, RK4 on A and generalized-alpha on B
    RunOscillator(RunArgs),
    /// 1D Dirichlet-Neumann heat equation
    RunHeat(RunArgs),
    /// Run a case over a list of values and fit the observed order
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CaseName {
    Oscillator,
    Heat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    SerialImplicit,
    SerialExplicit,
    ParallelImplicit,
    ParallelExplicit,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AccelArg {
    None,
    Constant,
    IqnIlsFull,
    IqnIlsReduced,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IntegratorArg {
    Ie,
    Cn,
    Gl2,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CommArg {
    Inprocess,
    Tcp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RoleArg {
    Both,
    #[value(name = "A")]
    A,
    #[value(name = "B")]
    B,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Window,
    WindowFixedDt,
    DtA,
    DtB,
    Degree,
}

fn parse_degree(s: &str) -> Result<usize, String> {
    let d: usize = s.parse().map_err(|e| format!("{e}"))?;
    if wavecpl::api::config::SUPPORTED_DEGREES.contains(&d) {
        Ok(d)
    } else {
        Err(format!("degree must be one of {:?}", wavecpl::api::config::SUPPORTED_DEGREES))
    }
}

#[derive(Args, Clone)]
struct CaseArgs {
    /// Coupling configuration replacing the generated one
    #[arg(long)]
    config: Option<PathBuf>,
    /// Time window size
    #[arg(long, default_value_t = 0.1)]
    window: f64,
    /// Step size of A; must divide the window
    #[arg(long = "dt-a", conflicts_with = "steps_per_window_a")]
    dt_a: Option<f64>,
    /// Step size of B; must divide the window
    #[arg(long = "dt-b", conflicts_with = "steps_per_window_b")]
    dt_b: Option<f64>,
    /// Steps of A per window (oscillator default 5, heat 5)
    #[arg(long)]
    steps_per_window_a: Option<usize>,
    /// Steps of B per window (oscillator default 100, heat 5)
    #[arg(long)]
    steps_per_window_b: Option<usize>,
    #[arg(long, default_value_t = 3, value_parser = parse_degree)]
    degree: usize,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    substeps: OnOff,
    #[arg(long, value_enum, default_value_t = SchemeArg::SerialImplicit)]
    scheme: SchemeArg,
    /// Oscillator default none, heat default iqn-ils-full
    #[arg(long, value_enum)]
    acceleration: Option<AccelArg>,
    #[arg(long, default_value_t = 0.5)]
    omega: f64,
    /// Relative convergence limit (oscillator default 1e-10, heat 1e-12)
    #[arg(long)]
    limit: Option<f64>,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
    /// Generalized-alpha spectral radius
    #[arg(long, default_value_t = 0.9)]
    rho_inf: f64,
    /// Heat integrator on both sides
    #[arg(long, value_enum, default_value_t = IntegratorArg::Ie)]
    integrator: IntegratorArg,
    /// Heat vertex spacing
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
}

#[derive(Args, Clone)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = CommArg::Inprocess)]
    comm: CommArg,
    #[arg(long)]
    tcp_address: Option<String>,
    /// CSV output path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 3 when a window hit the iteration limit
    #[arg(long)]
    strict: bool,
    /// Write 0 as wall time so runs compare byte for byte
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Participant run by this process (A or B only with --comm tcp)
    #[arg(long, value_enum, default_value_t = RoleArg::Both)]
    role: RoleArg,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    case: CaseName,
    #[arg(long, value_enum, default_value_t = AxisArg::Window)]
    axis: AxisArg,
    /// Comma-separated sweep values
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[command(flatten)]
    args: CaseArgs,
    #[command(flatten)]
    output: OutputArgs,
}

/// Errors reported with exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn steps_for(window: f64, dt: Option<f64>, steps: Option<usize>, default: usize) -> anyhow::Result<usize> {
    match (dt, steps) {
        (_, Some(0)) => Err(config_err("steps per window must be at least one")),
        (_, Some(n)) => Ok(n),
        (Some(dt), None) => {
            let n = (window / dt).round();
            if dt <= 0.0 || n < 1.0 || (n * dt - window).abs() > 1e-9 * window {
                return Err(config_err(format!("step size {dt} does not divide the window {window}")));
            }
            Ok(n as usize)
        }
        (None, None) => Ok(default),
    }
}

fn build_spec(kind: CaseName, a: &CaseArgs) -> anyhow::Result<CaseSpec> {
    let config = match &a.config {
        Some(path) => Some(CouplingConfig::from_file(path)?),
        None => None,
    };
    let window = config.as_ref().map_or(a.window, |c| c.coupling_scheme.time_window_size);
    if !(window > 0.0) || !(a.t_end > 0.0) {
        return Err(config_err("window size and end time must be positive"));
    }
    let (def_a, def_b) = match kind {
        CaseName::Oscillator => (5, 100),
        CaseName::Heat => (5, 5),
    };
    let steps_a = steps_for(window, a.dt_a, a.steps_per_window_a, def_a)?;
    let steps_b = steps_for(window, a.dt_b, a.steps_per_window_b, def_b)?;
    let mut spec = match kind {
        CaseName::Oscillator => CaseSpec::oscillator(window, steps_a, steps_b, a.degree, a.substeps == OnOff::On),
        CaseName::Heat => {
            let integrator = match a.integrator {
                IntegratorArg::Ie => HeatIntegrator::ImplicitEuler,
                IntegratorArg::Cn => HeatIntegrator::CrankNicolson,
                IntegratorArg::Gl2 => HeatIntegrator::GaussLegendre2,
            };
            let mut s = CaseSpec::heat(integrator, window, steps_a, a.degree);
            s.steps_b = steps_b;
            s.substeps = a.substeps == OnOff::On;
            s
        }
    };
    spec.case = match spec.case {
        Case::Oscillator(p) => Case::Oscillator(OscillatorParams { t_end: a.t_end, ..p }),
        Case::Heat(_, i) => Case::Heat(HeatParams { h: a.h, t_end: a.t_end }, i),
    };
    spec.scheme = match a.scheme {
        SchemeArg::SerialImplicit => SchemeKind::SerialImplicit,
        SchemeArg::SerialExplicit => SchemeKind::SerialExplicit,
        SchemeArg::ParallelImplicit => SchemeKind::ParallelImplicit,
        SchemeArg::ParallelExplicit => SchemeKind::ParallelExplicit,
    };
    if let Some(acc) = a.acceleration {
        spec.acceleration = match acc {
            AccelArg::None => None,
            AccelArg::Constant => Some(Variant::Constant),
            AccelArg::IqnIlsFull => Some(Variant::IqnIlsFull),
            AccelArg::IqnIlsReduced => Some(Variant::IqnIlsReduced),
        };
    }
    spec.omega = a.omega;
    if let Some(l) = a.limit {
        spec.limit = l;
    }
    spec.max_iterations = a.max_iterations;
    spec.rho_inf = a.rho_inf;
    spec.config = config;
    // surface configuration problems before any thread or process starts
    spec.coupling_config(None)?.validate()?;
    Ok(spec)
}

/// Flags that recreate `spec` in a child process.
fn child_args(kind: CaseName, spec: &CaseSpec, config: Option<&PathBuf>) -> Vec<String> {
    let sub = match kind {
        CaseName::Oscillator => "run-oscillator",
        CaseName::Heat => "run-heat",
    };
    let mut v: Vec<String> = vec![sub.into()];
    let mut push = |k: &str, val: String| {
        v.push(k.into());
        v.push(val);
    };
    if let Some(p) = config {
        push("--config", p.display().to_string());
    }
    push("--window", format!("{:?}", spec.window));
    push("--steps-per-window-a", spec.steps_a.to_string());
    push("--steps-per-window-b", spec.steps_b.to_string());
    push("--degree", spec.degree.to_string());
    push("--substeps", if spec.substeps { "on" } else { "off" }.into());
    let scheme = match spec.scheme {
        SchemeKind::SerialImplicit => "serial-implicit",
        SchemeKind::SerialExplicit => "serial-explicit",
        SchemeKind::ParallelImplicit => "parallel-implicit",
        SchemeKind::ParallelExplicit => "parallel-explicit",
    };
    push("--scheme", scheme.into());
    let acc = match spec.acceleration {
        None => "none",
        Some(Variant::Constant) => "constant",
        Some(Variant::IqnIlsFull) => "iqn-ils-full",
        Some(Variant::IqnIlsReduced) => "iqn-ils-reduced",
    };
    push("--acceleration", acc.into());
    push("--omega", format!("{:?}", spec.omega));
    push("--limit", format!("{:?}", spec.limit));
    push("--max-iterations", spec.max_iterations.to_string());
    push("--rho-inf", format!("{:?}", spec.rho_inf));
    push("--t-end", format!("{:?}", spec.case.t_end()));
    if let Case::Heat(p, i) = spec.case {
        push("--h", format!("{:?}", p.h));
        let i = match i {
            HeatIntegrator::ImplicitEuler => "ie",
            HeatIntegrator::CrankNicolson => "cn",
            HeatIntegrator::GaussLegendre2 => "gl2",
        };
        push("--integrator", i.into());
    }
    push("--comm", "tcp".into());
    v
}

/// Exact transport of a participant outcome between processes.
#[derive(Serialize, Deserialize)]
struct Report {
    max_error_bits: u64,
    windows: usize,
    iterations: usize,
    unconverged: usize,
    min_read_degree: usize,
}

impl From<ParticipantOutcome> for Report {
    fn from(o: ParticipantOutcome) -> Self {
        Self {
            max_error_bits: o.max_error.to_bits(),
            windows: o.stats.windows,
            iterations: o.stats.iterations,
            unconverged: o.stats.unconverged,
            min_read_degree: o.min_read_degree,
        }
    }
}

impl From<Report> for ParticipantOutcome {
    fn from(r: Report) -> Self {
        Self {
            max_error: f64::from_bits(r.max_error_bits),
            stats: Stats { windows: r.windows, iterations: r.iterations, unconverged: r.unconverged },
            min_read_degree: r.min_read_degree,
        }
    }
}

fn free_address() -> anyhow::Result<String> {
    let l = TcpListener::bind("127.0.0.1:0")?;
    Ok(l.local_addr()?.to_string())
}

fn run_processes(kind: CaseName, spec: &CaseSpec, config: Option<&PathBuf>, address: &str) -> anyhow::Result<CaseResult> {
    let exe = std::env::current_exe()?;
    let started = Instant::now();
    let spawn = |role: &str| {
        let mut args = child_args(kind, spec, config);
        args.extend(["--tcp-address".into(), address.into(), "--role".into(), role.into()]);
        Command::new(&exe)
            .args(&args)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .with_context(|| format!("spawning participant {role}"))
    };
    let a = spawn("A")?;
    let b = spawn("B")?;
    let (oa, ob) = (a.wait_with_output()?, b.wait_with_output()?);
    let wall = started.elapsed().as_secs_f64();
    let parse = |name: &str, out: std::process::Output| -> anyhow::Result<ParticipantOutcome> {
        if !out.status.success() && out.status.code() != Some(3) {
            bail!("participant {name} failed with {}", out.status);
        }
        let text = String::from_utf8(out.stdout)?;
        let report: Report = serde_json::from_str(text.trim()).with_context(|| format!("report of participant {name}"))?;
        Ok(report.into())
    };
    let ra = parse("A", oa)?;
    let rb = parse("B", ob)?;
    Ok(CaseResult::combine(spec, ra, rb, wall))
}

fn run_one(kind: CaseName, spec: &CaseSpec, case: &CaseArgs, out: &OutputArgs) -> anyhow::Result<CaseResult> {
    match out.comm {
        CommArg::Inprocess => run_inprocess(spec),
        CommArg::Tcp => {
            let address = match &out.tcp_address {
                Some(a) => a.clone(),
                None => free_address()?,
            };
            run_processes(kind, spec, case.config.as_ref(), &address)
        }
    }
}

fn emit(rows: &mut [CaseResult], out: &OutputArgs) -> anyhow::Result<()> {
    if out.no_wall_time {
        for r in rows.iter_mut() {
            r.wall_time_s = 0.0;
        }
    }
    match &out.out {
        Some(path) => write_csv(File::create(path).with_context(|| format!("creating {}", path.display()))?, rows),
        None => write_csv(io::stdout().lock(), rows),
    }
}

fn strict_status(rows: &[CaseResult], strict: bool) -> ExitCode {
    if strict && rows.iter().any(|r| r.unconverged > 0) {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Cmd::RunOscillator(r) => run_case_cmd(CaseName::Oscillator, r),
        Cmd::RunHeat(r) => run_case_cmd(CaseName::Heat, r),
        Cmd::Sweep(s) => {
            let base = build_spec(s.case, &s.args)?;
            let axis = match s.axis {
                AxisArg::Window => Axis::Window,
                AxisArg::WindowFixedDt => Axis::WindowFixedDt,
                AxisArg::DtA => Axis::DtA,
                AxisArg::DtB => Axis::DtB,
                AxisArg::Degree => Axis::Degree,
            };
            if s.values.len() < 3 {
                return Err(config_err("a sweep needs at least three values"));
            }
            let mut rows = Vec::with_capacity(s.values.len());
            for &v in &s.values {
                let spec = sweep::apply(&base, axis, v).map_err(|e| config_err(e.to_string()))?;
                rows.push(run_one(s.case, &spec, &s.args, &s.output)?);
            }
            if let Some(p) = sweep::order_of(axis, &rows) {
                eprintln!("observed order of e_A: {p:.4}");
            }
            emit(&mut rows, &s.output)?;
            Ok(strict_status(&rows, s.output.strict))
        }
    }
}

fn run_case_cmd(kind: CaseName, r: RunArgs) -> anyhow::Result<ExitCode> {
    let spec = build_spec(kind, &r.case)?;
    let side = match r.role {
        RoleArg::Both => {
            let mut rows = vec![run_one(kind, &spec, &r.case, &r.output)?];
            emit(&mut rows, &r.output)?;
            return Ok(strict_status(&rows, r.output.strict));
        }
        RoleArg::A => Side::A,
        RoleArg::B => Side::B,
    };
    if r.output.comm != CommArg::Tcp {
        return Err(config_err("--role A or B needs --comm tcp"));
    }
    let address = r
        .output
        .tcp_address
        .clone()
        .ok_or_else(|| config_err("--role A or B needs --tcp-address"))?;
    let outcome = run_participant_tcp(&spec, side, &address)?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string(&Report::from(outcome))?)?;
    Ok(if r.output.strict && outcome.stats.unconverged > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some()
            || matches!(
                c.downcast_ref::<wavecpl::Error>(),
                Some(wavecpl::Error::Config(_) | wavecpl::Error::Validation(_))
            )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
