//! Case description, coupling configuration and the per-participant driver loop.

use std::thread;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;
use wavecpl::acceleration::Variant;
use wavecpl::api::config::{CommMode, SchemeKind};
use wavecpl::cplscheme::Stats;
use wavecpl::{comm, CouplingConfig, Participant};

use crate::heat::{HeatIntegrator, HeatParams, HeatSide, HeatSolver};
use crate::oscillator::{MassSolver, OscillatorParams, Side};

/// Reads the coupled field at a time relative to the participant's current time.
pub type Reader<'a> = dyn FnMut(f64) -> wavecpl::Result<Vec<f64>> + 'a;

/// A single-vertex solver plugged into the driver loop.
///
/// Cloning is the checkpoint.
pub trait CoupledSolver: Clone {
    fn mesh(&self) -> &'static str;
    fn write_data(&self) -> &'static str;
    fn read_data(&self) -> &'static str;
    /// Coupling value of the current state.
    fn output(&self) -> Vec<f64>;
    /// Called once after initialize, before the first step.
    fn start(&mut self, _read: &mut Reader) -> anyhow::Result<()> {
        Ok(())
    }
    fn step(&mut self, dt: f64, read: &mut Reader) -> anyhow::Result<()>;
    /// Error of the current state against the reference solution.
    fn error(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Case {
    Oscillator(OscillatorParams),
    Heat(HeatParams, HeatIntegrator),
}

impl Case {
    pub fn t_end(&self) -> f64 {
        match self {
            Case::Oscillator(p) => p.t_end,
            Case::Heat(p, _) => p.t_end,
        }
    }

    fn names(&self) -> Names {
        match self {
            Case::Oscillator(_) => Names {
                mesh_a: "Mass-A-Mesh",
                mesh_b: "Mass-B-Mesh",
                data_a: "Displacement-A",
                data_b: "Displacement-B",
                vertex: 0.0,
            },
            Case::Heat(..) => Names {
                mesh_a: "Dirichlet-Mesh",
                mesh_b: "Neumann-Mesh",
                data_a: "Flux",
                data_b: "Temperature",
                vertex: 1.0,
            },
        }
    }
}

struct Names {
    mesh_a: &'static str,
    mesh_b: &'static str,
    /// Written by A.
    data_a: &'static str,
    /// Written by B.
    data_b: &'static str,
    vertex: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub case: Case,
    pub window: f64,
    pub steps_a: usize,
    pub steps_b: usize,
    pub degree: usize,
    pub substeps: bool,
    pub scheme: SchemeKind,
    pub acceleration: Option<Variant>,
    pub omega: f64,
    pub limit: f64,
    pub max_iterations: usize,
    pub rho_inf: f64,
    /// User-supplied coupling configuration replacing the generated one.
    pub config: Option<CouplingConfig>,
}

impl CaseSpec {
    /// Serial-implicit oscillator without acceleration.
    pub fn oscillator(window: f64, steps_a: usize, steps_b: usize, degree: usize, substeps: bool) -> Self {
        Self {
            case: Case::Oscillator(OscillatorParams::default()),
            window,
            steps_a,
            steps_b,
            degree,
            substeps,
            scheme: SchemeKind::SerialImplicit,
            acceleration: None,
            omega: 0.5,
            limit: 1e-10,
            max_iterations: 100,
            rho_inf: 0.9,
            config: None,
        }
    }

    /// Serial-implicit heat case with full IQN-ILS on the temperature.
    pub fn heat(integrator: HeatIntegrator, window: f64, steps: usize, degree: usize) -> Self {
        Self {
            case: Case::Heat(HeatParams::default(), integrator),
            window,
            steps_a: steps,
            steps_b: steps,
            degree,
            substeps: true,
            scheme: SchemeKind::SerialImplicit,
            acceleration: Some(Variant::IqnIlsFull),
            omega: 0.5,
            limit: 1e-12,
            max_iterations: 100,
            rho_inf: 0.9,
            config: None,
        }
    }

    pub fn dt_a(&self) -> f64 {
        self.window() / self.steps_a as f64
    }

    pub fn dt_b(&self) -> f64 {
        self.window() / self.steps_b as f64
    }

    /// Window size in effect, from the supplied configuration if any.
    pub fn window(&self) -> f64 {
        self.config.as_ref().map_or(self.window, |c| c.coupling_scheme.time_window_size)
    }

    fn degree_in_effect(&self) -> usize {
        let names = self.case.names();
        self.config
            .as_ref()
            .and_then(|c| c.data(names.data_a).map(|d| d.waveform_degree))
            .unwrap_or(self.degree)
    }

    /// The coupling configuration; `tcp` sets a socket m2n block with A accepting.
    pub fn coupling_config(&self, tcp: Option<&str>) -> anyhow::Result<CouplingConfig> {
        let mut cfg = match &self.config {
            Some(c) => c.clone(),
            None => self.generate()?,
        };
        if let Some(address) = tcp {
            cfg.m2n.mode = CommMode::Tcp;
            cfg.m2n.acceptor = Some("A".into());
            cfg.m2n.connector = Some("B".into());
            cfg.m2n.address = Some(address.into());
        }
        Ok(cfg)
    }

    fn generate(&self) -> anyhow::Result<CouplingConfig> {
        let n = self.case.names();
        let t_end = self.case.t_end();
        let windows = (t_end / self.window - 1e-12).ceil().max(1.0) as usize;
        let read_mapping = |from: &str, to: &str| {
            json!([{"kind": "nearest-neighbor", "direction": "read", "from": from, "to": to, "constraint": "consistent"}])
        };
        let mut scheme = json!({
            "kind": self.scheme,
            "first": "A",
            "second": "B",
            "max_time_windows": windows,
            "time_window_size": self.window,
            "max_time": t_end,
            "max_iterations": if self.scheme.is_implicit() { self.max_iterations } else { 1 },
            "exchanges": [
                {"data": n.data_a, "mesh": n.mesh_a, "from": "A", "to": "B", "substeps": self.substeps, "initialize": true},
                {"data": n.data_b, "mesh": n.mesh_b, "from": "B", "to": "A", "substeps": self.substeps, "initialize": true}
            ]
        });
        if self.scheme.is_implicit() {
            scheme["convergence_measures"] = json!([
                {"data": n.data_a, "mesh": n.mesh_a, "relative_limit": self.limit},
                {"data": n.data_b, "mesh": n.mesh_b, "relative_limit": self.limit}
            ]);
            if let Some(v) = self.acceleration {
                let mut data = vec![json!({"name": n.data_b, "mesh": n.mesh_b})];
                if self.scheme == SchemeKind::ParallelImplicit {
                    data.push(json!({"name": n.data_a, "mesh": n.mesh_a}));
                }
                scheme["acceleration"] = json!({"variant": v, "omega": self.omega, "data": data});
            }
        }
        let doc = json!({
            "data": [
                {"name": n.data_a, "rank": "scalar", "waveform_degree": self.degree},
                {"name": n.data_b, "rank": "scalar", "waveform_degree": self.degree}
            ],
            "meshes": [
                {"name": n.mesh_a, "dimensions": 1, "use_data": [n.data_a, n.data_b]},
                {"name": n.mesh_b, "dimensions": 1, "use_data": [n.data_a, n.data_b]}
            ],
            "participants": [
                {"name": "A", "provide_meshes": [n.mesh_a], "receive_meshes": [{"name": n.mesh_b, "from": "B"}],
                 "write_data": [{"name": n.data_a, "mesh": n.mesh_a}], "read_data": [{"name": n.data_b, "mesh": n.mesh_a}],
                 "mappings": read_mapping(n.mesh_b, n.mesh_a)},
                {"name": "B", "provide_meshes": [n.mesh_b], "receive_meshes": [{"name": n.mesh_a, "from": "A"}],
                 "write_data": [{"name": n.data_b, "mesh": n.mesh_b}], "read_data": [{"name": n.data_a, "mesh": n.mesh_b}],
                 "mappings": read_mapping(n.mesh_a, n.mesh_b)}
            ],
            "coupling_scheme": scheme
        });
        Ok(wavecpl::parse_config(&doc.to_string())?)
    }
}

/// What one participant reports after its run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipantOutcome {
    pub max_error: f64,
    pub stats: Stats,
    /// Lowest waveform degree read during accepted iterations, after the
    /// reduction for storages with few stamples.
    pub min_read_degree: usize,
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseResult {
    pub time_window_size: f64,
    #[serde(rename = "dt_A")]
    pub dt_a: f64,
    #[serde(rename = "dt_B")]
    pub dt_b: f64,
    pub degree: usize,
    #[serde(rename = "e_A")]
    pub e_a: f64,
    #[serde(rename = "e_B")]
    pub e_b: f64,
    pub avg_iterations: f64,
    pub wall_time_s: f64,
    /// Windows accepted without convergence; not part of the CSV.
    #[serde(skip)]
    pub unconverged: usize,
    #[serde(skip)]
    pub min_read_degree: usize,
}

impl CaseResult {
    pub fn combine(spec: &CaseSpec, a: ParticipantOutcome, b: ParticipantOutcome, wall_time_s: f64) -> Self {
        Self {
            time_window_size: spec.window(),
            dt_a: spec.dt_a(),
            dt_b: spec.dt_b(),
            degree: spec.degree_in_effect(),
            e_a: a.max_error,
            e_b: b.max_error,
            avg_iterations: a.stats.average_iterations(),
            wall_time_s,
            unconverged: a.stats.unconverged.max(b.stats.unconverged),
            min_read_degree: a.min_read_degree.min(b.min_read_degree),
        }
    }
}

/// Writes rows with the fixed header.
pub fn write_csv<W: std::io::Write>(out: W, rows: &[CaseResult]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "time_window_size",
            "dt_A",
            "dt_B",
            "degree",
            "e_A",
            "e_B",
            "avg_iterations",
            "wall_time_s",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one participant of the case over the given participant handle.
pub fn run_participant(spec: &CaseSpec, side: Side, p: Participant) -> anyhow::Result<ParticipantOutcome> {
    let steps = match side {
        Side::A => spec.steps_a,
        Side::B => spec.steps_b,
    };
    anyhow::ensure!(steps >= 1, "steps per window must be at least one");
    let vertex = spec.case.names().vertex;
    match spec.case {
        Case::Oscillator(params) => drive(p, MassSolver::new(side, params, spec.rho_inf), steps, vertex),
        Case::Heat(params, integrator) => {
            let hs = match side {
                Side::A => HeatSide::Dirichlet,
                Side::B => HeatSide::Neumann,
            };
            drive(p, HeatSolver::new(hs, params, integrator)?, steps, vertex)
        }
    }
}

/// Runs one side over TCP with its own socket; A accepts, B connects.
pub fn run_participant_tcp(spec: &CaseSpec, side: Side, address: &str) -> anyhow::Result<ParticipantOutcome> {
    let cfg = spec.coupling_config(Some(address))?;
    let p = Participant::new(side_name(side), cfg)?;
    run_participant(spec, side, p)
}

pub fn side_name(side: Side) -> &'static str {
    match side {
        Side::A => "A",
        Side::B => "B",
    }
}

/// Runs both participants on two threads over an in-process channel.
pub fn run_inprocess(spec: &CaseSpec) -> anyhow::Result<CaseResult> {
    let cfg = spec.coupling_config(None)?;
    let (ca, cb) = comm::pair();
    let pa = Participant::with_channel("A", cfg.clone(), Box::new(ca))?;
    let pb = Participant::with_channel("B", cfg, Box::new(cb))?;
    let started = Instant::now();
    let (sa, sb) = (spec.clone(), spec.clone());
    let ta = thread::spawn(move || run_participant(&sa, Side::A, pa));
    let tb = thread::spawn(move || run_participant(&sb, Side::B, pb));
    let ra = ta.join().map_err(|_| anyhow!("participant A panicked"))?;
    let rb = tb.join().map_err(|_| anyhow!("participant B panicked"))?;
    let wall = started.elapsed().as_secs_f64();
    let (a, b) = match (ra, rb) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    Ok(CaseResult::combine(spec, a, b, wall))
}

fn drive<S: CoupledSolver>(
    mut p: Participant,
    mut solver: S,
    steps: usize,
    vertex: f64,
) -> anyhow::Result<ParticipantOutcome> {
    let (mesh, write, read) = (solver.mesh(), solver.write_data(), solver.read_data());
    let ids = p.set_mesh_vertices(mesh, &[vertex])?;
    if p.requires_initial_data() {
        p.write_data(mesh, write, &ids, &solver.output())?;
    }
    p.initialize().context("initialize")?;
    {
        let mut reader = |rel: f64| p.read_data(mesh, read, &ids, rel);
        solver.start(&mut reader)?;
    }
    let mut checkpoint = solver.clone();
    let mut step_in_window = 0;
    let mut window_errors: Vec<f64> = Vec::with_capacity(steps);
    let mut window_degree = usize::MAX;
    let mut max_error: f64 = 0.0;
    let mut min_read_degree = usize::MAX;
    while p.is_coupling_ongoing()? {
        if p.requires_writing_checkpoint()? {
            checkpoint = solver.clone();
        }
        let remaining = p.get_max_time_step_size()?;
        let dt = remaining / (steps - step_in_window.min(steps - 1)) as f64;
        {
            let mut reader = |rel: f64| p.read_data(mesh, read, &ids, rel);
            solver.step(dt, &mut reader)?;
        }
        let degree = p.effective_read_degree(mesh, read)?;
        p.write_data(mesh, write, &ids, &solver.output())?;
        p.advance(dt)?;
        if p.requires_reading_checkpoint()? {
            solver = checkpoint.clone();
            step_in_window = 0;
            window_errors.clear();
            window_degree = usize::MAX;
            continue;
        }
        window_errors.push(solver.error());
        window_degree = window_degree.min(degree);
        step_in_window += 1;
        if p.is_time_window_complete()? {
            max_error = window_errors.drain(..).fold(max_error, f64::max);
            min_read_degree = min_read_degree.min(window_degree);
            window_degree = usize::MAX;
            step_in_window = 0;
        }
    }
    let stats = p.stats();
    p.finalize()?;
    Ok(ParticipantOutcome { max_error, stats, min_read_degree })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_configs_validate() {
        for scheme in [SchemeKind::SerialExplicit, SchemeKind::SerialImplicit, SchemeKind::ParallelImplicit] {
            let mut s = CaseSpec::oscillator(0.1, 5, 100, 3, true);
            s.scheme = scheme;
            s.acceleration = Some(Variant::IqnIlsReduced);
            s.coupling_config(None).unwrap();
            let mut h = CaseSpec::heat(HeatIntegrator::CrankNicolson, 0.1, 5, 2);
            h.scheme = scheme;
            h.coupling_config(Some("127.0.0.1:1")).unwrap();
        }
    }

    #[test]
    fn window_count_covers_end_time() {
        let s = CaseSpec::oscillator(0.3, 1, 1, 1, false);
        let c = s.coupling_config(None).unwrap();
        assert_eq!(c.coupling_scheme.max_time_windows, 4);
        let s = CaseSpec::oscillator(0.2, 1, 1, 1, false);
        assert_eq!(s.coupling_config(None).unwrap().coupling_scheme.max_time_windows, 5);
    }

    #[test]
    fn csv_header_and_row() {
        let spec = CaseSpec::oscillator(0.1, 5, 100, 3, true);
        let o = ParticipantOutcome {
            max_error: 0.5,
            stats: Stats { windows: 2, iterations: 5, unconverged: 0 },
            min_read_degree: 3,
        };
        let row = CaseResult::combine(&spec, o, o, 0.0);
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "time_window_size,dt_A,dt_B,degree,e_A,e_B,avg_iterations,wall_time_s\n0.1,0.02,0.001,3,0.5,0.5,2.5,0.0\n"
        );
    }

    #[test]
    fn explicit_oscillator_runs_one_iteration_per_window() {
        let mut s = CaseSpec::oscillator(0.1, 5, 10, 1, true);
        s.scheme = SchemeKind::SerialExplicit;
        let r = run_inprocess(&s).unwrap();
        assert_eq!(r.avg_iterations, 1.0);
        assert!(r.e_a.is_finite() && r.e_a > 0.0);
    }
}
