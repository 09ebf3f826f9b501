use std::process::{Command, Output};

fn harness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavecpl-harness"))
        .args(args)
        .output()
        .expect("spawn harness")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn unsupported_degree_is_config_error() {
    let o = harness(&["run-oscillator", "--degree", "7"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn non_dividing_step_is_config_error() {
    let o = harness(&["run-oscillator", "--window", "0.1", "--dt-a", "0.03"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_config_file_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    let o = harness(&["run-oscillator", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn strict_reports_unconverged_windows() {
    // plain Gauss-Seidel at this window size never meets the 1e-10 criterion
    let args = ["run-oscillator", "--window", "0.2", "--degree", "0", "--substeps", "off", "--no-wall-time"];
    assert_eq!(code(&harness(&args)), 0);
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(code(&harness(&strict)), 3);
}

#[test]
fn writes_single_row_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let o = harness(&[
        "run-oscillator",
        "--window",
        "0.1",
        "--degree",
        "1",
        "--no-wall-time",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("time_window_size,dt_A,dt_B,degree,e_A,e_B,avg_iterations,wall_time_s")
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..4], &["0.1", "0.02", "0.001", "1"]);
    let e_a: f64 = row[4].parse().unwrap();
    assert!(e_a > 0.0 && e_a < 0.1, "{e_a}");
    assert_eq!(row[7], "0.0");
    assert!(lines.next().is_none());
}

#[test]
fn sweep_needs_three_values() {
    let o = harness(&["sweep", "--case", "oscillator", "--axis", "window", "--values", "0.1,0.05"]);
    assert_ne!(code(&o), 0);
}
