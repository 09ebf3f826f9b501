//! Parameter sweeps and observed-order fitting.

use crate::case::{run_inprocess, CaseResult, CaseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Window size; steps per window stay fixed so step sizes scale with it.
    Window,
    /// Window size with both step sizes held fixed.
    WindowFixedDt,
    DtA,
    DtB,
    Degree,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_order(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Applies one sweep value to a base spec.
pub fn apply(base: &CaseSpec, axis: Axis, value: f64) -> anyhow::Result<CaseSpec> {
    let mut s = base.clone();
    let steps = |window: f64, dt: f64| -> anyhow::Result<usize> {
        let n = (window / dt).round();
        anyhow::ensure!(
            n >= 1.0 && (n * dt - window).abs() <= 1e-9 * window,
            "step size {dt} does not divide the window {window}"
        );
        Ok(n as usize)
    };
    match axis {
        Axis::Window => s.window = value,
        Axis::WindowFixedDt => {
            s.window = value;
            s.steps_a = steps(value, base.dt_a())?;
            s.steps_b = steps(value, base.dt_b())?;
        }
        Axis::DtA => s.steps_a = steps(base.window, value)?,
        Axis::DtB => s.steps_b = steps(base.window, value)?,
        Axis::Degree => s.degree = value as usize,
    }
    Ok(s)
}

/// The x value used for order fitting along an axis.
pub fn abscissa(axis: Axis, row: &CaseResult) -> f64 {
    match axis {
        Axis::Window | Axis::WindowFixedDt | Axis::Degree => row.time_window_size,
        Axis::DtA => row.dt_a,
        Axis::DtB => row.dt_b,
    }
}

/// Runs every value in process; returns the rows and the fitted order of
/// `e_A` (None for the degree axis).
pub fn sweep(base: &CaseSpec, axis: Axis, values: &[f64]) -> anyhow::Result<(Vec<CaseResult>, Option<f64>)> {
    anyhow::ensure!(values.len() >= 3, "a sweep needs at least three values");
    let rows = values
        .iter()
        .map(|&v| run_inprocess(&apply(base, axis, v)?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((rows.clone(), order_of(axis, &rows)))
}

pub fn order_of(axis: Axis, rows: &[CaseResult]) -> Option<f64> {
    if axis == Axis::Degree {
        return None;
    }
    let x: Vec<f64> = rows.iter().map(|r| abscissa(axis, r)).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.e_a).collect();
    Some(fit_order(&x, &y))
}
