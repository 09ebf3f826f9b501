//! Under-relaxation and interface quasi-Newton (IQN-ILS) acceleration of
//! window iterates.
//!
//! Iterates are flattened onto a per-window auxiliary grid, accelerated as
//! plain vectors and written back into storages.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::storage::{same_time, Sample, Storage};
use crate::waveform::Waveform;

pub const DEFAULT_OMEGA: f64 = 0.5;
pub const DEFAULT_FILTER_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Constant,
    IqnIlsFull,
    IqnIlsReduced,
}

impl Variant {
    pub fn is_reduced(self) -> bool {
        self == Variant::IqnIlsReduced
    }
}

/// Fixed time grid of the unknowns in one window. Excludes the window start.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryGrid {
    times: Vec<f64>,
}

impl AuxiliaryGrid {
    /// Union of the stample times of `storages`, without the window start.
    pub fn from_storages(storages: &[&Storage], window_start: f64) -> Self {
        let mut times: Vec<f64> = storages
            .iter()
            .flat_map(|s| s.times())
            .filter(|&t| t > window_start && !same_time(t, window_start))
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| same_time(*a, *b));
        Self { times }
    }

    pub fn new(times: Vec<f64>) -> Self {
        Self { times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn end(&self) -> Option<f64> {
        self.times.last().copied()
    }
}

/// Concatenates the accelerated fields into one vector, field by field.
///
/// The full variant evaluates each waveform at every grid time; the reduced
/// variant only at the window end.
pub fn flatten(storages: &[&Storage], grid: &AuxiliaryGrid, variant: Variant) -> Result<Vec<f64>> {
    let Some(end) = grid.end() else {
        return Err(validation("auxiliary grid is empty"));
    };
    let mut out = Vec::new();
    for storage in storages {
        let w = Waveform::build(storage, storage.degree())?;
        let times: &[f64] = if variant.is_reduced() {
            std::slice::from_ref(&end)
        } else {
            grid.times()
        };
        let n = out.len();
        out.resize(n + times.len() * w.dim(), 0.0);
        for (i, &t) in times.iter().enumerate() {
            let at = n + i * w.dim();
            w.evaluate_into(t, &mut out[at..at + w.dim()])?;
        }
    }
    Ok(out)
}

/// Vector of the same layout as [`flatten`] holding each field's window-start
/// sample at every slot. This is the constant initial guess of a window.
pub fn flatten_constant(storages: &[&Storage], grid: &AuxiliaryGrid, variant: Variant) -> Result<Vec<f64>> {
    let slots = if variant.is_reduced() { 1 } else { grid.times().len() };
    let mut out = Vec::new();
    for storage in storages {
        let first = storage
            .first()
            .ok_or_else(|| validation("cannot flatten an empty storage"))?;
        for _ in 0..slots {
            out.extend_from_slice(first.sample.values());
        }
    }
    Ok(out)
}

/// Writes an accelerated vector back into the field storages.
///
/// Full variant: each storage becomes its window-start stample plus the grid
/// values. Reduced variant: only the window-end sample is replaced.
pub fn resample_to_storage(
    x_new: &[f64],
    grid: &AuxiliaryGrid,
    variant: Variant,
    storages: &mut [&mut Storage],
) -> Result<()> {
    let Some(end) = grid.end() else {
        return Err(validation("auxiliary grid is empty"));
    };
    let slots = if variant.is_reduced() { 1 } else { grid.times().len() };
    let mut offset = 0;
    for storage in storages.iter_mut() {
        let dim = storage
            .sample_len()
            .ok_or_else(|| validation("cannot resample into an empty storage"))?;
        let needed = offset + slots * dim;
        if x_new.len() < needed {
            return Err(validation(format!(
                "accelerated vector has {} entries, need at least {needed}",
                x_new.len()
            )));
        }
        let chunk = &x_new[offset..needed];
        offset = needed;
        if variant.is_reduced() {
            storage.set_sample_at_time(end, Sample::from_vec_unchecked(chunk.to_vec()))?;
        } else {
            let start = storage.first().map(|s| s.time).unwrap_or(end);
            storage.trim_after(start);
            for (i, &t) in grid.times().iter().enumerate() {
                let values = chunk[i * dim..(i + 1) * dim].to_vec();
                storage.set_sample_at_time(t, Sample::from_vec_unchecked(values))?;
            }
        }
    }
    if offset != x_new.len() {
        return Err(validation(format!(
            "accelerated vector has {} entries, fields use {offset}",
            x_new.len()
        )));
    }
    Ok(())
}

/// Iteration history of one window.
#[derive(Debug, Clone)]
pub struct AccelerationState {
    variant: Variant,
    omega: f64,
    filter_eps: f64,
    prev_residual: Option<Vec<f64>>,
    prev_x_tilde: Option<Vec<f64>>,
    /// Newest column first.
    v_cols: Vec<Vec<f64>>,
    w_cols: Vec<Vec<f64>>,
    filtered: usize,
}

impl AccelerationState {
    pub fn new(variant: Variant, omega: f64, filter_eps: f64) -> Result<Self> {
        if !(omega > 0.0 && omega <= 1.0) {
            return Err(crate::error::config(format!(
                "relaxation factor must lie in (0, 1], got {omega}"
            )));
        }
        if !(filter_eps >= 0.0 && filter_eps.is_finite()) {
            return Err(crate::error::config(format!(
                "filter threshold must be finite and non-negative, got {filter_eps}"
            )));
        }
        Ok(Self {
            variant,
            omega,
            filter_eps,
            prev_residual: None,
            prev_x_tilde: None,
            v_cols: Vec::new(),
            w_cols: Vec::new(),
            filtered: 0,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Number of stored difference columns.
    pub fn columns(&self) -> usize {
        self.v_cols.len()
    }

    /// Columns dropped by the QR filter since construction.
    pub fn filtered_columns(&self) -> usize {
        self.filtered
    }

    /// Forgets the window history.
    pub fn reset(&mut self) {
        self.prev_residual = None;
        self.prev_x_tilde = None;
        self.v_cols.clear();
        self.w_cols.clear();
    }

    /// Computes the next iterate from the previous one and the new
    /// un-accelerated iterate.
    pub fn accelerate(&mut self, x_old: &[f64], x_tilde: &[f64]) -> Result<Vec<f64>> {
        if x_old.len() != x_tilde.len() {
            return Err(validation(format!(
                "iterate lengths differ: {} vs {}",
                x_old.len(),
                x_tilde.len()
            )));
        }
        let residual: Vec<f64> = x_tilde.iter().zip(x_old).map(|(a, b)| a - b).collect();
        let relaxed =
            |omega: f64| -> Vec<f64> { x_old.iter().zip(&residual).map(|(x, r)| x + omega * r).collect() };
        if self.variant == Variant::Constant {
            return Ok(relaxed(self.omega));
        }

        if let (Some(r_prev), Some(xt_prev)) = (&self.prev_residual, &self.prev_x_tilde) {
            if r_prev.len() != residual.len() {
                return Err(validation("iterate length changed within a window"));
            }
            let dv: Vec<f64> = residual.iter().zip(r_prev).map(|(a, b)| a - b).collect();
            let dw: Vec<f64> = x_tilde.iter().zip(xt_prev).map(|(a, b)| a - b).collect();
            self.v_cols.insert(0, dv);
            self.w_cols.insert(0, dw);
        }
        self.prev_residual = Some(residual.clone());
        self.prev_x_tilde = Some(x_tilde.to_vec());

        if self.v_cols.is_empty() {
            return Ok(relaxed(self.omega));
        }
        let (q, r, kept) = filtered_qr(&self.v_cols, self.filter_eps);
        if kept.len() < self.v_cols.len() {
            self.filtered += self.v_cols.len() - kept.len();
            self.v_cols = kept.iter().map(|&i| self.v_cols[i].clone()).collect();
            self.w_cols = kept.iter().map(|&i| self.w_cols[i].clone()).collect();
        }
        if kept.is_empty() {
            return Ok(relaxed(self.omega));
        }

        // R alpha = -Q^T r
        let m = kept.len();
        let rhs: Vec<f64> = q
            .iter()
            .map(|qc| -qc.iter().zip(&residual).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            let mut s = rhs[i];
            for j in i + 1..m {
                s -= r[i][j] * alpha[j];
            }
            alpha[i] = s / r[i][i];
        }
        let mut x = x_tilde.to_vec();
        for (a, w) in alpha.iter().zip(&self.w_cols) {
            for (xi, wi) in x.iter_mut().zip(w) {
                *xi += a * wi;
            }
        }
        Ok(x)
    }
}

/// Modified Gram-Schmidt QR of the columns `cols`, skipping columns whose
/// orthogonalized norm falls below `eps` times the Frobenius norm of the
/// whole matrix.
///
/// Returns the orthonormal columns, the upper-triangular factor (row-major,
/// over kept columns) and the indices of the kept columns.
fn filtered_qr(cols: &[Vec<f64>], eps: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>) {
    let frob = cols
        .iter()
        .flat_map(|c| c.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (idx, col) in cols.iter().enumerate() {
        let mut v = col.clone();
        let mut coeffs = Vec::with_capacity(q.len() + 1);
        for qc in &q {
            let d: f64 = qc.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(qc) {
                *vi -= d * qi;
            }
            coeffs.push(d);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || norm < eps * frob {
            continue;
        }
        for vi in &mut v {
            *vi /= norm;
        }
        coeffs.push(norm);
        q.push(v);
        r_cols.push(coeffs);
        kept.push(idx);
    }
    let m = kept.len();
    let mut r = vec![vec![0.0; m]; m];
    for (j, c) in r_cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            r[i][j] = v;
        }
    }
    (q, r, kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn storage(points: &[(f64, &[f64])]) -> Storage {
        let mut st = Storage::new(1);
        for (t, v) in points {
            st.set_sample_at_time(*t, Sample::new(v.to_vec()).unwrap()).unwrap();
        }
        st
    }

    #[test]
    fn flatten_full_and_reduced() {
        let st = storage(&[(0.0, &[1.0]), (0.5, &[2.0]), (1.0, &[3.0])]);
        let grid = AuxiliaryGrid::new(vec![0.5, 1.0]);
        assert_eq!(flatten(&[&st], &grid, Variant::IqnIlsFull).unwrap(), vec![2.0, 3.0]);
        assert_eq!(flatten(&[&st], &grid, Variant::IqnIlsReduced).unwrap(), vec![3.0]);
    }

    #[test]
    fn flatten_keeps_field_order() {
        let a = storage(&[(0.0, &[0.0]), (1.0, &[1.0])]);
        let b = storage(&[(0.0, &[0.0]), (1.0, &[4.0])]);
        let grid = AuxiliaryGrid::new(vec![1.0]);
        assert_eq!(flatten(&[&a, &b], &grid, Variant::IqnIlsReduced).unwrap(), vec![1.0, 4.0]);
    }

    #[test]
    fn grid_excludes_window_start() {
        let st = storage(&[(0.0, &[1.0]), (0.5, &[2.0]), (1.0, &[3.0])]);
        let grid = AuxiliaryGrid::from_storages(&[&st], 0.0);
        assert_eq!(grid.times(), &[0.5, 1.0]);
    }

    #[test]
    fn resample_full_rebuilds_storage() {
        let mut st = storage(&[(0.0, &[5.0]), (1.0, &[6.0])]);
        let grid = AuxiliaryGrid::new(vec![1.0]);
        resample_to_storage(&[7.0], &grid, Variant::IqnIlsFull, &mut [&mut st]).unwrap();
        assert_eq!(st, storage(&[(0.0, &[5.0]), (1.0, &[7.0])]));
    }

    #[test]
    fn resample_reduced_keeps_interior() {
        let mut st = storage(&[(0.0, &[5.0]), (0.5, &[6.0]), (1.0, &[8.0])]);
        let grid = AuxiliaryGrid::new(vec![0.5, 1.0]);
        resample_to_storage(&[7.0], &grid, Variant::IqnIlsReduced, &mut [&mut st]).unwrap();
        assert_eq!(st, storage(&[(0.0, &[5.0]), (0.5, &[6.0]), (1.0, &[7.0])]));
    }

    #[test]
    fn resample_identity_leaves_values() {
        let before = storage(&[(0.0, &[1.0]), (0.25, &[2.0]), (1.0, &[-3.0])]);
        let grid = AuxiliaryGrid::from_storages(&[&before], 0.0);
        let x_tilde = flatten(&[&before], &grid, Variant::IqnIlsFull).unwrap();
        let mut acc = AccelerationState::new(Variant::Constant, 1.0, DEFAULT_FILTER_EPS).unwrap();
        let x_old = flatten_constant(&[&before], &grid, Variant::IqnIlsFull).unwrap();
        let x = acc.accelerate(&x_old, &x_tilde).unwrap();
        let mut after = before.clone();
        resample_to_storage(&x, &grid, Variant::IqnIlsFull, &mut [&mut after]).unwrap();
        assert_eq!(after, before);
    }

    #[test]
    fn constant_relaxation() {
        let mut acc = AccelerationState::new(Variant::Constant, 0.5, DEFAULT_FILTER_EPS).unwrap();
        assert_eq!(acc.accelerate(&[0.0], &[2.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn scalar_secant_step_is_exact() {
        let mut acc = AccelerationState::new(Variant::IqnIlsFull, 0.5, DEFAULT_FILTER_EPS).unwrap();
        let map = |x: f64| 0.5 * x + 1.0;
        let x1 = acc.accelerate(&[0.0], &[map(0.0)]).unwrap()[0];
        assert_eq!(x1, 0.5);
        let x2 = acc.accelerate(&[x1], &[map(x1)]).unwrap()[0];
        assert!((x2 - 2.0).abs() < 1e-15, "{x2}");
    }

    /// Runs IQN-ILS on x -> a x + b from zero and returns the iterates.
    fn iterate_affine(a: &[Vec<f64>], b: &[f64], iters: usize) -> Vec<Vec<f64>> {
        let d = b.len();
        let mut acc = AccelerationState::new(Variant::IqnIlsFull, 0.5, DEFAULT_FILTER_EPS).unwrap();
        let mut x = vec![0.0; d];
        let mut out = Vec::new();
        for _ in 0..iters {
            let xt: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| a[i][j] * x[j]).sum::<f64>() + b[i])
                .collect();
            x = acc.accelerate(&x, &xt).unwrap();
            out.push(x.clone());
        }
        out
    }

    #[test]
    fn diagonal_affine_map_converges() {
        let a = vec![vec![0.5, 0.0], vec![0.0, -0.25]];
        let b = [1.0, 1.0];
        let exact = [2.0, 0.8];
        let iterates = iterate_affine(&a, &b, 4);
        let err: f64 = iterates[3]
            .iter()
            .zip(&exact)
            .map(|(x, e)| (x - e).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn degenerate_columns_fall_back_to_relaxation() {
        let mut acc = AccelerationState::new(Variant::IqnIlsFull, 0.5, DEFAULT_FILTER_EPS).unwrap();
        acc.accelerate(&[0.0], &[1.0]).unwrap();
        // Same residual again: the difference column is zero.
        let x = acc.accelerate(&[1.0], &[2.0]).unwrap();
        assert_eq!(x, vec![1.5]);
        assert_eq!(acc.columns(), 0);
        assert_eq!(acc.filtered_columns(), 1);
    }

    #[test]
    fn reset_clears_history() {
        let mut acc = AccelerationState::new(Variant::IqnIlsReduced, 0.5, DEFAULT_FILTER_EPS).unwrap();
        acc.accelerate(&[0.0], &[1.0]).unwrap();
        acc.accelerate(&[0.5], &[1.25]).unwrap();
        assert_eq!(acc.columns(), 1);
        acc.reset();
        assert_eq!(acc.columns(), 0);
        assert_eq!(acc.accelerate(&[0.0], &[1.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn bad_omega_is_rejected() {
        assert!(AccelerationState::new(Variant::Constant, 0.0, 1e-10).is_err());
        assert!(AccelerationState::new(Variant::Constant, 1.5, 1e-10).is_err());
    }

    proptest! {
        #[test]
        fn unit_omega_constant_is_identity(xs in proptest::collection::vec(-1e3..1e3f64, 1..10)) {
            let mut acc = AccelerationState::new(Variant::Constant, 1.0, DEFAULT_FILTER_EPS).unwrap();
            let old = vec![0.0; xs.len()];
            prop_assert_eq!(acc.accelerate(&old, &xs).unwrap(), xs);
        }

        #[test]
        fn scalar_secant_exactness(a in -0.9..0.9f64, b in -10.0..10.0f64) {
            let iterates = iterate_affine(&[vec![a]], &[b], 2);
            let exact = b / (1.0 - a);
            prop_assert!((iterates[1][0] - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
        }

        #[test]
        fn history_grows_by_one_per_iteration(seed in proptest::collection::vec(-1.0..1.0f64, 4)) {
            let mut acc = AccelerationState::new(Variant::IqnIlsFull, 0.5, 0.0).unwrap();
            let a = [[0.3 + 0.1 * seed[0], 0.1 * seed[1]], [0.1 * seed[2], -0.2 + 0.1 * seed[3]]];
            let mut x = vec![0.0, 0.0];
            for k in 1..=3 {
                let xt = vec![a[0][0] * x[0] + a[0][1] * x[1] + 1.0, a[1][0] * x[0] + a[1][1] * x[1] - 1.0];
                x = acc.accelerate(&x, &xt).unwrap();
                prop_assert_eq!(acc.columns(), k - 1);
            }
        }
    }
}
