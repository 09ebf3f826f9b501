//! B-spline interpolation of a [`Storage`] over the current window.
//!
//! Parameter sites are the stample times. The knot vector is clamped, with
//! interior knots placed by averaging `degree` consecutive sites, which keeps
//! the collocation matrix totally positive and banded. It is therefore
//! factored by banded elimination without pivoting. Evaluation uses de Boor's
//! recurrence.

use crate::error::{validation, Error, Result};
use crate::storage::{Sample, Storage};

/// Relative (to the window length) slack accepted at the domain ends.
pub const DOMAIN_EPS: f64 = 1e-12;

/// Highest interpolation degree the fixed-size evaluation buffers allow.
pub const MAX_DEGREE: usize = 7;

#[derive(Debug, Clone)]
enum Repr {
    /// One stample: the constant function, valid for any time.
    Constant(Vec<f64>),
    /// Degree zero: the value of the first stample at or after `t`.
    Hold { times: Vec<f64>, values: Vec<Vec<f64>> },
    Spline {
        knots: Vec<f64>,
        /// Row-major `(n + 1) x dim`.
        control: Vec<f64>,
        degree: usize,
    },
}

/// Interpolant of a storage's stamples, immutable once built.
#[derive(Debug, Clone)]
pub struct Waveform {
    repr: Repr,
    start: f64,
    end: f64,
    dim: usize,
}

impl Waveform {
    /// Interpolates `storage` with degree `min(degree, n)` where `n + 1` is the
    /// number of stamples.
    pub fn build(storage: &Storage, degree: usize) -> Result<Self> {
        let stamples = storage.stamples();
        let (first, last) = match (stamples.first(), stamples.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(validation("cannot build a waveform from an empty storage")),
        };
        if degree > MAX_DEGREE {
            return Err(validation(format!(
                "waveform degree {degree} exceeds the maximum of {MAX_DEGREE}"
            )));
        }
        let dim = first.sample.len();
        let n = stamples.len() - 1;
        let repr = if n == 0 {
            Repr::Constant(first.sample.values().to_vec())
        } else if degree == 0 {
            Repr::Hold {
                times: storage.times(),
                values: stamples
                    .iter()
                    .map(|s| s.sample.values().to_vec())
                    .collect(),
            }
        } else {
            let q = degree.min(n);
            let sites = storage.times();
            let knots = averaged_knots(&sites, q);
            let mut rhs = Vec::with_capacity((n + 1) * dim);
            for s in stamples {
                rhs.extend_from_slice(s.sample.values());
            }
            let control = solve_collocation(&knots, &sites, q, rhs, dim)?;
            Repr::Spline {
                knots,
                control,
                degree: q,
            }
        };
        Ok(Self {
            repr,
            start: first.time,
            end: last.time,
            dim,
        })
    }

    pub fn effective_degree(&self) -> usize {
        match &self.repr {
            Repr::Constant(_) | Repr::Hold { .. } => 0,
            Repr::Spline { degree, .. } => *degree,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    /// Values per sample.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Knot vector; empty for the constant and degree-zero forms.
    pub fn knots(&self) -> &[f64] {
        match &self.repr {
            Repr::Spline { knots, .. } => knots,
            _ => &[],
        }
    }

    /// Control point `i`; for the constant and degree-zero forms these are the
    /// stored samples themselves.
    pub fn control_point(&self, i: usize) -> Option<&[f64]> {
        match &self.repr {
            Repr::Constant(v) => (i == 0).then_some(v.as_slice()),
            Repr::Hold { values, .. } => values.get(i).map(Vec::as_slice),
            Repr::Spline { control, .. } => control.get(i * self.dim..(i + 1) * self.dim),
        }
    }

    pub fn evaluate(&self, t: f64) -> Result<Sample> {
        let mut out = vec![0.0; self.dim];
        self.evaluate_into(t, &mut out)?;
        Ok(Sample::from_vec_unchecked(out))
    }

    /// Like [`evaluate`](Self::evaluate) but writes into `out` (length [`dim`](Self::dim)).
    pub fn evaluate_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.dim);
        if let Repr::Constant(v) = &self.repr {
            out.copy_from_slice(v);
            return Ok(());
        }
        let tol = DOMAIN_EPS * (self.end - self.start);
        if !(t >= self.start - tol && t <= self.end + tol) {
            return Err(Error::Domain {
                t,
                start: self.start,
                end: self.end,
            });
        }
        let t = t.clamp(self.start, self.end);
        match &self.repr {
            Repr::Constant(_) => unreachable!(),
            Repr::Hold { times, values } => {
                let i = times
                    .partition_point(|&ti| ti < t - tol)
                    .min(times.len() - 1);
                out.copy_from_slice(&values[i]);
            }
            Repr::Spline {
                knots,
                control,
                degree,
            } => de_boor(knots, control, *degree, self.dim, t, out),
        }
        Ok(())
    }
}

/// Clamped knots with interior knots at running averages of `degree` sites.
fn averaged_knots(sites: &[f64], degree: usize) -> Vec<f64> {
    let n = sites.len() - 1;
    let mut knots = Vec::with_capacity(n + degree + 2);
    knots.extend(std::iter::repeat(sites[0]).take(degree + 1));
    for j in 1..=(n - degree) {
        let avg = sites[j..j + degree].iter().sum::<f64>() / degree as f64;
        knots.push(avg);
    }
    knots.extend(std::iter::repeat(sites[n]).take(degree + 1));
    knots
}

/// Knot span `mu` with `knots[mu] <= t < knots[mu + 1]`, clamped to the last
/// non-empty span.
fn find_span(knots: &[f64], degree: usize, n: usize, t: f64) -> usize {
    degree + knots[degree + 1..=n].partition_point(|&k| k <= t)
}

/// The `degree + 1` basis functions that are nonzero on span `mu`.
fn nonzero_basis(knots: &[f64], degree: usize, mu: usize, t: f64, out: &mut [f64]) {
    let mut left = [0.0; MAX_DEGREE + 1];
    let mut right = [0.0; MAX_DEGREE + 1];
    out[0] = 1.0;
    for j in 1..=degree {
        left[j] = t - knots[mu + 1 - j];
        right[j] = knots[mu + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

fn de_boor(knots: &[f64], control: &[f64], degree: usize, dim: usize, t: f64, out: &mut [f64]) {
    let n = knots.len() - degree - 2;
    let mu = find_span(knots, degree, n, t);
    let mut d = [0.0; MAX_DEGREE + 1];
    for c in 0..dim {
        for j in 0..=degree {
            d[j] = control[(mu - degree + j) * dim + c];
        }
        for r in 1..=degree {
            for j in (r..=degree).rev() {
                let i = mu - degree + j;
                let denom = knots[i + degree + 1 - r] - knots[i];
                let alpha = if denom > 0.0 {
                    (t - knots[i]) / denom
                } else {
                    0.0
                };
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
            }
        }
        out[c] = d[degree];
    }
}

/// Solves the banded collocation system `B c = rhs` for the control points.
fn solve_collocation(
    knots: &[f64],
    sites: &[f64],
    degree: usize,
    mut rhs: Vec<f64>,
    dim: usize,
) -> Result<Vec<f64>> {
    let rows = sites.len();
    let n = rows - 1;
    let mut spans = Vec::with_capacity(rows);
    let (mut kl, mut ku) = (0usize, 0usize);
    for (i, &t) in sites.iter().enumerate() {
        let mu = find_span(knots, degree, n, t);
        kl = kl.max(i.saturating_sub(mu - degree));
        ku = ku.max(mu.saturating_sub(i));
        spans.push(mu);
    }
    let width = kl + ku + 1;
    let mut band = vec![0.0; rows * width];
    let mut basis = [0.0; MAX_DEGREE + 1];
    for (i, (&t, &mu)) in sites.iter().zip(&spans).enumerate() {
        nonzero_basis(knots, degree, mu, t, &mut basis);
        for (k, &b) in basis[..=degree].iter().enumerate() {
            let col = mu - degree + k;
            band[i * width + col + kl - i] = b;
        }
    }
    let at = |i: usize, j: usize| i * width + j + kl - i;

    // Forward elimination; fill-in stays inside the band without pivoting.
    for k in 0..rows {
        let pivot = band[at(k, k)];
        if pivot.abs() < f64::MIN_POSITIVE {
            return Err(validation(
                "singular collocation matrix (stample times not distinct)",
            ));
        }
        for i in (k + 1)..=(k + kl).min(n) {
            let factor = band[at(i, k)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in k..=(k + ku).min(n) {
                band[at(i, j)] -= factor * band[at(k, j)];
            }
            for c in 0..dim {
                rhs[i * dim + c] -= factor * rhs[k * dim + c];
            }
        }
    }
    for k in (0..rows).rev() {
        for j in (k + 1)..=(k + ku).min(n) {
            let a = band[at(k, j)];
            for c in 0..dim {
                rhs[k * dim + c] -= a * rhs[j * dim + c];
            }
        }
        let pivot = band[at(k, k)];
        for c in 0..dim {
            rhs[k * dim + c] /= pivot;
        }
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn storage(points: &[(f64, f64)]) -> Storage {
        let mut st = Storage::new(3);
        for &(t, v) in points {
            st.set_sample_at_time(t, Sample::new(vec![v]).unwrap())
                .unwrap();
        }
        st
    }

    fn eval(w: &Waveform, t: f64) -> f64 {
        w.evaluate(t).unwrap().values()[0]
    }

    /// Cox-de Boor by its recursive definition, independent of `nonzero_basis`.
    fn basis_recursive(knots: &[f64], i: usize, p: usize, t: f64, last: bool) -> f64 {
        if p == 0 {
            let (a, b) = (knots[i], knots[i + 1]);
            return if (a <= t && t < b) || (last && a < b && t == b) {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * basis_recursive(knots, i, p - 1, t, last);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - t) / d2 * basis_recursive(knots, i + 1, p - 1, t, last);
        }
        v
    }

    /// Dense oracle: build the full collocation matrix from the recursive basis
    /// and solve with LU, then evaluate as a sum of basis functions.
    fn dense_oracle(sites: &[f64], values: &[f64], p: usize, probe: f64) -> f64 {
        let n = sites.len() - 1;
        let q = p.min(n);
        let mut knots = vec![sites[0]; q + 1];
        for j in 1..=(n - q) {
            knots.push(sites[j..j + q].iter().sum::<f64>() / q as f64);
        }
        knots.extend(vec![sites[n]; q + 1]);
        let end = sites[n];
        let a = DMatrix::from_fn(n + 1, n + 1, |i, j| {
            basis_recursive(&knots, j, q, sites[i], sites[i] == end)
        });
        let c = a
            .lu()
            .solve(&DVector::from_column_slice(values))
            .expect("nonsingular");
        (0..=n)
            .map(|j| c[j] * basis_recursive(&knots, j, q, probe, probe == end))
            .sum()
    }

    #[test]
    fn single_stample_is_constant() {
        let w = Waveform::build(&storage(&[(0.0, 3.0)]), 3).unwrap();
        assert_eq!(w.effective_degree(), 0);
        assert_eq!(eval(&w, 0.0), 3.0);
        assert_eq!(eval(&w, 0.7), 3.0);
    }

    #[test]
    fn two_points_reduce_to_line() {
        let w = Waveform::build(&storage(&[(0.0, 0.0), (1.0, 2.0)]), 3).unwrap();
        assert_eq!(w.effective_degree(), 1);
        assert!((eval(&w, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_waveform_midpoint() {
        let w = Waveform::build(&storage(&[(0.0, 0.0), (2.0, 4.0)]), 1).unwrap();
        assert!((eval(&w, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cubic_reproduces_t_cubed() {
        let pts: Vec<(f64, f64)> = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]
            .iter()
            .map(|&t| (t, t * t * t))
            .collect();
        // Independent route: the 4x4 Vandermonde system.
        let vdm = DMatrix::from_fn(4, 4, |i, j| pts[i].0.powi(j as i32));
        let coef = vdm
            .lu()
            .solve(&DVector::from_iterator(4, pts.iter().map(|p| p.1)))
            .unwrap();
        let oracle: f64 = (0..4).map(|j| coef[j] * 0.5f64.powi(j as i32)).sum();
        assert!((oracle - 0.125).abs() < 1e-14);

        let w = Waveform::build(&storage(&pts), 3).unwrap();
        assert_eq!(w.effective_degree(), 3);
        assert!((eval(&w, 0.5) - 0.125).abs() < 1e-14);
    }

    #[test]
    fn evaluation_at_end_returns_last_sample() {
        let pts = [(0.0, 1.0), (0.2, -1.0), (0.3, 4.0), (0.9, 2.5), (1.0, 7.0)];
        for p in [0, 1, 2, 3, 5] {
            let w = Waveform::build(&storage(&pts), p).unwrap();
            assert!((eval(&w, 1.0) - 7.0).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn cubic_sine_matches_dense_oracle() {
        let sites: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let vals: Vec<f64> = sites
            .iter()
            .map(|t| (2.0 * std::f64::consts::PI * t).sin())
            .collect();
        let pts: Vec<(f64, f64)> = sites.iter().copied().zip(vals.iter().copied()).collect();
        let w = Waveform::build(&storage(&pts), 3).unwrap();
        for probe in [0.1, 0.37, 0.5, 0.81, 0.99] {
            let expected = dense_oracle(&sites, &vals, 3, probe);
            assert!(
                (eval(&w, probe) - expected).abs() < 1e-12,
                "probe {probe}: {} vs {expected}",
                eval(&w, probe)
            );
        }
    }

    #[test]
    fn degree_zero_holds_next_stample() {
        let w = Waveform::build(&storage(&[(0.0, 1.0), (0.5, 2.0), (1.0, 3.0)]), 0).unwrap();
        assert_eq!(eval(&w, 0.0), 1.0);
        assert_eq!(eval(&w, 1e-9), 2.0);
        assert_eq!(eval(&w, 0.5), 2.0);
        assert_eq!(eval(&w, 0.75), 3.0);
        assert_eq!(eval(&w, 1.0), 3.0);
    }

    #[test]
    fn outside_domain_is_rejected() {
        let w = Waveform::build(&storage(&[(0.0, 0.0), (1.0, 1.0)]), 1).unwrap();
        assert!(matches!(w.evaluate(1.1), Err(Error::Domain { .. })));
        assert!(matches!(w.evaluate(-0.1), Err(Error::Domain { .. })));
        assert!(w.evaluate(1.0 + 1e-14).is_ok());
    }

    #[test]
    fn vector_valued_components_are_independent() {
        let mut st = Storage::new(2);
        for i in 0..5 {
            let t = i as f64 * 0.25;
            st.set_sample_at_time(t, Sample::new(vec![t, t * t, 1.0]).unwrap())
                .unwrap();
        }
        let w = Waveform::build(&st, 2).unwrap();
        let v = w.evaluate(0.6).unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-13);
        assert!((v.values()[1] - 0.36).abs() < 1e-13);
        assert!((v.values()[2] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn many_stamples_interpolate() {
        // Long windows (hundreds of substeps) must stay cheap and exact at the nodes.
        let mut st = Storage::new(3);
        let n = 1000;
        for i in 0..=n {
            let t = 0.2 * i as f64 / n as f64;
            st.set_sample_at_time(t, Sample::new(vec![(30.0 * t).cos()]).unwrap())
                .unwrap();
        }
        let w = Waveform::build(&st, 3).unwrap();
        for s in st.stamples().iter().step_by(37) {
            assert!((eval(&w, s.time) - s.sample.values()[0]).abs() < 1e-12);
        }
    }

    fn sorted_times() -> impl Strategy<Value = Vec<f64>> {
        (2usize..9).prop_flat_map(|m| {
            (
                -5.0..5.0f64,
                proptest::collection::vec(0.05..1.0f64, m - 1),
            )
                .prop_map(|(t0, gaps)| {
                    let mut ts = vec![t0];
                    for g in gaps {
                        let last = *ts.last().unwrap();
                        ts.push(last + g);
                    }
                    ts
                })
        })
    }

    proptest! {
        #[test]
        fn interpolates_at_all_nodes(
            times in sorted_times(),
            seed in proptest::collection::vec(-10.0..10.0f64, 8),
            p in prop::sample::select(vec![1usize, 2, 3, 5]),
        ) {
            let pts: Vec<(f64, f64)> = times.iter().zip(&seed).map(|(&t, &v)| (t, v)).collect();
            let w = Waveform::build(&storage(&pts), p).unwrap();
            prop_assert!(w.effective_degree() <= p.min(pts.len() - 1));
            for &(t, v) in &pts {
                prop_assert!((eval(&w, t) - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn linear_in_data(
            times in sorted_times(),
            a in proptest::collection::vec(-10.0..10.0f64, 8),
            b in proptest::collection::vec(-10.0..10.0f64, 8),
            alpha in -3.0..3.0f64,
            beta in -3.0..3.0f64,
            frac in 0.0..1.0f64,
        ) {
            let make = |vals: &[f64]| {
                let pts: Vec<(f64, f64)> = times.iter().zip(vals).map(|(&t, &v)| (t, v)).collect();
                Waveform::build(&storage(&pts), 3).unwrap()
            };
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let t = times[0] + frac * (times[times.len() - 1] - times[0]);
            let lhs = eval(&make(&combo), t);
            let rhs = alpha * eval(&make(&a), t) + beta * eval(&make(&b), t);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
