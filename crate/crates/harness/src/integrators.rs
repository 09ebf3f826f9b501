//! Time integrators used by the two cases.

use nalgebra::{DMatrix, DVector, LU, Dyn};

/// Classical fourth-order Runge-Kutta step for `y' = f(rel_t, y)`.
///
/// `f` is called at relative times 0, dt/2, dt/2, dt.
pub fn rk4_step<F>(y: &[f64], dt: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };
    let k1 = f(0.0, y);
    let k2 = f(0.5 * dt, &axpy(0.5 * dt, &k1));
    let k3 = f(0.5 * dt, &axpy(0.5 * dt, &k2));
    let k4 = f(dt, &axpy(dt, &k3));
    y.iter()
        .enumerate()
        .map(|(i, y)| y + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Chung-Hulbert generalized-alpha parameters for `m a + k u = f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedAlpha {
    pub alpha_m: f64,
    pub alpha_f: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl GeneralizedAlpha {
    /// Parameters from the high-frequency spectral radius, `0 <= rho <= 1`.
    pub fn new(rho_inf: f64) -> Self {
        let alpha_m = (2.0 * rho_inf - 1.0) / (rho_inf + 1.0);
        let alpha_f = rho_inf / (rho_inf + 1.0);
        let gamma = 0.5 - alpha_m + alpha_f;
        let beta = 0.25 * (1.0 - alpha_m + alpha_f).powi(2);
        Self { alpha_m, alpha_f, beta, gamma }
    }

    /// Relative time at which the load is evaluated.
    pub fn load_time(&self, dt: f64) -> f64 {
        (1.0 - self.alpha_f) * dt
    }

    /// Advances `(u, v, a)` by one step with load `f` taken at [`load_time`](Self::load_time).
    pub fn step(&self, m: f64, k: f64, f: f64, dt: f64, (u, v, a): (f64, f64, f64)) -> (f64, f64, f64) {
        let Self { alpha_m, alpha_f, beta, gamma } = *self;
        let predictor = u + dt * v + dt * dt * (0.5 - beta) * a;
        let rhs = f - m * alpha_m * a - k * ((1.0 - alpha_f) * predictor + alpha_f * u);
        let a1 = rhs / (m * (1.0 - alpha_m) + k * (1.0 - alpha_f) * beta * dt * dt);
        let u1 = predictor + dt * dt * beta * a1;
        let v1 = v + dt * ((1.0 - gamma) * a + gamma * a1);
        (u1, v1, a1)
    }
}

/// Butcher tableau of an implicit Runge-Kutta method.
#[derive(Debug, Clone, PartialEq)]
pub struct Tableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Tableau {
    pub fn implicit_euler() -> Self {
        Self { a: vec![vec![1.0]], b: vec![1.0], c: vec![1.0] }
    }

    /// Crank-Nicolson written as two-stage Lobatto IIIA.
    pub fn crank_nicolson() -> Self {
        Self {
            a: vec![vec![0.0, 0.0], vec![0.5, 0.5]],
            b: vec![0.5, 0.5],
            c: vec![0.0, 1.0],
        }
    }

    /// Two-stage Gauss-Legendre, order 4.
    pub fn gauss_legendre_2() -> Self {
        let r = 3f64.sqrt() / 6.0;
        Self {
            a: vec![vec![0.25, 0.25 - r], vec![0.25 + r, 0.25]],
            b: vec![0.5, 0.5],
            c: vec![0.5 - r, 0.5 + r],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// Implicit Runge-Kutta for the linear system `u' = L u + g(t)`.
///
/// The stage matrix `I - dt (A kron L)` is factored once per distinct step size.
#[derive(Debug, Clone)]
pub struct LinearIrk {
    tableau: Tableau,
    l: DMatrix<f64>,
    cached: Option<(u64, LU<f64, Dyn, Dyn>)>,
}

impl LinearIrk {
    pub fn new(tableau: Tableau, l: DMatrix<f64>) -> Self {
        assert!(l.is_square());
        Self { tableau, l, cached: None }
    }

    pub fn tableau(&self) -> &Tableau {
        &self.tableau
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// One step from `u`; `g(rel_t)` is the forcing at relative stage time.
    pub fn step<G>(&mut self, u: &DVector<f64>, dt: f64, mut g: G) -> DVector<f64>
    where
        G: FnMut(f64) -> DVector<f64>,
    {
        let n = u.len();
        let s = self.tableau.stages();
        let key = dt.to_bits();
        if self.cached.as_ref().map(|(k, _)| *k) != Some(key) {
            let mut m = DMatrix::<f64>::identity(s * n, s * n);
            for i in 0..s {
                for j in 0..s {
                    let aij = self.tableau.a[i][j];
                    if aij != 0.0 {
                        let mut block = m.view_mut((i * n, j * n), (n, n));
                        block -= &self.l * (dt * aij);
                    }
                }
            }
            self.cached = Some((key, m.lu()));
        }
        let lu_u = &self.l * u;
        let mut rhs = DVector::<f64>::zeros(s * n);
        for i in 0..s {
            let gi = g(self.tableau.c[i] * dt);
            rhs.rows_mut(i * n, n).copy_from(&(&lu_u + gi));
        }
        let (_, lu) = self.cached.as_ref().expect("factored above");
        let k = lu.solve(&rhs).expect("stage matrix is nonsingular for dt > 0");
        let mut next = u.clone();
        for i in 0..s {
            next += k.rows(i * n, n) * (dt * self.tableau.b[i]);
        }
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn slope(dts: &[f64], errs: &[f64]) -> f64 {
        let n = dts.len() as f64;
        let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
        let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        num / den
    }

    #[test]
    fn rk4_decoupled_oscillator_matches_cosine() {
        let w2 = 4.0 * PI * PI;
        let dt = 1e-3;
        let mut y = vec![1.0, 0.0];
        for _ in 0..1000 {
            y = rk4_step(&y, dt, |_, s| vec![s[1], -w2 * s[0]]);
        }
        assert!((y[0] - 1.0).abs() <= 1e-10, "{}", y[0] - 1.0);
    }

    #[test]
    fn rk4_samples_stage_times() {
        let mut seen = Vec::new();
        rk4_step(&[0.0], 0.2, |t, _| {
            seen.push(t);
            vec![0.0]
        });
        assert_eq!(seen, vec![0.0, 0.1, 0.1, 0.2]);
    }

    #[test]
    fn generalized_alpha_is_second_order_for_all_rho() {
        let w2 = 4.0 * PI * PI;
        for rho in [0.0, 0.5, 0.9, 1.0] {
            let ga = GeneralizedAlpha::new(rho);
            let dts: [f64; 4] = [1.0 / 50.0, 1.0 / 100.0, 1.0 / 200.0, 1.0 / 400.0];
            let errs: Vec<f64> = dts
                .iter()
                .map(|&dt| {
                    let n = (1.0 / dt).round() as usize;
                    let mut s = (1.0, 0.0, -w2);
                    let mut e: f64 = 0.0;
                    for i in 1..=n {
                        s = ga.step(1.0, w2, 0.0, dt, s);
                        e = e.max((s.0 - (2.0 * PI * i as f64 * dt).cos()).abs());
                    }
                    e
                })
                .collect();
            let p = slope(&dts, &errs);
            assert!((1.8..=2.2).contains(&p), "rho {rho}: slope {p}");
        }
    }

    #[test]
    fn generalized_alpha_parameters() {
        let ga = GeneralizedAlpha::new(1.0);
        assert_eq!((ga.alpha_m, ga.alpha_f, ga.beta, ga.gamma), (0.5, 0.5, 0.25, 0.5));
        let ga = GeneralizedAlpha::new(0.0);
        assert_eq!((ga.alpha_m, ga.alpha_f), (-1.0, 0.0));
    }

    fn irk_order(tableau: Tableau) -> f64 {
        // u' = -u + cos t, exact u = (cos t + sin t)/2 + e^{-t}/2 with u(0) = 1
        let exact = |t: f64| 0.5 * (t.cos() + t.sin()) + 0.5 * (-t).exp();
        let dts: [f64; 3] = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = dts
            .iter()
            .map(|&dt| {
                let mut irk = LinearIrk::new(tableau.clone(), DMatrix::from_element(1, 1, -1.0));
                let mut u = DVector::from_element(1, 1.0);
                let n = (1.0 / dt).round() as usize;
                for i in 0..n {
                    let t = i as f64 * dt;
                    u = irk.step(&u, dt, |r| DVector::from_element(1, (t + r).cos()));
                }
                (u[0] - exact(1.0)).abs()
            })
            .collect();
        slope(&dts, &errs)
    }

    #[test]
    fn irk_orders() {
        let p = irk_order(Tableau::implicit_euler());
        assert!((0.9..1.1).contains(&p), "{p}");
        let p = irk_order(Tableau::crank_nicolson());
        assert!((1.9..2.1).contains(&p), "{p}");
        let p = irk_order(Tableau::gauss_legendre_2());
        assert!((3.8..4.2).contains(&p), "{p}");
    }

    #[test]
    fn gl2_stage_times() {
        let t = Tableau::gauss_legendre_2();
        let r = 3f64.sqrt() / 6.0;
        assert_eq!(t.c, vec![0.5 - r, 0.5 + r]);
    }
}
