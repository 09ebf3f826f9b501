//! Two masses coupled by a spring, split into one participant per mass.

use std::f64::consts::PI;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use crate::case::{CoupledSolver, Reader};
use crate::integrators::{rk4_step, GeneralizedAlpha};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorParams {
    pub m_a: f64,
    pub m_b: f64,
    pub k_a: f64,
    pub k_b: f64,
    pub k_ab: f64,
    pub u_a0: f64,
    pub v_a0: f64,
    pub u_b0: f64,
    pub v_b0: f64,
    pub t_end: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        let w = 4.0 * PI * PI;
        Self {
            m_a: 1.0,
            m_b: 1.0,
            k_a: w,
            k_b: w,
            k_ab: 4.0 * w,
            u_a0: 1.0,
            v_a0: 0.0,
            u_b0: 0.0,
            v_b0: 0.0,
            t_end: 1.0,
        }
    }
}

/// Closed form for the default parameters.
pub fn analytical(t: f64) -> (f64, f64) {
    let (c1, c3) = ((2.0 * PI * t).cos(), (6.0 * PI * t).cos());
    (0.5 * (c1 + c3), 0.5 * (c1 - c3))
}

impl OscillatorParams {
    /// Reference displacements at `t`. Default parameters use the closed
    /// form, anything else the modal solution of the monolithic system.
    pub fn reference(&self, t: f64) -> (f64, f64) {
        let defaults = Self { t_end: self.t_end, ..Self::default() };
        if *self == defaults {
            analytical(t)
        } else {
            self.modal(t)
        }
    }

    /// Modal solution of the monolithic two-mass system.
    pub fn modal(&self, t: f64) -> (f64, f64) {
        let sm = Vector2::new(self.m_a.sqrt(), self.m_b.sqrt());
        let k = Matrix2::new(
            self.k_a + self.k_ab,
            -self.k_ab,
            -self.k_ab,
            self.k_b + self.k_ab,
        );
        let kt = Matrix2::from_fn(|i, j| k[(i, j)] / (sm[i] * sm[j]));
        let eig = SymmetricEigen::new(kt);
        let q = eig.eigenvectors;
        let c = q.transpose() * Vector2::new(self.u_a0 * sm[0], self.u_b0 * sm[1]);
        let d = q.transpose() * Vector2::new(self.v_a0 * sm[0], self.v_b0 * sm[1]);
        let modal = Vector2::from_fn(|i, _| {
            let w = eig.eigenvalues[i].max(0.0).sqrt();
            let s = if w > 0.0 { (w * t).sin() / w } else { t };
            c[i] * (w * t).cos() + d[i] * s
        });
        let y = q * modal;
        (y[0] / sm[0], y[1] / sm[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// A uses RK4 and B generalized-alpha.
#[derive(Debug, Clone)]
pub struct MassSolver {
    side: Side,
    params: OscillatorParams,
    ga: GeneralizedAlpha,
    t: f64,
    u: f64,
    v: f64,
    a: f64,
}

impl MassSolver {
    pub fn new(side: Side, params: OscillatorParams, rho_inf: f64) -> Self {
        let (u, v) = match side {
            Side::A => (params.u_a0, params.v_a0),
            Side::B => (params.u_b0, params.v_b0),
        };
        Self { side, params, ga: GeneralizedAlpha::new(rho_inf), t: 0.0, u, v, a: 0.0 }
    }

    fn mass_stiffness(&self) -> (f64, f64) {
        let p = &self.params;
        match self.side {
            Side::A => (p.m_a, p.k_a + p.k_ab),
            Side::B => (p.m_b, p.k_b + p.k_ab),
        }
    }

    pub fn displacement(&self) -> f64 {
        self.u
    }
}

impl CoupledSolver for MassSolver {
    fn mesh(&self) -> &'static str {
        match self.side {
            Side::A => "Mass-A-Mesh",
            Side::B => "Mass-B-Mesh",
        }
    }

    fn write_data(&self) -> &'static str {
        match self.side {
            Side::A => "Displacement-A",
            Side::B => "Displacement-B",
        }
    }

    fn read_data(&self) -> &'static str {
        match self.side {
            Side::A => "Displacement-B",
            Side::B => "Displacement-A",
        }
    }

    fn output(&self) -> Vec<f64> {
        vec![self.u]
    }

    fn start(&mut self, read: &mut Reader) -> anyhow::Result<()> {
        if self.side == Side::B {
            let (m, k) = self.mass_stiffness();
            let peer = read(0.0)?[0];
            self.a = (self.params.k_ab * peer - k * self.u) / m;
        }
        Ok(())
    }

    fn step(&mut self, dt: f64, read: &mut Reader) -> anyhow::Result<()> {
        let (m, k) = self.mass_stiffness();
        let kab = self.params.k_ab;
        match self.side {
            Side::A => {
                let mut err = None;
                let y = rk4_step(&[self.u, self.v], dt, |rel, s| {
                    let peer = match read(rel) {
                        Ok(v) => v[0],
                        Err(e) => {
                            err.get_or_insert(e);
                            0.0
                        }
                    };
                    vec![s[1], (kab * peer - k * s[0]) / m]
                });
                if let Some(e) = err {
                    return Err(e.into());
                }
                self.u = y[0];
                self.v = y[1];
            }
            Side::B => {
                let f = kab * read(self.ga.load_time(dt))?[0];
                (self.u, self.v, self.a) = self.ga.step(m, k, f, dt, (self.u, self.v, self.a));
            }
        }
        self.t += dt;
        Ok(())
    }

    fn error(&self) -> f64 {
        let (ua, ub) = self.params.reference(self.t);
        let exact = match self.side {
            Side::A => ua,
            Side::B => ub,
        };
        (self.u - exact).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytical_examples() {
        assert_eq!(analytical(0.0), (1.0, 0.0));
        let (a, b) = analytical(1.0);
        assert!((a - 1.0).abs() < 1e-14 && b.abs() < 1e-14);
        assert!(analytical(0.25).0.abs() < 1e-15);
    }

    #[test]
    fn modal_reference_matches_closed_form() {
        let p = OscillatorParams::default();
        for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let (a, b) = p.modal(t);
            let (ea, eb) = analytical(t);
            assert!((a - ea).abs() < 1e-12 && (b - eb).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn decoupled_modal_reference() {
        let p = OscillatorParams { k_ab: 0.0, u_b0: 2.0, ..Default::default() };
        let (a, b) = p.reference(0.3);
        let c = (2.0 * PI * 0.3).cos();
        assert!((a - c).abs() < 1e-12 && (b - 2.0 * c).abs() < 1e-12);
    }

    #[test]
    fn decoupled_rk4_side_reproduces_cosine() {
        let params = OscillatorParams { k_ab: 0.0, ..Default::default() };
        let mut s = MassSolver::new(Side::A, params, 0.9);
        let mut read = |_: f64| -> wavecpl::Result<Vec<f64>> { Ok(vec![0.0]) };
        for _ in 0..1000 {
            s.step(1e-3, &mut read).unwrap();
        }
        assert!((s.displacement() - 1.0).abs() <= 1e-10);
        assert!(s.error() <= 1e-10);
    }

    #[test]
    fn ga_reads_at_load_time() {
        let mut s = MassSolver::new(Side::B, OscillatorParams::default(), 0.9);
        let mut seen = Vec::new();
        let mut read = |t: f64| -> wavecpl::Result<Vec<f64>> {
            seen.push(t);
            Ok(vec![0.0])
        };
        s.step(0.1, &mut read).unwrap();
        let af = 0.9 / 1.9;
        assert_eq!(seen, vec![(1.0 - af) * 0.1]);
    }
}
