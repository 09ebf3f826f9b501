//! 1D heat equation on [0,2] split at x=1 with a manufactured solution.
//!
//! A owns [0,1], takes the interface temperature as a Dirichlet value and
//! returns the one-sided flux. B owns [1,2], takes the flux through a ghost
//! node and returns the interface temperature.

use nalgebra::{DMatrix, DVector};

use crate::case::{CoupledSolver, Reader};
use crate::integrators::{LinearIrk, Tableau};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatIntegrator {
    ImplicitEuler,
    CrankNicolson,
    GaussLegendre2,
}

impl HeatIntegrator {
    pub fn tableau(self) -> Tableau {
        match self {
            Self::ImplicitEuler => Tableau::implicit_euler(),
            Self::CrankNicolson => Tableau::crank_nicolson(),
            Self::GaussLegendre2 => Tableau::gauss_legendre_2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatParams {
    pub h: f64,
    pub t_end: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        Self { h: 0.1, t_end: 1.0 }
    }
}

pub fn exact(x: f64, t: f64) -> f64 {
    1.0 + (t.sin() + t.cos()) * x * x + 1.2 * t
}

pub fn exact_flux(x: f64, t: f64) -> f64 {
    2.0 * (t.sin() + t.cos()) * x
}

pub fn source(x: f64, t: f64) -> f64 {
    (t.cos() - t.sin()) * x * x + 1.2 - 2.0 * (t.sin() + t.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatSide {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone)]
pub struct HeatSolver {
    side: HeatSide,
    h: f64,
    /// All node coordinates of the subdomain, boundaries included.
    x: Vec<f64>,
    /// Unknown nodal values.
    u: DVector<f64>,
    irk: LinearIrk,
    t: f64,
    /// Interface value used at the end of the last step (temperature for A, flux for B).
    interface: f64,
}

impl HeatSolver {
    pub fn new(side: HeatSide, params: HeatParams, integrator: HeatIntegrator) -> anyhow::Result<Self> {
        let cells = (1.0 / params.h).round() as usize;
        anyhow::ensure!(
            cells >= 2 && (cells as f64 * params.h - 1.0).abs() < 1e-9,
            "vertex spacing {} must divide the unit subdomain into at least two cells",
            params.h
        );
        let h = 1.0 / cells as f64;
        let offset = match side {
            HeatSide::Dirichlet => 0.0,
            HeatSide::Neumann => 1.0,
        };
        let x: Vec<f64> = (0..=cells).map(|i| offset + i as f64 * h).collect();
        // A: unknowns 1..cells-1; B: unknowns 0..cells-1
        let n = match side {
            HeatSide::Dirichlet => cells - 1,
            HeatSide::Neumann => cells,
        };
        let mut l = DMatrix::<f64>::zeros(n, n);
        let h2 = h * h;
        for r in 0..n {
            l[(r, r)] = -2.0 / h2;
            if r > 0 {
                l[(r, r - 1)] = 1.0 / h2;
            }
            if r + 1 < n {
                l[(r, r + 1)] = 1.0 / h2;
            }
        }
        if side == HeatSide::Neumann && n > 1 {
            // ghost node u_{-1} = u_1 - 2h q
            l[(0, 1)] = 2.0 / h2;
        }
        let first = match side {
            HeatSide::Dirichlet => 1,
            HeatSide::Neumann => 0,
        };
        let u = DVector::from_iterator(n, (0..n).map(|r| exact(x[first + r], 0.0)));
        let interface = match side {
            HeatSide::Dirichlet => exact(1.0, 0.0),
            HeatSide::Neumann => exact_flux(1.0, 0.0),
        };
        Ok(Self { side, h, x, u, irk: LinearIrk::new(integrator.tableau(), l), t: 0.0, interface })
    }

    fn first_unknown(&self) -> usize {
        match self.side {
            HeatSide::Dirichlet => 1,
            HeatSide::Neumann => 0,
        }
    }

    fn forcing(&self, t: f64, interface: f64) -> DVector<f64> {
        let n = self.u.len();
        let h2 = self.h * self.h;
        let first = self.first_unknown();
        let mut g = DVector::from_iterator(n, (0..n).map(|r| source(self.x[first + r], t)));
        match self.side {
            HeatSide::Dirichlet => {
                g[0] += exact(0.0, t) / h2;
                g[n - 1] += interface / h2;
            }
            HeatSide::Neumann => {
                g[0] -= 2.0 * interface / self.h;
                if n == 1 {
                    g[0] += 2.0 * exact(2.0, t) / h2;
                } else {
                    g[n - 1] += exact(2.0, t) / h2;
                }
            }
        }
        g
    }

    /// Every nodal value including boundary nodes.
    pub fn field(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.x.len());
        match self.side {
            HeatSide::Dirichlet => {
                f.push(exact(0.0, self.t));
                f.extend(self.u.iter());
                f.push(self.interface);
            }
            HeatSide::Neumann => {
                f.extend(self.u.iter());
                f.push(exact(2.0, self.t));
            }
        }
        f
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn time(&self) -> f64 {
        self.t
    }
}

impl CoupledSolver for HeatSolver {
    fn mesh(&self) -> &'static str {
        match self.side {
            HeatSide::Dirichlet => "Dirichlet-Mesh",
            HeatSide::Neumann => "Neumann-Mesh",
        }
    }

    fn write_data(&self) -> &'static str {
        match self.side {
            HeatSide::Dirichlet => "Flux",
            HeatSide::Neumann => "Temperature",
        }
    }

    fn read_data(&self) -> &'static str {
        match self.side {
            HeatSide::Dirichlet => "Temperature",
            HeatSide::Neumann => "Flux",
        }
    }

    fn output(&self) -> Vec<f64> {
        match self.side {
            HeatSide::Dirichlet => {
                let n = self.u.len();
                let um1 = self.u[n - 1];
                let um2 = if n >= 2 { self.u[n - 2] } else { exact(0.0, self.t) };
                vec![(3.0 * self.interface - 4.0 * um1 + um2) / (2.0 * self.h)]
            }
            HeatSide::Neumann => vec![self.u[0]],
        }
    }

    fn step(&mut self, dt: f64, read: &mut Reader) -> anyhow::Result<()> {
        let t0 = self.t;
        let stages: Vec<f64> = self.irk.tableau().c.iter().map(|c| c * dt).collect();
        let mut values = Vec::with_capacity(stages.len());
        for &rel in &stages {
            values.push(read(rel)?[0]);
        }
        let end = read(dt)?[0];
        let forcings: Vec<DVector<f64>> = stages
            .iter()
            .zip(&values)
            .map(|(&rel, &v)| self.forcing(t0 + rel, v))
            .collect();
        let mut stage = 0;
        let u = self.u.clone();
        self.u = self.irk.step(&u, dt, |_| {
            let g = forcings[stage].clone();
            stage += 1;
            g
        });
        self.t = t0 + dt;
        self.interface = end;
        Ok(())
    }

    /// Relative discrete L2 error over all nodes of the subdomain.
    fn error(&self) -> f64 {
        let f = self.field();
        let (num, den) = self.x.iter().zip(&f).fold((0.0, 0.0), |(n, d), (&x, &u)| {
            let e = exact(x, self.t);
            (n + (u - e) * (u - e), d + e * e)
        });
        (num / den).sqrt()
    }
}
