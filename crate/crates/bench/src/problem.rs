//! One-dimensional Brusselator with advection, diffusion and reaction,
//! discretized with second-order centered differences on a uniform grid.
//!
//! State is interleaved per grid point: `(u_i, v_i, w_i)` at `3i..3i+3`.
//! Boundary points are held fixed.

use std::sync::Arc;

use onestep::nonlinear::JacobianStructure;
use onestep::stepper::Rhs;
use serde::{Deserialize, Serialize};

pub const SPECIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Advection,
    Diffusion,
    Reaction,
}

impl Term {
    pub const ALL: [Term; 3] = [Term::Advection, Term::Diffusion, Term::Reaction];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Brusselator {
    pub points: usize,
    pub advection_speed: f64,
    pub diffusion: f64,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub t0: f64,
    pub tf: f64,
    /// Diffuse every species with the `u` profile instead of its own.
    pub shared_diffusion_profile: bool,
}

impl Default for Brusselator {
    fn default() -> Self {
        Brusselator {
            points: 512,
            advection_speed: 0.001,
            diffusion: 0.01,
            a: 0.6,
            b: 2.0,
            eps: 0.01,
            t0: 0.0,
            tf: 10.0,
            shared_diffusion_profile: false,
        }
    }
}

impl Brusselator {
    pub fn with_points(mut self, n: usize) -> Self {
        self.points = n;
        self
    }

    pub fn with_diffusion(mut self, d: f64) -> Self {
        self.diffusion = d;
        self
    }

    pub fn dim(&self) -> usize {
        SPECIES * self.points
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// Band of the full right-hand side Jacobian in the interleaved layout.
    pub fn jacobian_structure(&self) -> JacobianStructure {
        JacobianStructure::Banded { ml: SPECIES, mu: SPECIES }
    }

    /// Band of the reaction Jacobian alone (coupling inside a grid point).
    pub fn reaction_structure(&self) -> JacobianStructure {
        JacobianStructure::Banded {
            ml: SPECIES - 1,
            mu: SPECIES - 1,
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for i in 0..self.points {
            let s = 0.1 * (std::f64::consts::PI * self.x(i)).sin();
            y[SPECIES * i] = self.a + s;
            y[SPECIES * i + 1] = self.b / self.a + s;
            y[SPECIES * i + 2] = self.b + s;
        }
        y
    }

    /// `out = −c q_x`, all species, interior points only.
    pub fn advection(&self, y: &[f64], out: &mut [f64]) {
        let coef = -self.advection_speed / (2.0 * self.dx());
        out.fill(0.0);
        for i in 1..self.points - 1 {
            for k in 0..SPECIES {
                let j = SPECIES * i + k;
                out[j] = coef * (y[j + SPECIES] - y[j - SPECIES]);
            }
        }
    }

    /// `out = d q_xx`, interior points only.
    pub fn diffusion(&self, y: &[f64], out: &mut [f64]) {
        let coef = self.diffusion / (self.dx() * self.dx());
        out.fill(0.0);
        for i in 1..self.points - 1 {
            for k in 0..SPECIES {
                let src = if self.shared_diffusion_profile { SPECIES * i } else { SPECIES * i + k };
                out[SPECIES * i + k] = coef * (y[src + SPECIES] - 2.0 * y[src] + y[src - SPECIES]);
            }
        }
    }

    /// Brusselator kinetics, interior points only.
    pub fn reaction(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 1..self.points - 1 {
            let j = SPECIES * i;
            let (u, v, w) = (y[j], y[j + 1], y[j + 2]);
            out[j] = self.a - (w + 1.0) * u + v * u * u;
            out[j + 1] = w * u - v * u * u;
            out[j + 2] = (self.b - w) / self.eps - w * u;
        }
    }

    /// Sum of the selected terms.
    pub fn eval(&self, terms: &[Term], y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; y.len()];
        for term in terms {
            match term {
                Term::Advection => self.advection(y, &mut tmp),
                Term::Diffusion => self.diffusion(y, &mut tmp),
                Term::Reaction => self.reaction(y, &mut tmp),
            }
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t;
            }
        }
    }

    /// Right-hand side callback for a set of terms.
    pub fn rhs(self: &Arc<Self>, terms: &[Term]) -> Rhs {
        let p = Arc::clone(self);
        let terms = terms.to_vec();
        if let [single] = terms[..] {
            return match single {
                Term::Advection => Box::new(move |_, y, out| p.advection(y, out)),
                Term::Diffusion => Box::new(move |_, y, out| p.diffusion(y, out)),
                Term::Reaction => Box::new(move |_, y, out| p.reaction(y, out)),
            };
        }
        Box::new(move |_, y, out| p.eval(&terms, y, out))
    }
}
