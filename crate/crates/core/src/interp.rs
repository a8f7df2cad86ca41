//! Dense output over the last accepted step.
//!
//! [`Interpolant::Hermite`] uses solution and derivative data at both ends of
//! the last step; [`Interpolant::Lagrange`] uses a history of solution values
//! only. Both are also evaluated outside the step to build implicit-stage
//! predictors.
//!
//! Hermite derivative data is filled lazily by [`Interpolant::prepare`], so a
//! step whose interpolant is never evaluated costs no extra RHS calls.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Vector};

pub const MAX_DEGREE: usize = 5;
pub const MAX_DERIVATIVE: usize = 3;

/// Full right-hand side used to fill missing derivative data.
pub type RhsCallback<'a> = dyn FnMut(f64, &[f64], &mut [f64]) -> Result<()> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolantKind {
    Hermite,
    Lagrange,
}

#[derive(Debug, Clone)]
pub enum Interpolant {
    Hermite(HermiteInterpolant),
    Lagrange(LagrangeInterpolant),
}

impl Default for Interpolant {
    fn default() -> Self {
        Interpolant::Hermite(HermiteInterpolant::new(3).unwrap())
    }
}

impl Interpolant {
    pub fn new(kind: InterpolantKind, degree: usize) -> Result<Self> {
        Ok(match kind {
            InterpolantKind::Hermite => Interpolant::Hermite(HermiteInterpolant::new(degree)?),
            InterpolantKind::Lagrange => Interpolant::Lagrange(LagrangeInterpolant::new(degree)?),
        })
    }

    pub fn kind(&self) -> InterpolantKind {
        match self {
            Interpolant::Hermite(_) => InterpolantKind::Hermite,
            Interpolant::Lagrange(_) => InterpolantKind::Lagrange,
        }
    }

    /// Configured maximum degree.
    pub fn degree(&self) -> usize {
        match self {
            Interpolant::Hermite(h) => h.degree,
            Interpolant::Lagrange(l) => l.degree,
        }
    }

    /// Highest degree the stored data supports right now.
    pub fn available_degree(&self) -> usize {
        match self {
            Interpolant::Hermite(h) => h.available_degree(),
            Interpolant::Lagrange(l) => l.available_degree(),
        }
    }

    /// Drops all history.
    pub fn clear(&mut self) {
        match self {
            Interpolant::Hermite(h) => h.clear(),
            Interpolant::Lagrange(l) => l.clear(),
        }
    }

    /// Drops all history and records the initial condition.
    pub fn reset(&mut self, t: f64, y: &[f64]) {
        self.clear();
        self.update(t, y, None);
    }

    /// Records an accepted step ending at `(t, y)`. `f_start`, when known,
    /// is the full RHS at the start of that step.
    pub fn update(&mut self, t: f64, y: &[f64], f_start: Option<&[f64]>) {
        match self {
            Interpolant::Hermite(h) => h.update(t, y, f_start),
            Interpolant::Lagrange(l) => l.update(t, y),
        }
    }

    /// Hands over an RHS value at the most recent point if one was computed
    /// anyway; ignored when `t` is not that point or the value is known.
    pub fn offer_rhs(&mut self, t: f64, f: &[f64]) {
        if let Interpolant::Hermite(h) = self {
            h.offer_rhs(t, f);
        }
    }

    /// Computes any derivative data the configured degree needs; returns the
    /// number of RHS evaluations spent.
    pub fn prepare(&mut self, rhs: &mut RhsCallback<'_>) -> Result<usize> {
        match self {
            Interpolant::Hermite(h) => h.prepare(h.degree, rhs),
            Interpolant::Lagrange(_) => Ok(0),
        }
    }

    /// Like [`prepare`](Self::prepare) but only for degree `degree`.
    pub fn prepare_degree(&mut self, degree: usize, rhs: &mut RhsCallback<'_>) -> Result<usize> {
        match self {
            Interpolant::Hermite(h) => h.prepare(degree.min(h.degree), rhs),
            Interpolant::Lagrange(_) => Ok(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Interpolant::Hermite(h) => h.points == 0,
            Interpolant::Lagrange(l) => l.hist.is_empty(),
        }
    }

    /// Time of the most recent point.
    pub fn t_last(&self) -> Option<f64> {
        match self {
            Interpolant::Hermite(h) => (h.points > 0).then_some(h.t_cur),
            Interpolant::Lagrange(l) => l.hist.front().map(|p| p.0),
        }
    }

    /// Time of the point before the most recent one.
    pub fn t_prev(&self) -> Option<f64> {
        match self {
            Interpolant::Hermite(h) => (h.points > 1).then_some(h.t_prev),
            Interpolant::Lagrange(l) => l.hist.get(1).map(|p| p.0),
        }
    }

    /// Value of the `d`-th derivative at `t` using the configured degree.
    pub fn evaluate(&self, t: f64, d: usize, out: &mut [f64]) -> Result<()> {
        self.evaluate_degree(t, d, self.degree(), out)
    }

    /// Value of the `d`-th derivative at `t` using at most degree `degree`.
    pub fn evaluate_degree(&self, t: f64, d: usize, degree: usize, out: &mut [f64]) -> Result<()> {
        if d > MAX_DERIVATIVE {
            return Err(Error::Usage(format!("derivative order {d} exceeds {MAX_DERIVATIVE}")));
        }
        match self {
            Interpolant::Hermite(h) => h.evaluate(t, d, degree.min(h.degree), out),
            Interpolant::Lagrange(l) => l.evaluate(t, d, degree.min(l.degree), out),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Cond {
    Value(f64),
    Slope(f64),
}

/// Weights `w` with `p^{(d)}(s) = Σ_m w_m data_m` for the polynomial in
/// `s` fixed by `conds`; slope data are derivatives with respect to `s`.
fn cardinal_weights(conds: &[Cond], s: f64, d: usize) -> Result<Vec<f64>> {
    let n = conds.len();
    // transposed generalized Vandermonde: vt[k][m] = cond_m applied to s^k
    let mut vt = DenseMatrix::zeros(n, n);
    for (m, c) in conds.iter().enumerate() {
        for k in 0..n {
            let v = match *c {
                Cond::Value(p) => p.powi(k as i32),
                Cond::Slope(_) if k == 0 => 0.0,
                Cond::Slope(p) => k as f64 * p.powi(k as i32 - 1),
            };
            vt.set(k, m, v);
        }
    }
    let mut rhs: Vec<f64> = (0..n)
        .map(|k| {
            if k < d {
                0.0
            } else {
                let falling: f64 = ((k - d + 1)..=k).map(|x| x as f64).product();
                falling * s.powi((k - d) as i32)
            }
        })
        .collect();
    vt.lu()?.solve_in_place(&mut rhs);
    Ok(rhs)
}

/// Local abscissae of the extra derivative conditions.
const S_A: f64 = 2.0 / 3.0;
const S_B: f64 = 1.0 / 3.0;

#[derive(Debug, Clone)]
pub struct HermiteInterpolant {
    degree: usize,
    points: usize,
    t_prev: f64,
    t_cur: f64,
    y_prev: Vector,
    y_cur: Vector,
    f_prev: Option<Vector>,
    f_cur: Option<Vector>,
    /// `f(t_a, π3(t_a))`, then `f(t_a, π4(t_a))`, `f(t_b, π4(t_b))`.
    extras: Vec<Vector>,
}

impl HermiteInterpolant {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::Config(format!("interpolant degree {degree} exceeds {MAX_DEGREE}")));
        }
        Ok(HermiteInterpolant {
            degree,
            points: 0,
            t_prev: 0.0,
            t_cur: 0.0,
            y_prev: Vector::default(),
            y_cur: Vector::default(),
            f_prev: None,
            f_cur: None,
            extras: Vec::new(),
        })
    }

    fn available_degree(&self) -> usize {
        if self.points < 2 {
            0
        } else {
            self.degree
        }
    }

    fn clear(&mut self) {
        self.points = 0;
        self.f_prev = None;
        self.f_cur = None;
        self.extras.clear();
    }

    fn update(&mut self, t: f64, y: &[f64], f_start: Option<&[f64]>) {
        if self.points == 0 {
            self.t_cur = t;
            self.y_cur = Vector::from_slice(y);
            self.points = 1;
            return;
        }
        self.t_prev = self.t_cur;
        std::mem::swap(&mut self.y_prev, &mut self.y_cur);
        if self.y_cur.len() == y.len() {
            self.y_cur.copy_from_slice(y);
        } else {
            self.y_cur = Vector::from_slice(y);
        }
        self.f_prev = self.f_cur.take().or_else(|| f_start.map(Vector::from_slice));
        self.t_cur = t;
        self.extras.clear();
        self.points = 2;
    }

    fn offer_rhs(&mut self, t: f64, f: &[f64]) {
        if self.points > 0 && t == self.t_cur && self.f_cur.is_none() {
            self.f_cur = Some(Vector::from_slice(f));
        }
    }

    fn h(&self) -> f64 {
        self.t_cur - self.t_prev
    }

    fn prepare(&mut self, degree: usize, rhs: &mut RhsCallback<'_>) -> Result<usize> {
        let mut evals = 0;
        if self.points == 0 {
            return Ok(0);
        }
        let n = self.y_cur.len();
        if degree >= 2 && self.f_cur.is_none() {
            let mut f = Vector::zeros(n);
            rhs(self.t_cur, &self.y_cur, &mut f)?;
            evals += 1;
            self.f_cur = Some(f);
        }
        if self.points < 2 {
            return Ok(evals);
        }
        if degree >= 3 && self.f_prev.is_none() {
            let mut f = Vector::zeros(n);
            rhs(self.t_prev, &self.y_prev, &mut f)?;
            evals += 1;
            self.f_prev = Some(f);
        }
        let h = self.h();
        let t_a = self.t_prev + S_A * h;
        let t_b = self.t_prev + S_B * h;
        let mut z = Vector::zeros(n);
        if degree >= 4 && self.extras.is_empty() {
            self.evaluate(t_a, 0, 3, &mut z)?;
            let mut f = Vector::zeros(n);
            rhs(t_a, &z, &mut f)?;
            evals += 1;
            self.extras.push(f);
        }
        if degree >= 5 && self.extras.len() < 3 {
            for t in [t_a, t_b] {
                self.evaluate(t, 0, 4, &mut z)?;
                let mut f = Vector::zeros(n);
                rhs(t, &z, &mut f)?;
                evals += 1;
                self.extras.push(f);
            }
        }
        Ok(evals)
    }

    fn evaluate(&self, t: f64, d: usize, degree: usize, out: &mut [f64]) -> Result<()> {
        if self.points == 0 {
            return Err(Error::Usage("interpolant has no data".into()));
        }
        if out.len() != self.y_cur.len() {
            return Err(Error::LengthMismatch {
                expected: self.y_cur.len(),
                found: out.len(),
            });
        }
        if self.points == 1 {
            // single point: constant
            if d == 0 {
                out.copy_from_slice(&self.y_cur);
            } else {
                out.fill(0.0);
            }
            return Ok(());
        }
        if d > degree {
            return Err(Error::Usage(format!(
                "derivative order {d} exceeds interpolant degree {degree}"
            )));
        }
        if degree == 0 {
            for ((o, a), b) in out.iter_mut().zip(self.y_prev.iter()).zip(self.y_cur.iter()) {
                *o = 0.5 * (a + b);
            }
            return Ok(());
        }
        let missing = || Error::Usage("interpolant derivative data not prepared".into());
        let h = self.h();
        let mut conds = vec![Cond::Value(0.0), Cond::Value(1.0)];
        let mut data: Vec<(&[f64], f64)> = vec![(&self.y_prev, 1.0), (&self.y_cur, 1.0)];
        if degree >= 2 {
            conds.push(Cond::Slope(1.0));
            data.push((self.f_cur.as_deref().ok_or_else(missing)?, h));
        }
        if degree >= 3 {
            conds.push(Cond::Slope(0.0));
            data.push((self.f_prev.as_deref().ok_or_else(missing)?, h));
        }
        match degree {
            4 => {
                conds.push(Cond::Slope(S_A));
                data.push((self.extras.first().ok_or_else(missing)?, h));
            }
            5 => {
                if self.extras.len() < 3 {
                    return Err(missing());
                }
                conds.push(Cond::Slope(S_A));
                data.push((&self.extras[1], h));
                conds.push(Cond::Slope(S_B));
                data.push((&self.extras[2], h));
            }
            _ => {}
        }
        let s = (t - self.t_prev) / h;
        let w = cardinal_weights(&conds, s, d)?;
        let scale = h.powi(-(d as i32));
        out.fill(0.0);
        for (wm, (v, factor)) in w.iter().zip(&data) {
            crate::numerics::axpy(wm * factor * scale, v, out);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LagrangeInterpolant {
    degree: usize,
    /// Most recent first.
    hist: VecDeque<(f64, Vector)>,
}

impl LagrangeInterpolant {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::Config(format!("interpolant degree {degree} exceeds {MAX_DEGREE}")));
        }
        Ok(LagrangeInterpolant {
            degree,
            hist: VecDeque::with_capacity(degree + 1),
        })
    }

    fn available_degree(&self) -> usize {
        self.hist.len().saturating_sub(1).min(self.degree)
    }

    fn clear(&mut self) {
        self.hist.clear();
    }

    pub fn len(&self) -> usize {
        self.hist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hist.is_empty()
    }

    fn update(&mut self, t: f64, y: &[f64]) {
        if self.hist.front().is_some_and(|p| p.0 == t) {
            self.hist.pop_front();
        }
        let recycled = if self.hist.len() > self.degree {
            self.hist.pop_back().map(|p| p.1)
        } else {
            None
        };
        let v = match recycled {
            Some(mut v) if v.len() == y.len() => {
                v.copy_from_slice(y);
                v
            }
            _ => Vector::from_slice(y),
        };
        self.hist.push_front((t, v));
    }

    fn evaluate(&self, t: f64, d: usize, degree: usize, out: &mut [f64]) -> Result<()> {
        if self.hist.is_empty() {
            return Err(Error::Usage("interpolant has no data".into()));
        }
        let n = (degree + 1).min(self.hist.len());
        let ts: Vec<f64> = self.hist.iter().take(n).map(|p| p.0).collect();
        let w = lagrange_basis(&ts, t, d);
        out.fill(0.0);
        for (wj, (_, y)) in w.iter().zip(&self.hist) {
            if y.len() != out.len() {
                return Err(Error::LengthMismatch {
                    expected: y.len(),
                    found: out.len(),
                });
            }
            crate::numerics::axpy(*wj, y, out);
        }
        Ok(())
    }
}

/// `ℓ_j^{(d)}(t)` for nodes `ts`, `d ≤ 3`, from truncated Taylor products
/// of the linear factors around `t`.
pub fn lagrange_basis(ts: &[f64], t: f64, d: usize) -> Vec<f64> {
    assert!(d <= MAX_DERIVATIVE);
    let factorial = [1.0, 1.0, 2.0, 6.0];
    (0..ts.len())
        .map(|j| {
            let mut series = [1.0, 0.0, 0.0, 0.0];
            for (i, &ti) in ts.iter().enumerate() {
                if i == j {
                    continue;
                }
                let inv = 1.0 / (ts[j] - ti);
                let a = (t - ti) * inv;
                let b = inv;
                for k in (0..4).rev() {
                    series[k] = a * series[k] + if k > 0 { b * series[k - 1] } else { 0.0 };
                }
            }
            series[d] * factorial[d]
        })
        .collect()
}
