//! Embedded explicit Runge–Kutta stepper for `y' = f(t, y)`.

use crate::error::{Error, Result};
use crate::numerics::{all_finite, axpy};
use crate::stepper::{PolynomialForcing, Rhs, StepAttempt, StepContext, Stepper, StepperStats};
use crate::tables::{ButcherTable, TableKind};

pub struct ErkStepper {
    table: ButcherTable,
    f: Rhs,
    n: usize,
    k: Vec<Vec<f64>>,
    z: Vec<f64>,
    forcing: Option<PolynomialForcing>,
    stats: StepperStats,
}

impl ErkStepper {
    pub fn new(table: ButcherTable, f: Rhs, n: usize) -> Result<Self> {
        if table.kind() != TableKind::Explicit {
            return Err(Error::Config(format!("table `{}` is not explicit", table.name())));
        }
        let s = table.stages();
        Ok(ErkStepper {
            table,
            f,
            n,
            k: vec![vec![0.0; n]; s],
            z: vec![0.0; n],
            forcing: None,
            stats: StepperStats::default(),
        })
    }

    pub fn table(&self) -> &ButcherTable {
        &self.table
    }

    fn eval(&mut self, t: f64, stage: usize) -> Result<()> {
        let k = &mut self.k[stage];
        (self.f)(t, &self.z, k);
        self.stats.fe_evals += 1;
        if let Some(r) = &self.forcing {
            r.add_to(t, k);
        }
        if !all_finite(k) {
            return Err(Error::NonFiniteRhs { t });
        }
        Ok(())
    }
}

impl Stepper for ErkStepper {
    fn dim(&self) -> usize {
        self.n
    }

    fn order(&self) -> usize {
        self.table.order()
    }

    fn embedding_order(&self) -> Option<usize> {
        self.table.embedding_order()
    }

    fn attempt_step(&mut self, t: f64, h: f64, y: &[f64], _ctx: &mut StepContext<'_>) -> Result<StepAttempt> {
        let s = self.table.stages();
        for i in 0..s {
            self.z.copy_from_slice(y);
            for j in 0..i {
                axpy(h * self.table.a(i, j), &self.k[j], &mut self.z);
            }
            self.eval(t + self.table.c()[i] * h, i)?;
        }
        let mut y_new = y.to_vec();
        for j in 0..s {
            axpy(h * self.table.b()[j], &self.k[j], &mut y_new);
        }
        let error = self.table.b_embed().map(|be| {
            let mut e = vec![0.0; self.n];
            for j in 0..s {
                axpy(h * (self.table.b()[j] - be[j]), &self.k[j], &mut e);
            }
            e
        });
        let f_start = (self.table.c()[0] == 0.0).then(|| self.k[0].clone());
        Ok(StepAttempt {
            y: y_new,
            error,
            f_start,
        })
    }

    fn full_rhs(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(t, y, out);
        self.stats.fe_evals += 1;
        self.stats.full_rhs_calls += 1;
        if let Some(r) = &self.forcing {
            r.add_to(t, out);
        }
        if !all_finite(out) {
            return Err(Error::NonFiniteRhs { t });
        }
        Ok(())
    }

    fn stats(&self) -> StepperStats {
        self.stats
    }

    fn clear_stats(&mut self) {
        self.stats = StepperStats::default();
    }

    fn resize(&mut self, n: usize) -> Result<()> {
        self.n = n;
        self.k = vec![vec![0.0; n]; self.table.stages()];
        self.z = vec![0.0; n];
        self.forcing = None;
        Ok(())
    }

    fn set_forcing(&mut self, forcing: Option<PolynomialForcing>) {
        self.forcing = forcing;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::Interpolant;
    use crate::tables::catalog;

    fn one_step(stepper: &mut ErkStepper, t: f64, h: f64, y: &[f64]) -> StepAttempt {
        let mut interp = Interpolant::default();
        let w = vec![1.0; y.len()];
        let mut ctx = StepContext {
            interp: &mut interp,
            weights: &w,
            step: 0,
        };
        stepper.attempt_step(t, h, y, &mut ctx).unwrap()
    }

    #[test]
    fn forward_euler_constant_rhs() {
        let t = catalog::butcher("forward_euler_1").unwrap();
        let mut st = ErkStepper::new(t, Box::new(|_, _, f| f[0] = 1.0), 1).unwrap();
        let r = one_step(&mut st, 0.0, 0.25, &[0.0]);
        assert_eq!(r.y, vec![0.25]);
        assert!(r.error.is_none());
        assert_eq!(st.stats().fe_evals, 1);
    }

    #[test]
    fn heun_euler_closed_form() {
        let lambda = -0.7;
        let t = catalog::butcher("heun_euler_2_1").unwrap();
        let mut st = ErkStepper::new(t, Box::new(move |_, y, f| f[0] = lambda * y[0]), 1).unwrap();
        let (h, y0) = (0.3, 2.0);
        let r = one_step(&mut st, 0.0, h, &[y0]);
        let z = h * lambda;
        assert!((r.y[0] - y0 * (1.0 + z + z * z / 2.0)).abs() < 1e-15);
        assert!((r.error.unwrap()[0] - y0 * z * z / 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rhs_is_stationary() {
        for name in catalog::BUTCHER_NAMES {
            let t = catalog::butcher(name).unwrap();
            if t.kind() != TableKind::Explicit {
                continue;
            }
            let mut st = ErkStepper::new(t, Box::new(|_, _, f| f.fill(0.0)), 2).unwrap();
            let r = one_step(&mut st, 0.0, 0.1, &[1.0, -3.0]);
            assert_eq!(r.y, vec![1.0, -3.0]);
            if let Some(e) = r.error {
                assert_eq!(e, vec![0.0, 0.0]);
            }
        }
    }

    #[test]
    fn full_rhs_counts_and_matches_stage_one() {
        let t = catalog::butcher("bogacki_shampine_3_2").unwrap();
        let mut st = ErkStepper::new(t, Box::new(|t, y, f| f[0] = t * y[0]), 1).unwrap();
        let mut out = [0.0];
        st.full_rhs(2.0, &[1.0], &mut out).unwrap();
        assert_eq!(out, [2.0]);
        assert_eq!(st.stats().fe_evals, 1);
        let r = one_step(&mut st, 2.0, 0.1, &[1.0]);
        assert_eq!(r.f_start.unwrap(), vec![2.0]);
    }

    #[test]
    fn non_finite_rhs_is_recoverable() {
        let t = catalog::butcher("forward_euler_1").unwrap();
        let mut st = ErkStepper::new(t, Box::new(|_, _, f| f[0] = f64::NAN), 1).unwrap();
        let mut interp = Interpolant::default();
        let mut ctx = StepContext {
            interp: &mut interp,
            weights: &[1.0],
            step: 0,
        };
        let e = st.attempt_step(0.0, 0.1, &[1.0], &mut ctx).unwrap_err();
        assert!(e.is_recoverable());
    }

    #[test]
    fn rejects_implicit_table() {
        let t = catalog::butcher("backward_euler_1").unwrap();
        assert!(ErkStepper::new(t, Box::new(|_, _, _| {}), 1).is_err());
    }
}
