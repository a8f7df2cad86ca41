//! Exact rational arithmetic as an oracle for the floating-point steppers.

use num_rational::BigRational;
use onestep::erk::ErkStepper;
use onestep::interp::Interpolant;
use onestep::stepper::{StepContext, Stepper};
use onestep::tables::{catalog, ButcherTable, TableKind};

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn zero() -> BigRational {
    q(0.0)
}

fn close(exact: &BigRational, approx: f64, tol: f64) -> bool {
    let d = exact - q(approx);
    d <= q(tol) && -d <= q(tol)
}

// dyadic entries keep the system exact in binary
const MATRIX: [[f64; 2]; 2] = [[-1.0, 0.5], [-0.25, -2.0]];

fn linear(_: f64, y: &[f64], out: &mut [f64]) {
    for i in 0..2 {
        out[i] = MATRIX[i][0] * y[0] + MATRIX[i][1] * y[1];
    }
}

fn apply(y: &[BigRational]) -> Vec<BigRational> {
    (0..2)
        .map(|i| q(MATRIX[i][0]) * &y[0] + q(MATRIX[i][1]) * &y[1])
        .collect()
}

/// Exact explicit step on `y' = M y`, returning `(y_next, y_embedded)`.
fn exact_step(t: &ButcherTable, h: f64, y0: &[f64]) -> (Vec<BigRational>, Option<Vec<BigRational>>) {
    let h = q(h);
    let y0: Vec<BigRational> = y0.iter().map(|v| q(*v)).collect();
    let s = t.stages();
    let mut k: Vec<Vec<BigRational>> = Vec::with_capacity(s);
    for i in 0..s {
        let mut z = y0.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = q(t.a(i, j));
            for c in 0..2 {
                z[c] += &h * &a * &kj[c];
            }
        }
        k.push(apply(&z));
    }
    let combine = |w: &[f64]| {
        let mut y = y0.clone();
        for (j, kj) in k.iter().enumerate() {
            let b = q(w[j]);
            for c in 0..2 {
                y[c] += &h * &b * &kj[c];
            }
        }
        y
    };
    (combine(t.b()), t.b_embed().map(combine))
}

#[test]
fn explicit_steps_match_exact_arithmetic() {
    let y0 = [1.0, -0.5];
    let h = 0.125;
    for name in catalog::BUTCHER_NAMES {
        let t = catalog::butcher(name).unwrap();
        if t.kind() != TableKind::Explicit {
            continue;
        }
        let (exact, embedded) = exact_step(&t, h, &y0);
        let mut st = ErkStepper::new(t, Box::new(linear), 2).unwrap();
        let mut interp = Interpolant::default();
        let mut ctx = StepContext {
            interp: &mut interp,
            weights: &[1.0, 1.0],
            step: 0,
        };
        let r = st.attempt_step(0.0, h, &y0, &mut ctx).unwrap();
        for (c, (e, y)) in exact.iter().zip(&r.y).enumerate() {
            assert!(close(e, *y, 1e-15), "{name} component {c}");
        }
        if let (Some(e), Some(err)) = (embedded, r.error) {
            for c in 0..2 {
                assert!(close(&(&exact[c] - &e[c]), err[c], 1e-15), "{name} embedding {c}");
            }
        }
    }
}

/// `b·A^k·1 = 1/(k+1)!` for `k < order`, the linear order conditions.
#[test]
fn linear_order_conditions_hold_in_exact_arithmetic() {
    for name in catalog::BUTCHER_NAMES {
        let t = catalog::butcher(name).unwrap();
        let s = t.stages();
        let mut v: Vec<BigRational> = vec![q(1.0); s];
        let mut factorial = q(1.0);
        for k in 0..t.order() {
            factorial *= q((k + 1) as f64);
            let lhs = t.b().iter().zip(&v).fold(zero(), |acc, (b, x)| acc + q(*b) * x);
            let d = lhs - factorial.recip();
            assert!(d <= q(1e-14) && -d <= q(1e-14), "{name} k={k}");
            v = (0..s)
                .map(|i| (0..s).fold(zero(), |acc, j| acc + q(t.a(i, j)) * &v[j]))
                .collect();
        }
    }
}
