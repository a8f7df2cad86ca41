use super::matrix::{LuFactors, Matrix};
use crate::error::{Error, Result};

/// Absolute tolerance, scalar or per component.
#[derive(Debug, Clone, PartialEq)]
pub enum AbsTol {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl AbsTol {
    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        match self {
            AbsTol::Scalar(a) => *a,
            AbsTol::Vector(v) => v[i],
        }
    }

    fn check(&self, what: &str, n: Option<usize>) -> Result<()> {
        match self {
            AbsTol::Scalar(a) if !(*a >= 0.0) || !a.is_finite() => Err(Error::InvalidTolerances(
                format!("{what} must be finite and nonnegative, got {a}"),
            )),
            AbsTol::Vector(v) => {
                if let Some(n) = n {
                    if v.len() != n {
                        return Err(Error::LengthMismatch {
                            expected: n,
                            found: v.len(),
                        });
                    }
                }
                match v.iter().position(|a| !(*a >= 0.0) || !a.is_finite()) {
                    Some(i) => Err(Error::InvalidTolerances(format!(
                        "{what}[{i}] must be finite and nonnegative"
                    ))),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    fn all_zero(&self) -> bool {
        match self {
            AbsTol::Scalar(a) => *a == 0.0,
            AbsTol::Vector(v) => v.iter().all(|a| *a == 0.0),
        }
    }
}

impl From<f64> for AbsTol {
    fn from(a: f64) -> Self {
        AbsTol::Scalar(a)
    }
}

impl From<Vec<f64>> for AbsTol {
    fn from(a: Vec<f64>) -> Self {
        AbsTol::Vector(a)
    }
}

/// Relative and absolute tolerances; `ratol` (residual absolute tolerance)
/// is only consulted with a non-identity mass matrix and defaults to `atol`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: AbsTol,
    pub ratol: Option<AbsTol>,
}

impl Tolerances {
    pub fn new(rtol: f64, atol: impl Into<AbsTol>) -> Result<Self> {
        let t = Tolerances {
            rtol,
            atol: atol.into(),
            ratol: None,
        };
        t.validate(None)?;
        Ok(t)
    }

    pub fn with_residual(mut self, ratol: impl Into<AbsTol>) -> Result<Self> {
        self.ratol = Some(ratol.into());
        self.validate(None)?;
        Ok(self)
    }

    /// Checks the invariants, and vector lengths when `n` is given.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        if !(self.rtol >= 0.0) || !self.rtol.is_finite() {
            return Err(Error::InvalidTolerances(format!(
                "rtol must be finite and nonnegative, got {}",
                self.rtol
            )));
        }
        self.atol.check("atol", n)?;
        if let Some(r) = &self.ratol {
            r.check("ratol", n)?;
        }
        if self.rtol == 0.0 && self.atol.all_zero() {
            return Err(Error::InvalidTolerances(
                "rtol and atol cannot both be zero".into(),
            ));
        }
        Ok(())
    }

    pub fn residual_atol(&self) -> &AbsTol {
        self.ratol.as_ref().unwrap_or(&self.atol)
    }
}

/// Strictly positive reciprocal tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps raw weights, rejecting nonpositive or non-finite entries.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        match w.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
            Some(index) => Err(Error::IllegalWeight { index }),
            None => Ok(WeightVector(w)),
        }
    }

    pub fn uniform(n: usize, w: f64) -> Self {
        WeightVector(vec![w; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `sqrt( (1/N) sum (v_i w_i)^2 )`, accumulated in index order.
pub fn wrms_norm(v: &[f64], w: &WeightVector) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            found: v.len(),
        });
    }
    if v.is_empty() {
        return Err(Error::Usage("wrms_norm of an empty vector".into()));
    }
    Ok(wrms_unchecked(v, w.as_slice()))
}

#[inline]
pub(crate) fn wrms_unchecked(v: &[f64], w: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (vi, wi) in v.iter().zip(w) {
        let p = vi * wi;
        sum += p * p;
    }
    (sum / v.len() as f64).sqrt()
}

fn weights_from(r: &[f64], rtol: f64, atol: &AbsTol) -> Result<WeightVector> {
    let mut w = Vec::with_capacity(r.len());
    for (i, ri) in r.iter().enumerate() {
        let d = rtol * ri.abs() + atol.at(i);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::IllegalWeight { index: i });
        }
        w.push(1.0 / d);
    }
    Ok(WeightVector(w))
}

/// Error weights `w_i = 1 / (rtol |y_i| + atol_i)`.
pub fn error_weights(y: &[f64], tol: &Tolerances) -> Result<WeightVector> {
    if let AbsTol::Vector(a) = &tol.atol {
        if a.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: y.len(),
                found: a.len(),
            });
        }
    }
    weights_from(y, tol.rtol, &tol.atol)
}

/// Residual weights `sigma_i = 1 / (rtol |(M y)_i| + ratol_i)`.
pub fn residual_weights(mass: &MassOperator, y: &[f64], tol: &Tolerances) -> Result<WeightVector> {
    let ratol = tol.residual_atol();
    if let AbsTol::Vector(a) = ratol {
        if a.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: y.len(),
                found: a.len(),
            });
        }
    }
    match mass {
        MassOperator::Identity => weights_from(y, tol.rtol, ratol),
        MassOperator::Constant(m) => {
            let mut r = vec![0.0; y.len()];
            m.apply(y, &mut r);
            weights_from(&r, tol.rtol, ratol)
        }
    }
}

/// Constant nonsingular mass matrix with its factorization.
#[derive(Debug, Clone)]
pub struct ConstantMass {
    matrix: Matrix,
    lu: LuFactors,
}

impl ConstantMass {
    pub fn new(matrix: Matrix) -> Result<Self> {
        let lu = matrix.lu()?;
        Ok(ConstantMass { matrix, lu })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.matrix.matvec(x, out);
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.lu.solve_in_place(b);
    }
}

/// Mass operator `M` of `M y' = f(t, y)`; only identity or constant.
#[derive(Debug, Clone, Default)]
pub enum MassOperator {
    #[default]
    Identity,
    Constant(ConstantMass),
}

impl MassOperator {
    pub fn constant(matrix: Matrix) -> Result<Self> {
        Ok(MassOperator::Constant(ConstantMass::new(matrix)?))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, MassOperator::Identity)
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            MassOperator::Identity => None,
            MassOperator::Constant(m) => Some(m.matrix.dim()),
        }
    }

    /// `out = M x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            MassOperator::Identity => out.copy_from_slice(x),
            MassOperator::Constant(m) => m.apply(x, out),
        }
    }

    /// `b <- M^{-1} b`
    pub fn solve_in_place(&self, b: &mut [f64]) {
        if let MassOperator::Constant(m) = self {
            m.solve_in_place(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;

    #[test]
    fn wrms_examples() {
        let ones = WeightVector::uniform(4, 1.0);
        assert_eq!(wrms_norm(&[1.0; 4], &ones).unwrap(), 1.0);
        assert_eq!(wrms_norm(&[0.0; 4], &ones).unwrap(), 0.0);
        let w = WeightVector::new(vec![0.5, 3.0]).unwrap();
        let n = wrms_norm(&[2.0, 0.0], &w).unwrap();
        assert!((n - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wrms_length_mismatch() {
        let w = WeightVector::uniform(3, 1.0);
        assert!(matches!(
            wrms_norm(&[1.0, 2.0], &w),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn error_weight_examples() {
        let tol = Tolerances::new(0.1, 1.0).unwrap();
        let w = error_weights(&[10.0], &tol).unwrap();
        assert_eq!(w.as_slice(), &[0.5]);

        let tol = Tolerances::new(0.0, 1.0).unwrap();
        let w = error_weights(&[3.0, -7.0, 0.0], &tol).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0]);

        let tol = Tolerances::new(0.1, 0.0).unwrap();
        assert_eq!(
            error_weights(&[0.0], &tol),
            Err(Error::IllegalWeight { index: 0 })
        );
    }

    #[test]
    fn residual_weight_examples() {
        let tol = Tolerances::new(1e-3, vec![1e-6, 2e-6]).unwrap();
        let y = [0.3, -4.0];
        assert_eq!(
            residual_weights(&MassOperator::Identity, &y, &tol).unwrap(),
            error_weights(&y, &tol).unwrap()
        );

        let mut m = DenseMatrix::identity(1);
        m.scale(2.0);
        let mass = MassOperator::constant(Matrix::Dense(m)).unwrap();
        let tol = Tolerances::new(0.1, 5.0).unwrap().with_residual(1.0).unwrap();
        let s = residual_weights(&mass, &[1.0], &tol).unwrap();
        assert!((s.as_slice()[0] - 1.0 / 1.2).abs() < 1e-15);
    }

    #[test]
    fn residual_weight_zero_row() {
        // row of M that maps y to zero, with zero ratol
        let m = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let mass = MassOperator::constant(Matrix::Dense(m)).unwrap();
        let tol = Tolerances::new(0.1, 1.0).unwrap().with_residual(0.0).unwrap();
        assert_eq!(
            residual_weights(&mass, &[1.0, 1.0], &tol),
            Err(Error::IllegalWeight { index: 1 })
        );
    }

    #[test]
    fn tolerance_validation() {
        assert!(Tolerances::new(-1.0, 1.0).is_err());
        assert!(Tolerances::new(0.0, 0.0).is_err());
        assert!(Tolerances::new(1e-3, vec![1.0, -1.0]).is_err());
        assert!(Tolerances::new(0.0, vec![0.0, 1e-9]).is_ok());
        let t = Tolerances::new(1e-3, vec![1.0, 1.0]).unwrap();
        assert!(t.validate(Some(3)).is_err());
    }
}
