//! Dense and banded matrices with partial-pivoting LU.
//!
//! Banded storage follows the LINPACK layout: each column keeps `ml + mu`
//! entries above the diagonal (room for fill-in from row interchanges) and
//! `ml` below it.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(n_rows, n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::LengthMismatch {
                    expected: n_cols,
                    found: row.len(),
                });
            }
            m.data[i * n_cols..(i + 1) * n_cols].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn lu(&self) -> Result<DenseLu> {
        DenseLu::factor(self.clone())
    }
}

/// LU factors of a square dense matrix, `P A = L U`.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: DenseMatrix,
    pivots: Vec<usize>,
}

impl DenseLu {
    pub fn factor(mut a: DenseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Usage(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut pivots = vec![0; n];
        for k in 0..n {
            let mut p = k;
            let mut best = a.get(k, k).abs();
            for i in k + 1..n {
                let v = a.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularMatrix { column: k });
            }
            pivots[k] = p;
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
            }
            let pivot = a.get(k, k);
            for i in k + 1..n {
                let l = a.get(i, k) / pivot;
                a.set(i, k, l);
                if l != 0.0 {
                    for j in k + 1..n {
                        let akj = a.get(k, j);
                        a.add(i, j, -l * akj);
                    }
                }
            }
        }
        Ok(DenseLu { lu: a, pivots })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Overwrites `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.lu.rows;
        for k in 0..n {
            b.swap(k, self.pivots[k]);
        }
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.lu.get(i, j) * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.lu.get(i, j) * b[j];
            }
            b[i] = s / self.lu.get(i, i);
        }
    }
}

/// Square banded matrix with lower bandwidth `ml` and upper bandwidth `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    ml: usize,
    mu: usize,
    /// Storage upper bandwidth, `ml + mu`.
    smu: usize,
    /// Column-major, `ld = smu + ml + 1` entries per column.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, ml: usize, mu: usize) -> Self {
        let ml = ml.min(n.saturating_sub(1));
        let mu = mu.min(n.saturating_sub(1));
        let smu = ml + mu;
        BandedMatrix {
            n,
            ml,
            mu,
            smu,
            data: vec![0.0; n * (smu + ml + 1)],
        }
    }

    pub fn identity(n: usize, ml: usize, mu: usize) -> Self {
        let mut m = Self::zeros(n, ml, mu);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.ml
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.mu
    }

    #[inline]
    fn ld(&self) -> usize {
        self.smu + self.ml + 1
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ld() + (i + self.smu - j)
    }

    /// Whether `(i, j)` lies inside the declared band.
    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i <= j + self.ml && j <= i + self.mu
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Panics when `(i, j)` is outside the band.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let lo = i.saturating_sub(self.ml);
            let hi = (i + self.mu).min(self.n - 1);
            *yi = (lo..=hi).map(|j| self.get(i, j) * x[j]).sum();
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            let lo = j.saturating_sub(self.mu);
            let hi = (j + self.ml).min(self.n.saturating_sub(1));
            for i in lo..=hi {
                d.set(i, j, self.get(i, j));
            }
        }
        d
    }

    pub fn lu(&self) -> Result<BandedLu> {
        BandedLu::factor(self.clone())
    }
}

/// LU factors of a banded matrix with partial pivoting.
#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(mut a: BandedMatrix) -> Result<Self> {
        let n = a.n;
        let ml = a.ml;
        let smu = a.smu;
        // fill region above the declared upper band starts out zero
        for j in 0..n {
            for i in j.saturating_sub(smu)..j.saturating_sub(a.mu) {
                let k = a.idx(i, j);
                a.data[k] = 0.0;
            }
        }
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + ml).min(n - 1);
            let mut p = k;
            let mut best = a.data[a.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = a.data[a.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularMatrix { column: k });
            }
            pivots[k] = p;
            let last_col = (k + smu).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (ik, ip) = (a.idx(k, j), a.idx(p, j));
                    a.data.swap(ik, ip);
                }
            }
            let pivot = a.data[a.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = a.idx(i, k);
                a.data[ik] /= pivot;
            }
            for j in k + 1..=last_col {
                let akj = a.data[a.idx(k, j)];
                if akj == 0.0 {
                    continue;
                }
                for i in k + 1..=last_row {
                    let l = a.data[a.idx(i, k)];
                    let ij = a.idx(i, j);
                    a.data[ij] -= l * akj;
                }
            }
        }
        Ok(BandedLu { lu: a, pivots })
    }

    pub fn dim(&self) -> usize {
        self.lu.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + a.ml).min(n - 1) {
                    b[i] -= a.data[a.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            b[k] /= a.data[a.idx(k, k)];
            let bk = b[k];
            if bk != 0.0 {
                for i in k.saturating_sub(a.smu)..k {
                    b[i] -= a.data[a.idx(i, k)] * bk;
                }
            }
        }
    }
}

/// Either storage format, used for Newton and mass matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Dense(DenseMatrix),
    Banded(BandedMatrix),
}

impl Matrix {
    pub fn dim(&self) -> usize {
        match self {
            Matrix::Dense(m) => m.rows(),
            Matrix::Banded(m) => m.dim(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Matrix::Dense(m) => m.get(i, j),
            Matrix::Banded(m) => m.get(i, j),
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Matrix::Dense(m) => m.matvec(x, y),
            Matrix::Banded(m) => m.matvec(x, y),
        }
    }

    pub fn lu(&self) -> Result<LuFactors> {
        Ok(match self {
            Matrix::Dense(m) => LuFactors::Dense(m.lu()?),
            Matrix::Banded(m) => LuFactors::Banded(m.lu()?),
        })
    }
}

#[derive(Debug, Clone)]
pub enum LuFactors {
    Dense(DenseLu),
    Banded(BandedLu),
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        match self {
            LuFactors::Dense(f) => f.dim(),
            LuFactors::Banded(f) => f.dim(),
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            LuFactors::Dense(f) => f.solve_in_place(b),
            LuFactors::Banded(f) => f.solve_in_place(b),
        }
    }
}

/// Factors `a` and solves `a x = b`.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::LengthMismatch {
            expected: a.dim(),
            found: b.len(),
        });
    }
    let f = a.lu()?;
    let mut x = b.to_vec();
    f.solve_in_place(&mut x);
    Ok(x)
}
