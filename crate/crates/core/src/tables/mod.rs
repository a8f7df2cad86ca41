//! Runge–Kutta and MRI coefficient tables.
//!
//! A [`ButcherTable`] holds `(A, b, b̃, c)` for an explicit or diagonally
//! implicit method; an [`ArkTablePair`] pairs an explicit and an implicit
//! table with a shared stage count; an [`MriCoupling`] holds the
//! `Ω^{k}`, `Γ^{k}` coupling matrices of a multirate infinitesimal method.
//! Constructors validate the structural invariants, so any value of these
//! types can be handed to a stepper as-is.

pub mod catalog;
mod io;
mod mri;
mod order;

pub use io::{load_table, parse_table, serialize_butcher, serialize_coupling, TableRecord};
pub use mri::{mis_third_order_residual, mis_to_mri, MriStageKind};
pub use order::{ark_coupling_residuals, order_condition_residuals, OrderCondition, WeightSet};

use crate::error::TableError;

/// Tolerance used for the row-sum consistency warning.
const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Explicit,
    Dirk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTable {
    name: String,
    kind: TableKind,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    b_embed: Option<Vec<f64>>,
    c: Vec<f64>,
    order: usize,
    embedding_order: Option<usize>,
}

fn check_len(what: &'static str, v: &[f64], s: usize) -> Result<(), TableError> {
    if v.len() != s {
        return Err(TableError::Shape {
            what,
            expected: s,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(TableError::NonFinite(what));
    }
    Ok(())
}

impl ButcherTable {
    /// Validates shape and triangular structure. A row-sum mismatch
    /// `|c_i - Σ_j A_ij| > 1e-12` is logged, not rejected.
    pub fn new(
        kind: TableKind,
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
        order: usize,
    ) -> Result<Self, TableError> {
        let s = b.len();
        if s == 0 {
            return Err(TableError::Empty);
        }
        if a.len() != s {
            return Err(TableError::Shape {
                what: "A",
                expected: s,
                found: a.len(),
            });
        }
        for row in &a {
            check_len("A row", row, s)?;
        }
        check_len("b", &b, s)?;
        check_len("c", &c, s)?;
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                match kind {
                    TableKind::Explicit if j >= i => {
                        return Err(TableError::NotStrictlyLower {
                            row: i,
                            col: j,
                            value: v,
                        })
                    }
                    TableKind::Dirk if j > i => {
                        return Err(TableError::NotLowerTriangular {
                            row: i,
                            col: j,
                            value: v,
                        })
                    }
                    _ => {}
                }
            }
        }
        let table = ButcherTable {
            name: String::new(),
            kind,
            a,
            b,
            b_embed: None,
            c,
            order,
            embedding_order: None,
        };
        for (i, row) in table.a.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - table.c[i]).abs() > ROW_SUM_TOL {
                log::warn!(
                    "table row {i}: sum of A = {sum} differs from c = {}",
                    table.c[i]
                );
            }
        }
        Ok(table)
    }

    pub fn with_embedding(mut self, b_embed: Vec<f64>, order: usize) -> Result<Self, TableError> {
        check_len("embedding b", &b_embed, self.stages())?;
        self.b_embed = Some(b_embed);
        self.embedding_order = Some(order);
        Ok(self)
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn a_rows(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn b_embed(&self) -> Option<&[f64]> {
        self.b_embed.as_deref()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn embedding_order(&self) -> Option<usize> {
        self.embedding_order
    }

    /// Temporal adaptivity needs an embedding.
    pub fn is_adaptive(&self) -> bool {
        self.b_embed.is_some()
    }

    /// `b` equals the last row of `A`.
    pub fn is_stiffly_accurate(&self) -> bool {
        let last = &self.a[self.stages() - 1];
        last.iter().zip(&self.b).all(|(x, y)| x == y)
    }

    /// `c` is nondecreasing.
    pub fn has_sorted_abscissae(&self) -> bool {
        self.c.windows(2).all(|w| w[0] <= w[1])
    }

    /// Whether column `j` of `A` (below row `j`) and of `b`, `b̃` is all zero,
    /// i.e. stage `j`'s right-hand side never enters the step.
    pub fn stage_unused(&self, j: usize) -> bool {
        (0..self.stages()).all(|i| self.a[i][j] == 0.0)
            && self.b[j] == 0.0
            && self.b_embed.as_ref().is_none_or(|e| e[j] == 0.0)
    }
}

/// Explicit and implicit tables of an additive method.
#[derive(Debug, Clone, PartialEq)]
pub struct ArkTablePair {
    name: String,
    explicit: ButcherTable,
    implicit: ButcherTable,
}

impl ArkTablePair {
    pub fn new(explicit: ButcherTable, implicit: ButcherTable) -> Result<Self, TableError> {
        if explicit.stages() != implicit.stages() {
            return Err(TableError::StageCountMismatch {
                explicit: explicit.stages(),
                implicit: implicit.stages(),
            });
        }
        if explicit.kind() != TableKind::Explicit {
            let (row, col, value) = first_upper_or_diag(&explicit);
            return Err(TableError::NotStrictlyLower { row, col, value });
        }
        Ok(ArkTablePair {
            name: String::new(),
            explicit,
            implicit,
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn explicit(&self) -> &ButcherTable {
        &self.explicit
    }

    pub fn implicit(&self) -> &ButcherTable {
        &self.implicit
    }

    pub fn stages(&self) -> usize {
        self.explicit.stages()
    }
}

fn first_upper_or_diag(t: &ButcherTable) -> (usize, usize, f64) {
    for i in 0..t.stages() {
        for j in i..t.stages() {
            if t.a(i, j) != 0.0 {
                return (i, j, t.a(i, j));
            }
        }
    }
    (0, 0, 0.0)
}

/// Coupling coefficients of an MRI method: `ω_{ij}(θ) = Σ_k Ω^{k}_{ij} θ^k`
/// and likewise for `γ` with `Γ^{k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MriCoupling {
    name: String,
    c: Vec<f64>,
    omega: Vec<Vec<Vec<f64>>>,
    gamma: Vec<Vec<Vec<f64>>>,
    order: usize,
}

impl MriCoupling {
    /// `omega` and `gamma` hold one `s×s` matrix per power `k = 0..=K`;
    /// pass an empty list for an absent partition.
    pub fn new(
        c: Vec<f64>,
        omega: Vec<Vec<Vec<f64>>>,
        gamma: Vec<Vec<Vec<f64>>>,
        order: usize,
    ) -> Result<Self, TableError> {
        let s = c.len();
        if s == 0 {
            return Err(TableError::Empty);
        }
        check_len("c", &c, s)?;
        let degree = omega.len().max(gamma.len());
        if degree == 0 {
            return Err(TableError::Empty);
        }
        if degree > 3 {
            return Err(TableError::DegreeTooHigh(degree - 1));
        }
        let pad = |mut m: Vec<Vec<Vec<f64>>>, what| -> Result<_, TableError> {
            for g in &m {
                if g.len() != s {
                    return Err(TableError::Shape {
                        what,
                        expected: s,
                        found: g.len(),
                    });
                }
                for row in g {
                    check_len(what, row, s)?;
                }
            }
            m.resize(degree, vec![vec![0.0; s]; s]);
            Ok(m)
        };
        let omega = pad(omega, "Omega")?;
        let gamma = pad(gamma, "Gamma")?;
        if c[0] != 0.0 || c[s - 1] != 1.0 {
            return Err(TableError::AbscissaeEndpoints);
        }
        for i in 1..s {
            if c[i] < c[i - 1] {
                return Err(TableError::UnsortedAbscissae {
                    index: i,
                    prev: i - 1,
                    value: c[i],
                });
            }
        }
        for k in 0..degree {
            for i in 0..s {
                for j in 0..s {
                    if j >= i && omega[k][i][j] != 0.0 {
                        return Err(TableError::NotSolveDecoupled(format!(
                            "Omega^{k}[{i}][{j}] is nonzero on or above the diagonal"
                        )));
                    }
                    if j > i && gamma[k][i][j] != 0.0 {
                        return Err(TableError::NotSolveDecoupled(format!(
                            "Gamma^{k}[{i}][{j}] is nonzero above the diagonal"
                        )));
                    }
                }
                if i > 0 && gamma[k][i][i] != 0.0 && c[i] != c[i - 1] {
                    return Err(TableError::NotSolveDecoupled(format!(
                        "stage {i} has an implicit diagonal entry but a nonzero abscissa increment"
                    )));
                }
            }
        }
        Ok(MriCoupling {
            name: String::new(),
            c,
            omega,
            gamma,
            order,
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stages(&self) -> usize {
        self.c.len()
    }

    /// Number of polynomial coefficients per entry, `K + 1`.
    pub fn degree_count(&self) -> usize {
        self.omega.len()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn omega(&self, k: usize, i: usize, j: usize) -> f64 {
        self.omega[k][i][j]
    }

    pub fn gamma(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[k][i][j]
    }

    pub fn omega_matrices(&self) -> &[Vec<Vec<f64>>] {
        &self.omega
    }

    pub fn gamma_matrices(&self) -> &[Vec<Vec<f64>>] {
        &self.gamma
    }

    /// `Σ_k Ω^{k}_{ij} / (k+1)`: the explicit ARK coefficient a zero-length
    /// stage reduces to.
    pub fn explicit_ark_coefficient(&self, i: usize, j: usize) -> f64 {
        (0..self.degree_count())
            .map(|k| self.omega[k][i][j] / (k + 1) as f64)
            .sum()
    }

    pub fn implicit_ark_coefficient(&self, i: usize, j: usize) -> f64 {
        (0..self.degree_count())
            .map(|k| self.gamma[k][i][j] / (k + 1) as f64)
            .sum()
    }

    /// Whether any later stage's forcing uses the slow explicit RHS of stage `j`.
    pub fn explicit_column_used(&self, j: usize) -> bool {
        self.omega
            .iter()
            .any(|g| (0..self.stages()).any(|i| g[i][j] != 0.0))
    }

    pub fn implicit_column_used(&self, j: usize) -> bool {
        self.gamma
            .iter()
            .any(|g| (0..self.stages()).any(|i| i != j && g[i][j] != 0.0))
    }

    pub fn has_explicit_part(&self) -> bool {
        self.omega.iter().flatten().flatten().any(|v| *v != 0.0)
    }

    pub fn has_implicit_part(&self) -> bool {
        self.gamma.iter().flatten().flatten().any(|v| *v != 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_euler_is_not_adaptive() {
        let t = ButcherTable::new(TableKind::Explicit, vec![vec![0.0]], vec![1.0], vec![0.0], 1)
            .unwrap();
        assert!(!t.is_adaptive());
        assert_eq!(t.stages(), 1);
    }

    #[test]
    fn explicit_rejects_diagonal() {
        let err = ButcherTable::new(
            TableKind::Explicit,
            vec![vec![0.0, 0.5], vec![1.0, 0.0]],
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            2,
        )
        .unwrap_err();
        assert!(matches!(err, TableError::NotStrictlyLower { row: 0, col: 1, .. }));
    }

    #[test]
    fn dirk_allows_diagonal_but_not_upper() {
        assert!(ButcherTable::new(TableKind::Dirk, vec![vec![1.0]], vec![1.0], vec![1.0], 1).is_ok());
        let err = ButcherTable::new(
            TableKind::Dirk,
            vec![vec![0.5, 0.1], vec![0.5, 0.5]],
            vec![0.5, 0.5],
            vec![0.6, 1.0],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, TableError::NotLowerTriangular { .. }));
    }

    #[test]
    fn pair_stage_counts_must_match() {
        let e = catalog::butcher("heun_euler_2_1").unwrap();
        let i = catalog::butcher("backward_euler_1").unwrap();
        assert!(matches!(
            ArkTablePair::new(e, i),
            Err(TableError::StageCountMismatch { .. })
        ));
    }

    #[test]
    fn coupling_structure_checks() {
        let z = vec![vec![0.0; 3]; 3];
        let mut bad = z.clone();
        bad[1][1] = 1.0;
        assert!(matches!(
            MriCoupling::new(vec![0.0, 0.5, 1.0], vec![bad], vec![], 1),
            Err(TableError::NotSolveDecoupled(_))
        ));
        // implicit diagonal entry on a stage with nonzero Δc
        let mut g = z.clone();
        g[1][0] = 0.5;
        g[1][1] = 0.5;
        assert!(matches!(
            MriCoupling::new(vec![0.0, 0.5, 1.0], vec![], vec![g], 1),
            Err(TableError::NotSolveDecoupled(_))
        ));
        assert!(matches!(
            MriCoupling::new(vec![0.0, 0.5, 0.9], vec![z.clone()], vec![], 1),
            Err(TableError::AbscissaeEndpoints)
        ));
        assert!(matches!(
            MriCoupling::new(vec![0.0, 0.6, 0.5, 1.0], vec![vec![vec![0.0; 4]; 4]], vec![], 1),
            Err(TableError::UnsortedAbscissae { .. })
        ));
        let four = vec![z.clone(), z.clone(), z.clone(), z];
        assert!(matches!(
            MriCoupling::new(vec![0.0, 0.5, 1.0], four, vec![], 1),
            Err(TableError::DegreeTooHigh(3))
        ));
    }

    #[test]
    fn stiffly_accurate_detection() {
        assert!(catalog::butcher("ark436l2sa_dirk_4_3").unwrap().is_stiffly_accurate());
        assert!(!catalog::butcher("ark436l2sa_erk_4_3").unwrap().is_stiffly_accurate());
    }
}
