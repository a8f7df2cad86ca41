use super::{ButcherTable, MriCoupling, TableKind};
use crate::error::TableError;

/// How the MRI stage loop advances stage `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MriStageKind {
    /// `Δc_i > 0`: solve the forced fast problem over the stage interval.
    FastIvp { delta_c: f64 },
    /// `Δc_i = 0` and no implicit diagonal entry.
    ExplicitArk,
    /// `Δc_i = 0` with `A^I_ii ≠ 0`.
    ImplicitArk { diagonal: f64 },
}

impl MriCoupling {
    /// Kind of stage `i` (zero-based, `1 ≤ i < s`; stage 0 is the step start).
    pub fn stage_kind(&self, i: usize) -> MriStageKind {
        assert!(i >= 1 && i < self.stages(), "stage index {i} out of range");
        let dc = self.c()[i] - self.c()[i - 1];
        if dc > 0.0 {
            return MriStageKind::FastIvp { delta_c: dc };
        }
        let diag = self.implicit_ark_coefficient(i, i);
        if diag != 0.0 {
            MriStageKind::ImplicitArk { diagonal: diag }
        } else {
            MriStageKind::ExplicitArk
        }
    }
}

impl MriCoupling {
    /// The method that takes `m` equal substeps of this coupling per step.
    /// The last stage of each substep is the first stage of the next.
    pub fn compose(&self, m: usize) -> Result<MriCoupling, TableError> {
        if m == 0 {
            return Err(TableError::Empty);
        }
        let s = self.stages();
        let total = 1 + m * (s - 1);
        let index = |q: usize, i: usize| q * (s - 1) + i;
        let mf = m as f64;
        let mut c = vec![0.0; total];
        let mut omega = vec![vec![vec![0.0; total]; total]; self.degree_count()];
        let mut gamma = omega.clone();
        for q in 0..m {
            for i in 0..s {
                c[index(q, i)] = (q as f64 + self.c()[i]) / mf;
            }
            for k in 0..self.degree_count() {
                for i in 1..s {
                    for j in 0..=i {
                        omega[k][index(q, i)][index(q, j)] = self.omega(k, i, j) / mf;
                        gamma[k][index(q, i)][index(q, j)] = self.gamma(k, i, j) / mf;
                    }
                }
            }
        }
        c[total - 1] = 1.0;
        let name = format!("{}_x{m}", self.name());
        Ok(MriCoupling::new(c, omega, gamma, self.order())?.named(name))
    }
}

fn require_sorted_explicit(slow: &ButcherTable) -> Result<(), TableError> {
    if slow.kind() != TableKind::Explicit {
        return Err(TableError::NotStrictlyLower {
            row: 0,
            col: 0,
            value: slow.a(0, 0),
        });
    }
    for i in 1..slow.stages() {
        if slow.c()[i] < slow.c()[i - 1] {
            return Err(TableError::UnsortedAbscissae {
                index: i,
                prev: i - 1,
                value: slow.c()[i],
            });
        }
    }
    Ok(())
}

/// Coupling of the multirate infinitesimal step method built on `slow`:
/// `c = [c^E, 1]`, `Ω^{0}` rows are successive differences of the rows of
/// `A^E` with `b^E` closing the last row, `Γ = 0`.
pub fn mis_to_mri(slow: &ButcherTable) -> Result<MriCoupling, TableError> {
    require_sorted_explicit(slow)?;
    let sh = slow.stages();
    let s = sh + 1;
    let mut c = slow.c().to_vec();
    c.push(1.0);
    let mut omega = vec![vec![0.0; s]; s];
    for i in 1..s {
        for j in 0..sh {
            let upper = if i < sh { slow.a(i, j) } else { slow.b()[j] };
            omega[i][j] = upper - slow.a(i - 1, j);
        }
    }
    let coupling = MriCoupling::new(c, vec![omega], vec![], slow.order().min(2))?;
    let order = if slow.order() >= 3 && mis_third_order_residual(slow).abs() <= 1e-12 {
        3
    } else {
        slow.order().min(2)
    };
    Ok(MriCoupling { order, ..coupling }.named(format!("mis_{}", slow.name())))
}

/// Residual of the extra condition a third-order slow table must meet for its
/// multirate infinitesimal step method to be third order.
pub fn mis_third_order_residual(slow: &ButcherTable) -> f64 {
    let s = slow.stages();
    let c = slow.c();
    let ac: Vec<f64> = (0..s)
        .map(|i| (0..s).map(|j| slow.a(i, j) * c[j]).sum())
        .collect();
    let mut sum = 0.0;
    for i in 1..s {
        sum += (c[i] - c[i - 1]) * (ac[i] + ac[i - 1]);
    }
    sum += (1.0 - c[s - 1]) * (0.5 + ac[s - 1]);
    sum - 1.0 / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::catalog;

    fn forward_euler() -> ButcherTable {
        ButcherTable::new(TableKind::Explicit, vec![vec![0.0]], vec![1.0], vec![0.0], 1).unwrap()
    }

    #[test]
    fn mis_of_forward_euler() {
        let m = mis_to_mri(&forward_euler()).unwrap();
        assert_eq!(m.stages(), 2);
        assert_eq!(m.c(), &[0.0, 1.0]);
        assert_eq!(m.omega_matrices()[0], vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert!(!m.has_implicit_part());
        assert_eq!(m.stage_kind(1), MriStageKind::FastIvp { delta_c: 1.0 });
    }

    #[test]
    fn mis_rejects_unsorted() {
        let t = ButcherTable::new(
            TableKind::Explicit,
            vec![vec![0.0, 0.0, 0.0], vec![0.8, 0.0, 0.0], vec![0.2, 0.1, 0.0]],
            vec![0.3, 0.3, 0.4],
            vec![0.0, 0.8, 0.3],
            1,
        )
        .unwrap();
        assert!(matches!(mis_to_mri(&t), Err(TableError::UnsortedAbscissae { .. })));
    }

    #[test]
    fn third_order_residual_examples() {
        assert!(mis_third_order_residual(&catalog::butcher("knoth_wolke_3").unwrap()).abs() <= 1e-14);
        let heun = catalog::butcher("explicit_trapezoid_2").unwrap();
        assert!((mis_third_order_residual(&heun) + 1.0 / 3.0).abs() < 1e-15);
        assert!((mis_third_order_residual(&forward_euler()) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn stage_kinds() {
        let z = vec![vec![0.0; 3]; 3];
        let mut om = z.clone();
        om[1][0] = 1.0;
        om[2][0] = -0.5;
        om[2][1] = 0.5;
        let explicit = MriCoupling::new(vec![0.0, 1.0, 1.0], vec![om.clone()], vec![], 2).unwrap();
        assert_eq!(explicit.stage_kind(2), MriStageKind::ExplicitArk);
        let mut g = z;
        g[2][2] = 0.25;
        let implicit = MriCoupling::new(vec![0.0, 1.0, 1.0], vec![om], vec![g], 2).unwrap();
        assert_eq!(implicit.stage_kind(2), MriStageKind::ImplicitArk { diagonal: 0.25 });
    }

    #[test]
    fn composition_structure() {
        let base = catalog::coupling("imex_mri_gark_trapezoidal").unwrap();
        let m = base.compose(3).unwrap();
        assert_eq!(m.stages(), 7);
        let third = 1.0 / 3.0;
        let expect = [0.0, third, third, 2.0 * third, 2.0 * third, 1.0, 1.0];
        for (a, b) in m.c().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let kinds: Vec<_> = (1..7).map(|i| m.stage_kind(i)).collect();
        let fast = kinds.iter().filter(|k| matches!(k, MriStageKind::FastIvp { .. })).count();
        let implicit = kinds.iter().filter(|k| matches!(k, MriStageKind::ImplicitArk { .. })).count();
        assert_eq!((fast, implicit), (3, 3));
        assert_eq!(m.order(), base.order());
        assert_eq!(base.compose(1).unwrap().omega_matrices(), base.omega_matrices());
    }

    #[test]
    fn kw3_mis_is_third_order() {
        let m = catalog::coupling("mis_kw3").unwrap();
        assert_eq!(m.order(), 3);
        assert_eq!(m.stages(), 4);
        let h = catalog::coupling("mis_explicit_trapezoid_2").unwrap();
        assert_eq!(h.order(), 2);
    }
}
