//! Built-in tables, looked up by name.
//!
//! Coefficients are written as ratios of integers below `2^53`, so each
//! entry is the correctly rounded value of its exact rational.

use super::{mis_to_mri, ArkTablePair, ButcherTable, MriCoupling, TableKind};
use crate::error::TableError;

fn r(p: i64, q: i64) -> f64 {
    p as f64 / q as f64
}

/// Names accepted by [`butcher`].
pub const BUTCHER_NAMES: &[&str] = &[
    "forward_euler_1",
    "explicit_trapezoid_2",
    "heun_euler_2_1",
    "bogacki_shampine_3_2",
    "knoth_wolke_3",
    "zonneveld_4_3",
    "cash_karp_5_4",
    "ark324l2sa_erk_3_2",
    "ark436l2sa_erk_4_3",
    "backward_euler_1",
    "ark324l2sa_dirk_3_2",
    "ark436l2sa_dirk_4_3",
];

pub const ARK_NAMES: &[&str] = &["ark324l2sa", "ark436l2sa"];

/// Names accepted by [`coupling`]; `mis_<table>` also works for any explicit
/// entry of [`BUTCHER_NAMES`] with sorted abscissae.
pub const COUPLING_NAMES: &[&str] = &[
    "mis_kw3",
    "mri_gark_erk33a",
    "mri_gark_irk21a",
    "imex_mri_gark_trapezoidal",
    "imex_mri_gark_trapezoidal_x3",
];

fn explicit(
    name: &str,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    q: usize,
    embed: Option<(Vec<f64>, usize)>,
) -> ButcherTable {
    let t = ButcherTable::new(TableKind::Explicit, a, b, c, q).expect("built-in table is valid");
    let t = match embed {
        Some((e, p)) => t.with_embedding(e, p).expect("built-in embedding is valid"),
        None => t,
    };
    t.named(name)
}

fn dirk(name: &str, a: Vec<Vec<f64>>, b_embed: Vec<f64>, c: Vec<f64>, q: usize, p: usize) -> ButcherTable {
    let b = a.last().cloned().unwrap();
    ButcherTable::new(TableKind::Dirk, a, b, c, q)
        .and_then(|t| t.with_embedding(b_embed, p))
        .expect("built-in table is valid")
        .named(name)
}

fn ark324_c() -> Vec<f64> {
    vec![0.0, r(1767732205903, 2027836641118), 0.6, 1.0]
}

fn ark324_embed() -> Vec<f64> {
    vec![
        r(2756255671327, 12835298489170),
        r(-10771552573575, 22201958757719),
        r(9247589265047, 10645013368117),
        r(2193209047091, 5459859503100),
    ]
}

fn ark324_dirk() -> ButcherTable {
    let g = r(1767732205903, 4055673282236);
    dirk(
        "ark324l2sa_dirk_3_2",
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![g, g, 0.0, 0.0],
            vec![r(2746238789719, 10658868560708), r(-640167445237, 6845629431997), g, 0.0],
            vec![
                r(1471266399579, 7840856788654),
                r(-4482444167858, 7529755066697),
                r(11266239266428, 11593286722821),
                g,
            ],
        ],
        ark324_embed(),
        ark324_c(),
        3,
        2,
    )
}

fn ark324_erk() -> ButcherTable {
    let b = ark324_dirk().b().to_vec();
    explicit(
        "ark324l2sa_erk_3_2",
        vec![
            vec![0.0; 4],
            vec![r(1767732205903, 2027836641118), 0.0, 0.0, 0.0],
            vec![r(5535828885825, 10492691773637), r(788022342437, 10882634858940), 0.0, 0.0],
            vec![
                r(6485989280629, 16251701735622),
                r(-4246266847089, 9704473918619),
                r(10755448449292, 10357097424841),
                0.0,
            ],
        ],
        b,
        ark324_c(),
        3,
        Some((ark324_embed(), 2)),
    )
}

fn ark436_c() -> Vec<f64> {
    vec![0.0, 0.5, r(83, 250), r(31, 50), r(17, 20), 1.0]
}

fn ark436_embed() -> Vec<f64> {
    vec![
        r(4586570599, 29645900160),
        0.0,
        r(178811875, 945068544),
        r(814220225, 1159782912),
        r(-3700637, 11593932),
        r(61727, 225920),
    ]
}

fn ark436_dirk() -> ButcherTable {
    let g = 0.25;
    dirk(
        "ark436l2sa_dirk_4_3",
        vec![
            vec![0.0; 6],
            vec![g, g, 0.0, 0.0, 0.0, 0.0],
            vec![r(8611, 62500), r(-1743, 31250), g, 0.0, 0.0, 0.0],
            vec![r(5012029, 34652500), r(-654441, 2922500), r(174375, 388108), g, 0.0, 0.0],
            vec![
                r(15267082809, 155376265600),
                r(-71443401, 120774400),
                r(730878875, 902184768),
                r(2285395, 8070912),
                g,
                0.0,
            ],
            vec![
                r(82889, 524892),
                0.0,
                r(15625, 83664),
                r(69875, 102672),
                r(-2260, 8211),
                g,
            ],
        ],
        ark436_embed(),
        ark436_c(),
        4,
        3,
    )
}

fn ark436_erk() -> ButcherTable {
    let b = ark436_dirk().b().to_vec();
    explicit(
        "ark436l2sa_erk_4_3",
        vec![
            vec![0.0; 6],
            vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![r(13861, 62500), r(6889, 62500), 0.0, 0.0, 0.0, 0.0],
            vec![
                r(-116923316275, 2393684061468),
                r(-2731218467317, 15368042101831),
                r(9408046702089, 11113171139209),
                0.0,
                0.0,
                0.0,
            ],
            vec![
                r(-451086348788, 2902428689909),
                r(-2682348792572, 7519795681897),
                r(12662868775082, 11960479115383),
                r(3355817975965, 11060851509271),
                0.0,
                0.0,
            ],
            vec![
                r(647845179188, 3216320057751),
                r(73281519250, 8382639484533),
                r(552539513391, 3454668386233),
                r(3354512671639, 8306763924573),
                r(4040, 17871),
                0.0,
            ],
        ],
        b,
        ark436_c(),
        4,
        Some((ark436_embed(), 3)),
    )
}

/// Look up an explicit or diagonally implicit table.
pub fn butcher(name: &str) -> Result<ButcherTable, TableError> {
    let t = match name {
        "forward_euler_1" => explicit(name, vec![vec![0.0]], vec![1.0], vec![0.0], 1, None),
        "explicit_trapezoid_2" => explicit(
            name,
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            2,
            None,
        ),
        "heun_euler_2_1" => explicit(
            name,
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![0.5, 0.5],
            vec![0.0, 1.0],
            2,
            Some((vec![1.0, 0.0], 1)),
        ),
        "bogacki_shampine_3_2" => explicit(
            name,
            vec![
                vec![0.0; 4],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![0.0, 0.75, 0.0, 0.0],
                vec![r(2, 9), r(1, 3), r(4, 9), 0.0],
            ],
            vec![r(2, 9), r(1, 3), r(4, 9), 0.0],
            vec![0.0, 0.5, 0.75, 1.0],
            3,
            Some((vec![r(7, 24), 0.25, r(1, 3), 0.125], 2)),
        ),
        "knoth_wolke_3" => explicit(
            name,
            vec![
                vec![0.0; 3],
                vec![r(1, 3), 0.0, 0.0],
                vec![r(-3, 16), r(15, 16), 0.0],
            ],
            vec![r(1, 6), r(3, 10), r(8, 15)],
            vec![0.0, r(1, 3), 0.75],
            3,
            None,
        ),
        "zonneveld_4_3" => explicit(
            name,
            vec![
                vec![0.0; 5],
                vec![0.5, 0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.5, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0, 0.0],
                vec![r(5, 32), r(7, 32), r(13, 32), r(-1, 32), 0.0],
            ],
            vec![r(1, 6), r(1, 3), r(1, 3), r(1, 6), 0.0],
            vec![0.0, 0.5, 0.5, 1.0, 0.75],
            4,
            Some((vec![-0.5, r(7, 3), r(7, 3), r(13, 6), r(-16, 3)], 3)),
        ),
        "cash_karp_5_4" => explicit(
            name,
            vec![
                vec![0.0; 6],
                vec![0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
                vec![r(3, 40), r(9, 40), 0.0, 0.0, 0.0, 0.0],
                vec![0.3, -0.9, 1.2, 0.0, 0.0, 0.0],
                vec![r(-11, 54), 2.5, r(-70, 27), r(35, 27), 0.0, 0.0],
                vec![
                    r(1631, 55296),
                    r(175, 512),
                    r(575, 13824),
                    r(44275, 110592),
                    r(253, 4096),
                    0.0,
                ],
            ],
            vec![r(37, 378), 0.0, r(250, 621), r(125, 594), 0.0, r(512, 1771)],
            vec![0.0, 0.2, 0.3, 0.6, 1.0, 0.875],
            5,
            Some((
                vec![
                    r(2825, 27648),
                    0.0,
                    r(18575, 48384),
                    r(13525, 55296),
                    r(277, 14336),
                    0.25,
                ],
                4,
            )),
        ),
        "ark324l2sa_erk_3_2" => ark324_erk(),
        "ark436l2sa_erk_4_3" => ark436_erk(),
        "backward_euler_1" => ButcherTable::new(TableKind::Dirk, vec![vec![1.0]], vec![1.0], vec![1.0], 1)
            .expect("built-in table is valid")
            .named(name),
        "ark324l2sa_dirk_3_2" => ark324_dirk(),
        "ark436l2sa_dirk_4_3" => ark436_dirk(),
        _ => return Err(TableError::UnknownName(name.to_string())),
    };
    Ok(t)
}

pub fn ark_pair(name: &str) -> Result<ArkTablePair, TableError> {
    let (e, i) = match name {
        "ark324l2sa" => (ark324_erk(), ark324_dirk()),
        "ark436l2sa" => (ark436_erk(), ark436_dirk()),
        _ => return Err(TableError::UnknownName(name.to_string())),
    };
    Ok(ArkTablePair::new(e, i)?.named(name))
}

pub fn coupling(name: &str) -> Result<MriCoupling, TableError> {
    let z = |s: usize| vec![vec![0.0; s]; s];
    let m = match name {
        "mis_kw3" => mis_to_mri(&butcher("knoth_wolke_3")?)?.named(name),
        "mri_gark_erk33a" => {
            let mut o0 = z(4);
            o0[1][0] = r(1, 3);
            o0[2][0] = r(-1, 3);
            o0[2][1] = r(2, 3);
            o0[3][1] = r(-2, 3);
            o0[3][2] = 1.0;
            let mut o1 = z(4);
            o1[3][0] = 0.5;
            o1[3][2] = -0.5;
            MriCoupling::new(vec![0.0, r(1, 3), r(2, 3), 1.0], vec![o0, o1], vec![], 3)?.named(name)
        }
        "mri_gark_irk21a" => {
            let mut g0 = z(3);
            g0[1][0] = 1.0;
            g0[2][0] = -0.5;
            g0[2][2] = 0.5;
            MriCoupling::new(vec![0.0, 1.0, 1.0], vec![], vec![g0], 2)?.named(name)
        }
        "imex_mri_gark_trapezoidal" => {
            let mut o0 = z(3);
            o0[1][0] = 1.0;
            o0[2][0] = -0.5;
            o0[2][1] = 0.5;
            let mut g0 = z(3);
            g0[1][0] = 1.0;
            g0[2][0] = -0.5;
            g0[2][2] = 0.5;
            MriCoupling::new(vec![0.0, 1.0, 1.0], vec![o0], vec![g0], 2)?.named(name)
        }
        "imex_mri_gark_trapezoidal_x3" => coupling("imex_mri_gark_trapezoidal")?.compose(3)?,
        _ => match name.strip_prefix("mis_") {
            Some(base) => {
                let t = butcher(base).map_err(|_| TableError::UnknownName(name.to_string()))?;
                mis_to_mri(&t)?
            }
            None => return Err(TableError::UnknownName(name.to_string())),
        },
    };
    Ok(m)
}

/// Default embedded explicit table of order `q ∈ {2,3,4,5}`.
pub fn default_erk(q: usize) -> Result<ButcherTable, TableError> {
    match q {
        2 => butcher("heun_euler_2_1"),
        3 => butcher("bogacki_shampine_3_2"),
        4 => butcher("zonneveld_4_3"),
        5 => butcher("cash_karp_5_4"),
        _ => Err(TableError::UnknownName(format!("explicit table of order {q}"))),
    }
}

/// Default implicit table of order `q ∈ {3,4}`.
pub fn default_dirk(q: usize) -> Result<ButcherTable, TableError> {
    match q {
        3 => butcher("ark324l2sa_dirk_3_2"),
        4 => butcher("ark436l2sa_dirk_4_3"),
        _ => Err(TableError::UnknownName(format!("implicit table of order {q}"))),
    }
}

pub fn default_ark(q: usize) -> Result<ArkTablePair, TableError> {
    match q {
        3 => ark_pair("ark324l2sa"),
        4 => ark_pair("ark436l2sa"),
        _ => Err(TableError::UnknownName(format!("additive pair of order {q}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::{order_condition_residuals, WeightSet};

    #[test]
    fn every_entry_meets_its_declared_orders() {
        for name in BUTCHER_NAMES {
            let t = butcher(name).unwrap();
            assert_eq!(t.name(), *name);
            for c in order_condition_residuals(&t, 4) {
                let declared = match c.weights {
                    WeightSet::Solution => t.order(),
                    WeightSet::Embedding => t.embedding_order().unwrap(),
                };
                if c.order <= declared {
                    assert!(c.residual <= 1e-14, "{name} {} {:?} = {}", c.id, c.weights, c.residual);
                }
            }
        }
    }

    #[test]
    fn all_names_resolve() {
        for n in ARK_NAMES {
            assert_eq!(ark_pair(n).unwrap().name(), *n);
        }
        for n in COUPLING_NAMES {
            assert_eq!(coupling(n).unwrap().name(), *n);
        }
        assert!(coupling("mis_heun_euler_2_1").is_ok());
        assert!(matches!(butcher("nope"), Err(TableError::UnknownName(_))));
        assert!(coupling("mis_backward_euler_1").is_err());
    }
}
