//! Plain-text coefficient files.
//!
//! One keyword per line, whitespace-separated values, `#` starts a comment:
//!
//! ```text
//! kind explicit            # explicit | dirk | mri
//! name heun_euler_2_1
//! stages 2
//! order 2
//! embedding_order 1        # optional, requires b_embed
//! c 0 1
//! a 0 0                    # one line per row, s lines
//! a 1 0
//! b 1/2 1/2
//! b_embed 1 0
//! ```
//!
//! Couplings use `omega k <row>` and `gamma k <row>` lines, `s` rows per
//! power `k`, instead of `a`, `b` and `b_embed`. Values are decimal or
//! `p/q` ratios.

use std::fmt::Write as _;
use std::path::Path;

use super::{ButcherTable, MriCoupling, TableKind};
use crate::error::TableError;

#[derive(Debug, Clone, PartialEq)]
pub enum TableRecord {
    Butcher(ButcherTable),
    Mri(MriCoupling),
}

impl TableRecord {
    pub fn into_butcher(self) -> Option<ButcherTable> {
        match self {
            TableRecord::Butcher(t) => Some(t),
            TableRecord::Mri(_) => None,
        }
    }

    pub fn into_coupling(self) -> Option<MriCoupling> {
        match self {
            TableRecord::Mri(m) => Some(m),
            TableRecord::Butcher(_) => None,
        }
    }
}

fn parse_value(tok: &str, line: usize) -> Result<f64, TableError> {
    let bad = || TableError::Parse {
        line,
        msg: format!("cannot parse `{tok}` as a number"),
    };
    match tok.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.parse().map_err(|_| bad())?;
            let q: f64 = q.parse().map_err(|_| bad())?;
            Ok(p / q)
        }
        None => tok.parse().map_err(|_| bad()),
    }
}

fn parse_usize(tok: Option<&str>, line: usize, key: &str) -> Result<usize, TableError> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| TableError::Parse {
        line,
        msg: format!("`{key}` needs a nonnegative integer"),
    })
}

#[derive(Default)]
struct Raw {
    kind: Option<String>,
    name: String,
    stages: Option<usize>,
    order: Option<usize>,
    embedding_order: Option<usize>,
    c: Option<Vec<f64>>,
    a: Vec<Vec<f64>>,
    b: Option<Vec<f64>>,
    b_embed: Option<Vec<f64>>,
    omega: Vec<Vec<Vec<f64>>>,
    gamma: Vec<Vec<Vec<f64>>>,
}

fn push_power(store: &mut Vec<Vec<Vec<f64>>>, k: usize, row: Vec<f64>) -> Result<(), TableError> {
    if k > 2 {
        return Err(TableError::DegreeTooHigh(k));
    }
    if store.len() <= k {
        store.resize(k + 1, Vec::new());
    }
    store[k].push(row);
    Ok(())
}

/// Parses and validates one record.
pub fn parse_table(text: &str) -> Result<TableRecord, TableError> {
    let mut raw = Raw::default();
    let mut last_line = 0;
    for (idx, full) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = full.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let key = toks.next().unwrap();
        let values = |toks: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>, TableError> {
            toks.map(|t| parse_value(t, line)).collect()
        };
        match key {
            "kind" => raw.kind = toks.next().map(str::to_string),
            "name" => raw.name = toks.collect::<Vec<_>>().join(" "),
            "stages" => raw.stages = Some(parse_usize(toks.next(), line, key)?),
            "order" => raw.order = Some(parse_usize(toks.next(), line, key)?),
            "embedding_order" => raw.embedding_order = Some(parse_usize(toks.next(), line, key)?),
            "c" => raw.c = Some(values(toks)?),
            "a" => raw.a.push(values(toks)?),
            "b" => raw.b = Some(values(toks)?),
            "b_embed" => raw.b_embed = Some(values(toks)?),
            "omega" | "gamma" => {
                let k = parse_usize(toks.next(), line, key)?;
                let row = values(toks)?;
                let store = if key == "omega" { &mut raw.omega } else { &mut raw.gamma };
                push_power(store, k, row)?;
            }
            other => {
                return Err(TableError::Parse {
                    line,
                    msg: format!("unknown keyword `{other}`"),
                })
            }
        }
    }
    let missing = |what: &str| TableError::Parse {
        line: last_line,
        msg: format!("missing `{what}`"),
    };
    let s = raw.stages.ok_or_else(|| missing("stages"))?;
    let order = raw.order.ok_or_else(|| missing("order"))?;
    let c = raw.c.ok_or_else(|| missing("c"))?;
    if c.len() != s {
        return Err(TableError::Shape {
            what: "c",
            expected: s,
            found: c.len(),
        });
    }
    let kind = raw.kind.ok_or_else(|| missing("kind"))?;
    let record = match kind.as_str() {
        "explicit" | "dirk" => {
            let kind = if kind == "explicit" {
                TableKind::Explicit
            } else {
                TableKind::Dirk
            };
            if raw.a.len() != s {
                return Err(TableError::Shape {
                    what: "A",
                    expected: s,
                    found: raw.a.len(),
                });
            }
            let b = raw.b.ok_or_else(|| missing("b"))?;
            let mut t = ButcherTable::new(kind, raw.a, b, c, order)?;
            match (raw.b_embed, raw.embedding_order) {
                (Some(e), Some(p)) => t = t.with_embedding(e, p)?,
                (None, None) => {}
                (Some(_), None) => return Err(missing("embedding_order")),
                (None, Some(_)) => return Err(missing("b_embed")),
            }
            TableRecord::Butcher(t.named(raw.name))
        }
        "mri" => {
            let m = MriCoupling::new(c, raw.omega, raw.gamma, order)?;
            TableRecord::Mri(m.named(raw.name))
        }
        other => {
            return Err(TableError::Parse {
                line: last_line,
                msg: format!("unknown kind `{other}`"),
            })
        }
    };
    Ok(record)
}

pub fn load_table(path: impl AsRef<Path>) -> Result<TableRecord, TableError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| TableError::Io(format!("{}: {e}", path.display())))?;
    parse_table(&text)
}

fn row(out: &mut String, key: &str, v: &[f64]) {
    out.push_str(key);
    for x in v {
        let _ = write!(out, " {x:.16e}");
    }
    out.push('\n');
}

pub fn serialize_butcher(t: &ButcherTable) -> String {
    let mut out = String::new();
    let kind = match t.kind() {
        TableKind::Explicit => "explicit",
        TableKind::Dirk => "dirk",
    };
    let _ = writeln!(out, "kind {kind}");
    if !t.name().is_empty() {
        let _ = writeln!(out, "name {}", t.name());
    }
    let _ = writeln!(out, "stages {}", t.stages());
    let _ = writeln!(out, "order {}", t.order());
    if let Some(p) = t.embedding_order() {
        let _ = writeln!(out, "embedding_order {p}");
    }
    row(&mut out, "c", t.c());
    for a in t.a_rows() {
        row(&mut out, "a", a);
    }
    row(&mut out, "b", t.b());
    if let Some(e) = t.b_embed() {
        row(&mut out, "b_embed", e);
    }
    out
}

pub fn serialize_coupling(m: &MriCoupling) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "kind mri");
    if !m.name().is_empty() {
        let _ = writeln!(out, "name {}", m.name());
    }
    let _ = writeln!(out, "stages {}", m.stages());
    let _ = writeln!(out, "order {}", m.order());
    row(&mut out, "c", m.c());
    for (key, mats) in [("omega", m.omega_matrices()), ("gamma", m.gamma_matrices())] {
        if mats.iter().flatten().flatten().all(|v| *v == 0.0) {
            continue;
        }
        for (k, mat) in mats.iter().enumerate() {
            for r in mat {
                row(&mut out, &format!("{key} {k}"), r);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::catalog;

    #[test]
    fn forward_euler_file() {
        let rec = parse_table("kind explicit\nstages 1\norder 1\nc 0\na 0\nb 1\n").unwrap();
        let t = rec.into_butcher().unwrap();
        assert!(!t.is_adaptive());
    }

    #[test]
    fn heun_euler_file_with_fractions() {
        let text = "# Heun-Euler\nkind explicit\nname he\nstages 2\norder 2\nembedding_order 1\n\
                    c 0 1\na 0 0\na 1 0\nb 1/2 1/2\nb_embed 1 0\n";
        let t = parse_table(text).unwrap().into_butcher().unwrap();
        assert_eq!(t.order(), 2);
        assert_eq!(t.embedding_order(), Some(1));
        assert_eq!(t.b(), &[0.5, 0.5]);
    }

    #[test]
    fn structural_error_is_reported() {
        let text = "kind explicit\nstages 2\norder 1\nc 0 1\na 0 1\na 1 0\nb 1/2 1/2\n";
        assert!(matches!(
            parse_table(text),
            Err(TableError::NotStrictlyLower { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_table("kind explicit\nfoo 1\n"), Err(TableError::Parse { line: 2, .. })));
        assert!(matches!(parse_table("kind explicit\nstages 1\norder 1\nc x\n"), Err(TableError::Parse { .. })));
        assert!(matches!(
            parse_table("kind explicit\nstages 2\norder 1\nc 0 1\na 0 0\nb 1 0\n"),
            Err(TableError::Shape { what: "A", .. })
        ));
    }

    #[test]
    fn catalog_round_trips() {
        for name in catalog::BUTCHER_NAMES {
            let t = catalog::butcher(name).unwrap();
            let back = parse_table(&serialize_butcher(&t)).unwrap().into_butcher().unwrap();
            assert_eq!(back, t, "{name}");
        }
        for name in catalog::COUPLING_NAMES {
            let m = catalog::coupling(name).unwrap();
            let back = parse_table(&serialize_coupling(&m)).unwrap().into_coupling().unwrap();
            assert_eq!(back, m, "{name}");
        }
    }
}
