//! Reference solutions at the final time, and their text file format.
//!
//! The file starts with one header line
//! `# brusselator points=<N> tf=<tf> diffusion=<d> rtol=<r> atol=<a>`
//! followed by `3N` values, one per line.

use std::fmt::Write as _;
use std::path::Path;

use onestep::nonlinear::PredictorKind;

use crate::problem::Brusselator;
use crate::run::{run_with_solution, Preset, RunConfig};
use crate::HarnessError;

pub const REFERENCE_RTOL: f64 = 1e-12;
pub const REFERENCE_ATOL: f64 = 1e-16;
pub const REFERENCE_TABLE: &str = "ark436l2sa_dirk_4_3";

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub points: usize,
    pub tf: f64,
    pub diffusion: f64,
    pub rtol: f64,
    pub atol: f64,
    pub values: Vec<f64>,
}

/// Solves the full problem implicitly at the given tolerances.
pub fn compute_reference_with(problem: &Brusselator, rtol: f64, atol: f64) -> Result<Reference, HarnessError> {
    let mut cfg = RunConfig::new(Preset::Dirk);
    cfg.table = Some(REFERENCE_TABLE.into());
    cfg.rtol = rtol;
    cfg.atol = atol;
    cfg.predictor = PredictorKind::Trivial;
    let (_, y) = run_with_solution(problem, &cfg, None)?;
    Ok(Reference {
        points: problem.points,
        tf: problem.tf,
        diffusion: problem.diffusion,
        rtol,
        atol,
        values: y,
    })
}

pub fn compute_reference(problem: &Brusselator) -> Result<Reference, HarnessError> {
    compute_reference_with(problem, REFERENCE_RTOL, REFERENCE_ATOL)
}

impl Reference {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# brusselator points={} tf={:e} diffusion={:e} rtol={:e} atol={:e}\n",
            self.points, self.tf, self.diffusion, self.rtol, self.atol
        );
        for v in &self.values {
            writeln!(s, "{v:.17e}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Reference(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let fields = header
            .strip_prefix("# brusselator")
            .ok_or_else(|| bad("missing header".into()))?;
        let get = |key: &str| -> Result<f64, HarnessError> {
            fields
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| bad(format!("header lacks `{key}`")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("{key}: {e}")))
        };
        let points = get("points")? as usize;
        let tf = get("tf")?;
        let diffusion = get("diffusion")?;
        let rtol = get("rtol")?;
        let atol = get("atol")?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| l.trim().parse::<f64>().map_err(|e| bad(format!("value {i}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != 3 * points {
            return Err(bad(format!("expected {} values, found {}", 3 * points, values.len())));
        }
        Ok(Reference {
            points,
            tf,
            diffusion,
            rtol,
            atol,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Whether this reference was computed for `problem`.
    pub fn matches(&self, problem: &Brusselator) -> bool {
        self.points == problem.points && self.tf == problem.tf && self.diffusion == problem.diffusion
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Brusselator {
        let mut p = Brusselator::default().with_points(12);
        p.tf = 1.0;
        p
    }

    #[test]
    fn text_round_trip_is_exact() {
        let r = compute_reference(&small()).unwrap();
        let back = Reference::parse(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert!(back.matches(&small()));
        assert!(r.values.iter().all(|v| v.is_finite()));
        assert!(r.values.iter().cloned().fold(0.0, f64::max) > 0.0);
    }

    #[test]
    fn deterministic_bytes() {
        let a = compute_reference(&small()).unwrap().to_text();
        let b = compute_reference(&small()).unwrap().to_text();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_truncated_file() {
        let mut text = compute_reference(&small()).unwrap().to_text();
        text.truncate(text.rfind('\n').unwrap());
        text.truncate(text.rfind('\n').unwrap());
        assert!(Reference::parse(&text).is_err());
        assert!(Reference::parse("1.0\n").is_err());
    }
}
