use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::score::CaseResult;
use crate::error::{Error, Result};
use crate::simulation::DamageKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Damage kind, or `all`.
    pub kind: String,
    /// Size bin label, or `all`.
    pub size_bin: String,
    pub n: usize,
    pub mean_dice: f64,
    /// Sample standard deviation; 0 for a single case.
    pub sd_dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub const HEADER: &'static str = "kind,size_bin,n,mean_dice,sd_dice";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.6},{:.6}", r.kind, r.size_bin, r.n, r.mean_dice, r.sd_dice);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn row(&self, kind: &str, size_bin: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.kind == kind && r.size_bin == size_bin)
    }
}

/// Labels for half-open bins `[0, e0), [e0, e1), ..., [e_last, inf)`.
pub fn bin_labels(edges: &[f64]) -> Vec<String> {
    let fmt = |v: f64| format!("{v}");
    let mut out = Vec::with_capacity(edges.len() + 1);
    let mut lo = 0.0;
    for &e in edges {
        out.push(format!("{}-{}", fmt(lo), fmt(e)));
        lo = e;
    }
    out.push(format!(">{}", fmt(lo)));
    out
}

/// Index of the half-open bin holding `v`; values on an edge go up.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    edges.iter().filter(|&&e| v >= e).count()
}

fn stats(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = if d.len() > 1 {
        (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Dice by GT-volume bin, optionally split by damage kind, with per-kind
/// and overall rows. Empty cells are omitted.
pub fn summarize(results: &[CaseResult], edges: &[f64], group_by_kind: bool) -> Result<SummaryTable> {
    if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config(format!("size bin edges {edges:?} are not strictly increasing")));
    }
    let labels = bin_labels(edges);
    let mut rows = Vec::new();
    let mut push = |kind: &str, bin: &str, d: Vec<f64>| {
        if !d.is_empty() {
            let (mean_dice, sd_dice) = stats(&d);
            rows.push(SummaryRow {
                kind: kind.to_string(),
                size_bin: bin.to_string(),
                n: d.len(),
                mean_dice,
                sd_dice,
            });
        }
    };
    let kinds: Vec<Option<DamageKind>> = if group_by_kind {
        vec![Some(DamageKind::Ventricular), Some(DamageKind::Lateral), None]
    } else {
        vec![None]
    };
    for kind in kinds {
        let name = kind.map_or("all", |k| k.name());
        let sel: Vec<&CaseResult> = results.iter().filter(|r| kind.is_none() || r.kind == kind).collect();
        for (b, label) in labels.iter().enumerate() {
            let d = sel
                .iter()
                .filter(|r| bin_index(edges, r.gt_volume_mm3) == b)
                .map(|r| r.dice)
                .collect();
            push(name, label, d);
        }
        push(name, "all", sel.iter().map(|r| r.dice).collect());
    }
    Ok(SummaryTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, Mask};

    fn case(dice: f64, vol: f64, kind: DamageKind) -> CaseResult {
        let g = Geometry::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        CaseResult {
            case_id: String::new(),
            dice,
            gt_volume_mm3: vol,
            kind: Some(kind),
            fn_mask: Mask::empty(g.clone()),
            fp_mask: Mask::empty(g),
        }
    }

    #[test]
    fn uniform_dice() {
        let r: Vec<_> = (0..5).map(|i| case(1.0, 500.0 * i as f64, DamageKind::Lateral)).collect();
        let t = summarize(&r, &[1000.0, 3000.0], true).unwrap();
        assert!(t.rows.iter().all(|r| r.mean_dice == 1.0 && r.sd_dice == 0.0));
        assert_eq!(t.row("all", "all").unwrap().n, 5);
    }

    #[test]
    fn edge_values_go_to_upper_bin() {
        let r = vec![case(0.5, 1000.0, DamageKind::Ventricular)];
        let t = summarize(&r, &[1000.0, 3000.0], false).unwrap();
        assert_eq!(t.row("all", "1000-3000").unwrap().n, 1);
        assert!(t.row("all", "0-1000").is_none());
    }

    #[test]
    fn empty_results_give_header_only() {
        let t = summarize(&[], &[1000.0], true).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.to_csv(), format!("{}\n", SummaryTable::HEADER));
    }

    #[test]
    fn unsorted_edges_are_rejected() {
        assert!(summarize(&[], &[3000.0, 1000.0], true).is_err());
    }
}
