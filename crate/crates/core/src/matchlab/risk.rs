//! Pooled 2×2 risk ratios with continuity correction and Katz intervals.

use serde::{Deserialize, Serialize};

use super::matching::MatchedPair;
use super::panel::TreatmentPanel;
use crate::error::{LabError, Result};

pub const Z_95: f64 = 1.96;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    /// Treated, adopted.
    pub a: f64,
    /// Treated, not adopted.
    pub b: f64,
    /// Control, adopted.
    pub c: f64,
    /// Control, not adopted.
    pub d: f64,
    pub rr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub log_se: f64,
    /// Whether 0.5 was added to every cell.
    pub corrected: bool,
}

impl RiskTable {
    /// Adds 0.5 to every cell when any is zero, then RR and the Katz 95% CI.
    pub fn from_counts(a: u64, b: u64, c: u64, d: u64) -> Result<Self> {
        if a + b == 0 || c + d == 0 {
            return Err(LabError::insufficient("a risk group is empty"));
        }
        let corrected = a == 0 || b == 0 || c == 0 || d == 0;
        let k = if corrected { 0.5 } else { 0.0 };
        let (a, b, c, d) = (a as f64 + k, b as f64 + k, c as f64 + k, d as f64 + k);
        let rr = (a / (a + b)) / (c / (c + d));
        let log_se = (1.0 / a - 1.0 / (a + b) + 1.0 / c - 1.0 / (c + d)).sqrt();
        Ok(RiskTable {
            a,
            b,
            c,
            d,
            rr,
            ci_low: (rr.ln() - Z_95 * log_se).exp(),
            ci_high: (rr.ln() + Z_95 * log_se).exp(),
            log_se,
            corrected,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl CellCounts {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a MatchedPair>) -> Self {
        let mut n = CellCounts::default();
        for p in pairs {
            if p.treated_outcome {
                n.a += 1;
            } else {
                n.b += 1;
            }
            if p.control_outcome {
                n.c += 1;
            } else {
                n.d += 1;
            }
        }
        n
    }

    pub fn table(&self) -> Result<RiskTable> {
        RiskTable::from_counts(self.a, self.b, self.c, self.d)
    }
}

/// Sums the 2×2 cells over all pairs, then corrects and pools.
pub fn pool_risk_ratio(pairs: &[MatchedPair]) -> Result<RiskTable> {
    if pairs.is_empty() {
        return Err(LabError::insufficient("no matched pairs"));
    }
    CellCounts::from_pairs(pairs).table()
}

/// Unmatched comparison of every row at `level` against every level-0 row.
pub fn naive_risk_ratio(panel: &TreatmentPanel, level: u8) -> Result<RiskTable> {
    let mut n = CellCounts::default();
    for r in panel.rows() {
        if r.level == level {
            if r.outcome {
                n.a += 1;
            } else {
                n.b += 1;
            }
        } else if r.level == 0 {
            if r.outcome {
                n.c += 1;
            } else {
                n.d += 1;
            }
        }
    }
    n.table()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrected_zero_cell() {
        let t = RiskTable::from_counts(0, 10, 2, 8).unwrap();
        assert!(t.corrected);
        assert_eq!((t.a, t.b, t.c, t.d), (0.5, 10.5, 2.5, 8.5));
        assert!((t.rr - (0.5 / 11.0) / (2.5 / 11.0)).abs() <= 1e-12);
        assert!((t.rr - 0.2).abs() <= 1e-12);
    }

    #[test]
    fn katz_interval() {
        let t = RiskTable::from_counts(10, 90, 5, 95).unwrap();
        assert!(!t.corrected);
        assert!((t.rr - 2.0).abs() <= 1e-12);
        // SE² = 1/10 - 1/100 + 1/5 - 1/100 = 0.28
        let se = 0.28f64.sqrt();
        assert!((t.log_se - se).abs() <= 1e-12);
        assert!((t.ci_low - (2.0f64.ln() - 1.96 * se).exp()).abs() <= 1e-12);
        assert!((t.ci_high - (2.0f64.ln() + 1.96 * se).exp()).abs() <= 1e-12);
        assert!((t.ci_low - 0.708_937_907_841_582_5).abs() <= 1e-12);
        assert!((t.ci_high - 5.642_243_073_414_307).abs() <= 1e-12);
    }

    #[test]
    fn symmetric_cells_give_one() {
        for (a, b) in [(1, 1), (7, 30), (0, 4)] {
            let t = RiskTable::from_counts(a, b, a, b).unwrap();
            assert_eq!(t.rr, 1.0);
            assert!(t.ci_low <= 1.0 && 1.0 <= t.ci_high);
        }
    }

    #[test]
    fn no_pairs_is_an_error() {
        assert!(pool_risk_ratio(&[]).is_err());
    }
}
