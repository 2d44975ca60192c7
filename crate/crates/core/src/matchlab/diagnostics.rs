//! Per-level balance and support diagnostics.

use serde::{Deserialize, Serialize};

use super::matching::DayMatch;

/// Linear-interpolation quantile of unsorted data; `None` when empty.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: u8,
    pub label: String,
    /// Days that were matched rather than skipped.
    pub days: usize,
    pub treated: usize,
    pub controls: usize,
    pub pairs: usize,
    pub auc_median: Option<f64>,
    pub auc_min: Option<f64>,
    /// Standardized logit gap of matched pairs.
    pub dlogit_p50: Option<f64>,
    pub dlogit_p90: Option<f64>,
    pub ann_dist_p50: Option<f64>,
    pub ann_dist_p90: Option<f64>,
    pub overlap_median: Option<f64>,
}

pub fn level_diagnostics(level: u8, label: String, days: &[DayMatch]) -> LevelDiagnostics {
    let used: Vec<&DayMatch> = days.iter().filter(|d| d.level == level && d.skipped.is_none()).collect();
    let aucs: Vec<f64> = used.iter().filter_map(|d| d.auc).collect();
    let gaps: Vec<f64> = used.iter().flat_map(|d| d.pairs.iter().map(|p| p.std_gap)).collect();
    let dist: Vec<f64> = used.iter().flat_map(|d| d.pairs.iter().map(|p| p.ann_distance)).collect();
    let overlap: Vec<f64> = used.iter().map(|d| d.overlap).collect();
    LevelDiagnostics {
        level,
        label,
        days: used.len(),
        treated: used.iter().map(|d| d.n_treated).sum(),
        controls: used.iter().map(|d| d.n_controls).sum(),
        pairs: gaps.len(),
        auc_median: quantile(&aucs, 0.5),
        auc_min: aucs.iter().copied().reduce(f64::min),
        dlogit_p50: quantile(&gaps, 0.5),
        dlogit_p90: quantile(&gaps, 0.9),
        ann_dist_p50: quantile(&dist, 0.5),
        ann_dist_p90: quantile(&dist, 0.9),
        overlap_median: quantile(&overlap, 0.5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.5), Some(2.5));
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(quantile(&v, 1.0), Some(4.0));
        assert!((quantile(&v, 0.9).unwrap() - 3.7).abs() < 1e-12);
        assert_eq!(quantile(&[], 0.5), None);
    }
}
