//! Dynamic matched-sample estimation of peer-influence risk ratios.
//!
//! Each day's risk set is split into treated and control egos, a pooled
//! propensity model scores every row, and treated egos are matched to
//! same-day controls inside a logit caliper. Matched 2×2 tables are summed
//! over days into one risk ratio per treatment level.

mod diagnostics;
mod matching;
mod panel;
mod propensity;
mod risk;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{level_diagnostics, quantile, LevelDiagnostics};
pub use matching::{match_day, CandidateIndex, DayMatch, ExactIndex, MatchConfig, MatchSpace, MatchedPair};
pub use panel::{
    build_panel, level_label, CovariateSchema, CovariateSource, CovariateTable, NetworkCovariates, PanelOptions,
    PanelRow, PanelSchemaFile, TreatmentKind, TreatmentPanel, COVARIATE_LAG, DOSE_TOP, DOSE_WINDOW,
    NETWORK_COVARIATES,
};
pub use propensity::{auc, PropensityConfig, PropensityKind, PropensityModel};
pub use risk::{naive_risk_ratio, pool_risk_ratio, CellCounts, RiskTable, Z_95};

use crate::error::{LabError, Result};
use crate::shocks::Day;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyTable {
    pub day: Day,
    pub cells: CellCounts,
    pub rr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: u8,
    pub label: String,
    /// `None` when no pair formed at this level.
    pub matched: Option<RiskTable>,
    pub naive: Option<RiskTable>,
    pub daily: Vec<DailyTable>,
    pub diagnostics: LevelDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub kind: TreatmentKind,
    pub propensity: PropensityModel,
    pub levels: Vec<LevelResult>,
    pub days: Vec<DayMatch>,
}

impl MatchReport {
    pub fn pairs(&self) -> impl Iterator<Item = &MatchedPair> {
        self.days.iter().flat_map(|d| d.pairs.iter())
    }

    pub fn level(&self, level: u8) -> Option<&LevelResult> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn write_pairs_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["day", "treated", "control", "logit_gap", "mahalanobis", "level", "std_gap", "ann_distance"])?;
        for p in self.pairs() {
            w.write_record([
                p.day.to_string(),
                p.treated.to_string(),
                p.control.to_string(),
                p.logit_gap.to_string(),
                p.mahalanobis.to_string(),
                p.level.to_string(),
                p.std_gap.to_string(),
                p.ann_distance.to_string(),
            ])?;
        }
        w.flush().map_err(|e| LabError::io(path, e))
    }
}

/// Fits the propensity model, matches every (level, day) and pools.
pub fn estimate(panel: &TreatmentPanel, pcfg: &PropensityConfig, mcfg: &MatchConfig) -> Result<MatchReport> {
    let model = PropensityModel::fit(panel, pcfg)?;
    let space = MatchSpace::new(panel)?;
    let days: Vec<Day> = panel.days().collect();
    let included = |i: usize| model.is_included(i);
    let mut all_days = Vec::new();
    let mut levels = Vec::new();
    for &level in model.treated_levels() {
        let logits = model.level_logits(level)?;
        let matched: Vec<DayMatch> = days
            .par_iter()
            .map(|&d| match_day(panel, &space, &logits, &included, d, level, mcfg))
            .collect();
        let label = level_label(&panel.kind, level);
        let pairs: Vec<MatchedPair> = matched.iter().flat_map(|d| d.pairs.iter().cloned()).collect();
        let daily = matched
            .iter()
            .filter(|d| !d.pairs.is_empty())
            .map(|d| {
                let cells = CellCounts::from_pairs(&d.pairs);
                let rr = cells.table().map_or(f64::NAN, |t| t.rr);
                DailyTable { day: d.day, cells, rr }
            })
            .collect();
        levels.push(LevelResult {
            level,
            label: label.clone(),
            matched: pool_risk_ratio(&pairs).ok(),
            naive: naive_risk_ratio(panel, level).ok(),
            daily,
            diagnostics: level_diagnostics(level, label, &matched),
        });
        all_days.extend(matched);
    }
    Ok(MatchReport {
        kind: panel.kind,
        propensity: model,
        levels,
        days: all_days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Direction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(seed: u64, disjoint: bool) -> TreatmentPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = CovariateSchema { names: vec!["x".into(), "y".into()], core: vec![0, 1] };
        let mut rows = Vec::new();
        let mut cov = Vec::new();
        for day in 0..5 {
            for ego in 0..200 {
                let treated = ego % 4 == 0;
                let shift = if disjoint && treated { 8.0 } else { 0.0 };
                cov.push(vec![rng.random_range(0.0..1.0) + shift, rng.random_range(0.0..1.0)]);
                rows.push(PanelRow { ego, day, level: u8::from(treated), outcome: rng.random::<f64>() < 0.1 });
            }
        }
        TreatmentPanel::from_rows(TreatmentKind::Timing { d: 2 }, Direction::Followee, schema, rows, cov).unwrap()
    }

    #[test]
    fn without_replacement_and_inside_caliper() {
        let r = estimate(&synthetic(1, false), &PropensityConfig::default(), &MatchConfig::default()).unwrap();
        for d in &r.days {
            let mut controls: Vec<_> = d.pairs.iter().map(|p| p.control).collect();
            controls.sort_unstable();
            let n = controls.len();
            controls.dedup();
            assert_eq!(controls.len(), n);
            for p in &d.pairs {
                assert!(p.logit_gap <= d.caliper);
            }
        }
    }

    #[test]
    fn disjoint_support_has_no_overlap() {
        let r = estimate(&synthetic(2, true), &PropensityConfig::default(), &MatchConfig::default()).unwrap();
        let diag = &r.levels[0].diagnostics;
        assert!(diag.overlap_median.unwrap() < 0.05, "{diag:?}");
    }

    #[test]
    fn diagnostics_recomputed_from_pairs() {
        let r = estimate(&synthetic(3, false), &PropensityConfig::default(), &MatchConfig::default()).unwrap();
        let mut gaps: Vec<f64> = r.pairs().map(|p| p.std_gap).collect();
        gaps.sort_by(f64::total_cmp);
        let h = 0.9 * (gaps.len() - 1) as f64;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        let p90 = gaps[lo] + (h - lo as f64) * (gaps[hi] - gaps[lo]);
        assert_eq!(r.levels[0].diagnostics.dlogit_p90, Some(p90));
        assert!(p90 <= 0.1 + 1e-12);
        let mut ov: Vec<f64> = r.days.iter().map(|d| d.overlap).collect();
        ov.sort_by(f64::total_cmp);
        assert_eq!(r.levels[0].diagnostics.overlap_median, Some(ov[2]));
    }

    #[test]
    fn perfectly_matched_panel() {
        // every treated ego has an identical control twin
        let schema = CovariateSchema { names: vec!["x".into()], core: vec![0] };
        let mut rows = Vec::new();
        let mut cov = Vec::new();
        for ego in 0..80 {
            rows.push(PanelRow { ego, day: 0, level: u8::from(ego % 2 == 0), outcome: ego % 5 == 0 });
            cov.push(vec![(ego / 2) as f64]);
        }
        let p = TreatmentPanel::from_rows(TreatmentKind::Timing { d: 1 }, Direction::Followee, schema, rows, cov).unwrap();
        let r = estimate(&p, &PropensityConfig::default(), &MatchConfig::default()).unwrap();
        let d = &r.levels[0].diagnostics;
        assert_eq!(d.pairs, 40);
        assert_eq!(d.dlogit_p90, Some(0.0));
        assert_eq!(d.overlap_median, Some(1.0));
    }
}
