//! Same-day greedy matching within a propensity caliper.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::panel::TreatmentPanel;
use crate::error::{LabError, Result};
use crate::graph::NodeId;
use crate::shocks::Day;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Caliper width as a multiple of the day's logit standard deviation.
    pub caliper_mult: f64,
    /// Nearest-neighbor candidates considered per treated ego.
    pub shortlist_k: usize,
    pub min_treated: usize,
    pub min_controls: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            caliper_mult: 0.1,
            shortlist_k: 50,
            min_treated: 1,
            min_controls: 1,
        }
    }
}

/// Nearest-neighbor search over a day's control points.
pub trait CandidateIndex {
    /// Up to `k` available points closest to `query`, nearest first, ties by index.
    fn query(&self, query: &[f64], k: usize, available: &[bool]) -> Vec<usize>;
}

/// Brute-force Euclidean search.
pub struct ExactIndex<'a> {
    dim: usize,
    points: &'a [f64],
}

impl<'a> ExactIndex<'a> {
    /// `points` is row-major with `dim` values per point.
    pub fn new(points: &'a [f64], dim: usize) -> Self {
        ExactIndex { dim, points }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl CandidateIndex for ExactIndex<'_> {
    fn query(&self, query: &[f64], k: usize, available: &[bool]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .points
            .chunks_exact(self.dim)
            .enumerate()
            .filter(|(i, _)| available[*i])
            .map(|(i, p)| (sq_dist(query, p), i))
            .collect();
        let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if d.len() > k {
            d.select_nth_unstable_by(k, by);
            d.truncate(k);
        }
        d.sort_by(by);
        d.into_iter().map(|(_, i)| i).collect()
    }
}

/// Standardized and whitened core covariates for every panel row.
///
/// Euclidean distance between whitened rows equals the Mahalanobis distance
/// under the core covariance (plus `1e-6` on the diagonal).
#[derive(Clone, Debug)]
pub struct MatchSpace {
    dim: usize,
    standardized: Vec<f64>,
    whitened: Vec<f64>,
}

impl MatchSpace {
    pub fn new(panel: &TreatmentPanel) -> Result<Self> {
        let core = &panel.schema.core;
        let p = core.len();
        let n = panel.len();
        if n == 0 {
            return Err(LabError::insufficient("panel is empty"));
        }
        let mut z = vec![0.0; n * p];
        for (j, &c) in core.iter().enumerate() {
            let col: Vec<f64> = (0..n).map(|i| panel.covariates(i)[c]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            for i in 0..n {
                z[i * p + j] = if sd > 0.0 { (col[i] - mean) / sd } else { 0.0 };
            }
        }
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for row in z.chunks_exact(p) {
            for a in 0..p {
                for b in 0..p {
                    cov[(a, b)] += row[a] * row[b];
                }
            }
        }
        cov /= n as f64;
        for a in 0..p {
            cov[(a, a)] += 1e-6;
        }
        let l = cov
            .cholesky()
            .ok_or_else(|| LabError::Undefined("core covariance is not positive definite".into()))?
            .l();
        let mut whitened = vec![0.0; n * p];
        for (i, row) in z.chunks_exact(p).enumerate() {
            // forward substitution L w = z
            for a in 0..p {
                let mut s = row[a];
                for b in 0..a {
                    s -= l[(a, b)] * whitened[i * p + b];
                }
                whitened[i * p + a] = s / l[(a, a)];
            }
        }
        Ok(MatchSpace { dim: p, standardized: z, whitened })
    }

    pub fn standardized(&self, row: usize) -> &[f64] {
        &self.standardized[row * self.dim..(row + 1) * self.dim]
    }

    pub fn mahalanobis(&self, a: usize, b: usize) -> f64 {
        let p = self.dim;
        sq_dist(&self.whitened[a * p..(a + 1) * p], &self.whitened[b * p..(b + 1) * p]).sqrt()
    }

    pub fn euclidean(&self, a: usize, b: usize) -> f64 {
        sq_dist(self.standardized(a), self.standardized(b)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub day: Day,
    pub level: u8,
    pub treated: NodeId,
    pub control: NodeId,
    pub treated_row: usize,
    pub control_row: usize,
    /// Absolute logit difference.
    pub logit_gap: f64,
    /// Logit difference over the day's logit standard deviation.
    pub std_gap: f64,
    pub mahalanobis: f64,
    /// Euclidean distance in the standardized core space.
    pub ann_distance: f64,
    pub treated_outcome: bool,
    pub control_outcome: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayMatch {
    pub day: Day,
    pub level: u8,
    pub n_treated: usize,
    pub n_controls: usize,
    pub skipped: Option<String>,
    pub caliper: f64,
    pub logit_sd: f64,
    pub pairs: Vec<MatchedPair>,
    pub unmatched: Vec<NodeId>,
    /// Share of treated egos with at least one control inside the caliper.
    pub overlap: f64,
    /// AUC of the logit separating treated from controls on this day.
    pub auc: Option<f64>,
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Matches the day's treated egos at `level` to level-0 controls.
///
/// Treated egos are processed in ascending id order. Each takes a
/// nearest-neighbor shortlist of unused controls, keeps those inside the
/// caliper and picks the smallest Mahalanobis distance (ties to the lowest id).
pub fn match_day(
    panel: &TreatmentPanel,
    space: &MatchSpace,
    logits: &[f64],
    included: &dyn Fn(usize) -> bool,
    day: Day,
    level: u8,
    cfg: &MatchConfig,
) -> DayMatch {
    let range = panel.day_rows(day);
    let rows = panel.rows();
    let treated: Vec<usize> = range.clone().filter(|&i| included(i) && rows[i].level == level).collect();
    let controls: Vec<usize> = range.filter(|&i| included(i) && rows[i].level == 0).collect();
    let mut out = DayMatch {
        day,
        level,
        n_treated: treated.len(),
        n_controls: controls.len(),
        skipped: None,
        caliper: 0.0,
        logit_sd: 0.0,
        pairs: Vec::new(),
        unmatched: Vec::new(),
        overlap: 0.0,
        auc: None,
    };
    if treated.len() < cfg.min_treated.max(1) || controls.len() < cfg.min_controls.max(1) {
        out.skipped = Some(format!("{} treated, {} controls", treated.len(), controls.len()));
        return out;
    }

    let pooled: Vec<f64> = treated.iter().chain(&controls).map(|&i| logits[i]).collect();
    let flags: Vec<bool> = treated.iter().map(|_| true).chain(controls.iter().map(|_| false)).collect();
    out.auc = super::propensity::auc(&pooled, &flags);
    let sd = sample_sd(&pooled);
    let caliper = cfg.caliper_mult * sd;
    out.logit_sd = sd;
    out.caliper = caliper;

    let dim = space.dim;
    let points: Vec<f64> = controls.iter().flat_map(|&c| space.standardized(c).iter().copied()).collect();
    let index = ExactIndex::new(&points, dim);
    let mut available = vec![true; controls.len()];
    let mut with_support = 0;
    for &t in &treated {
        if controls.iter().any(|&c| (logits[t] - logits[c]).abs() <= caliper) {
            with_support += 1;
        }
        let shortlist = index.query(space.standardized(t), cfg.shortlist_k, &available);
        let mut best: Option<(f64, usize)> = None;
        for j in shortlist {
            let c = controls[j];
            if (logits[t] - logits[c]).abs() > caliper {
                continue;
            }
            let m = space.mahalanobis(t, c);
            // shortlist comes back in id order on equal distance, so ties favor the lowest id
            let better = match best {
                None => true,
                Some((bm, bj)) => m < bm || (m == bm && controls[j] < controls[bj]),
            };
            if better {
                best = Some((m, j));
            }
        }
        match best {
            Some((m, j)) => {
                available[j] = false;
                let c = controls[j];
                let gap = (logits[t] - logits[c]).abs();
                out.pairs.push(MatchedPair {
                    day,
                    level,
                    treated: rows[t].ego,
                    control: rows[c].ego,
                    treated_row: t,
                    control_row: c,
                    logit_gap: gap,
                    std_gap: if sd > 0.0 { gap / sd } else { 0.0 },
                    mahalanobis: m,
                    ann_distance: space.euclidean(t, c),
                    treated_outcome: rows[t].outcome,
                    control_outcome: rows[c].outcome,
                });
            }
            None => out.unmatched.push(rows[t].ego),
        }
    }
    out.overlap = with_support as f64 / treated.len() as f64;
    out
}

#[cfg(test)]
mod tests {
    use super::super::panel::{CovariateSchema, PanelRow, TreatmentKind};
    use super::*;
    use crate::graph::Direction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel_from(x: Vec<Vec<f64>>, level: Vec<u8>) -> TreatmentPanel {
        let p = x[0].len();
        let schema = CovariateSchema { names: (0..p).map(|j| format!("x{j}")).collect(), core: (0..p).collect() };
        let rows = (0..x.len()).map(|i| PanelRow { ego: i, day: 3, level: level[i], outcome: false }).collect();
        TreatmentPanel::from_rows(TreatmentKind::Timing { d: 1 }, Direction::Followee, schema, rows, x).unwrap()
    }

    const ALL: &dyn Fn(usize) -> bool = &|_| true;

    #[test]
    fn exact_index_orders_and_respects_mask() {
        let pts = [0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 5.0, 5.0];
        let idx = ExactIndex::new(&pts, 2);
        assert_eq!(idx.query(&[0.1, 0.0], 3, &[true; 4]), vec![0, 1, 2]);
        assert_eq!(idx.query(&[0.0, 0.0], 2, &[false, true, true, true]), vec![1, 2]);
    }

    #[test]
    fn identical_control_matched_at_zero() {
        let x = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 0.0]];
        let p = panel_from(x, vec![1, 0, 0, 0]);
        let space = MatchSpace::new(&p).unwrap();
        let logits = vec![0.3, 0.3, 0.9, -0.4];
        let m = match_day(&p, &space, &logits, ALL, 3, 1, &MatchConfig::default());
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].control, 1);
        assert_eq!(m.pairs[0].mahalanobis, 0.0);
    }

    #[test]
    fn outside_caliper_unmatched() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let p = panel_from(x, vec![1, 0, 0]);
        let space = MatchSpace::new(&p).unwrap();
        let m = match_day(&p, &space, &[5.0, 0.0, 0.1], ALL, 3, 1, &MatchConfig::default());
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched, vec![0]);
        assert!(m.overlap < 1.0);
    }

    #[test]
    fn skipped_without_controls() {
        let p = panel_from(vec![vec![1.0], vec![2.0]], vec![1, 1]);
        let space = MatchSpace::new(&p).unwrap();
        let m = match_day(&p, &space, &[0.0, 0.0], ALL, 3, 1, &MatchConfig::default());
        assert!(m.skipped.is_some());
    }

    /// Greedy by treated id over every unused control inside the caliper,
    /// with Mahalanobis distances from an explicit inverse covariance.
    fn oracle(x: &[Vec<f64>], level: &[u8], logits: &[f64]) -> Vec<(usize, usize)> {
        let n = x.len();
        let p = x[0].len();
        let mut z = vec![vec![0.0; p]; n];
        for j in 0..p {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let sd = (x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            for i in 0..n {
                z[i][j] = (x[i][j] - mean) / sd;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for r in &z {
            for a in 0..p {
                for b in 0..p {
                    cov[(a, b)] += r[a] * r[b] / n as f64;
                }
            }
        }
        cov += DMatrix::identity(p, p) * 1e-6;
        let inv = cov.try_inverse().unwrap();
        let maha = |a: usize, b: usize| {
            let d = nalgebra::DVector::from_iterator(p, (0..p).map(|j| z[a][j] - z[b][j]));
            (d.transpose() * &inv * &d)[(0, 0)].sqrt()
        };
        let treated: Vec<usize> = (0..n).filter(|&i| level[i] == 1).collect();
        let controls: Vec<usize> = (0..n).filter(|&i| level[i] == 0).collect();
        let all: Vec<f64> = treated.iter().chain(&controls).map(|&i| logits[i]).collect();
        let cal = 0.1 * sample_sd(&all);
        let mut used = vec![false; n];
        let mut pairs = Vec::new();
        for &t in &treated {
            let mut best: Option<(f64, usize)> = None;
            for &c in &controls {
                if used[c] || (logits[t] - logits[c]).abs() > cal {
                    continue;
                }
                let d = maha(t, c);
                if best.is_none_or(|(bd, _)| d < bd - 1e-12) {
                    best = Some((d, c));
                }
            }
            if let Some((_, c)) = best {
                used[c] = true;
                pairs.push((t, c));
            }
        }
        pairs
    }

    #[test]
    fn greedy_equals_brute_force_on_micro_instances() {
        for seed in 0..300u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let mut level = vec![0u8; 8];
            for &t in rand::seq::index::sample(&mut rng, 8, 3).iter().collect::<Vec<_>>().iter() {
                level[t] = 1;
            }
            let logits: Vec<f64> = (0..8).map(|_| rng.random_range(-0.3..0.3)).collect();
            let p = panel_from(x.clone(), level.clone());
            let space = MatchSpace::new(&p).unwrap();
            let m = match_day(&p, &space, &logits, ALL, 3, 1, &MatchConfig::default());
            let got: Vec<(usize, usize)> = m.pairs.iter().map(|q| (q.treated, q.control)).collect();
            assert_eq!(got, oracle(&x, &level, &logits), "seed {seed}");
        }
    }
}
