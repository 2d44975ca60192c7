//! Binary and multinomial logistic propensity scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::panel::TreatmentPanel;
use crate::error::{LabError, Result};
use crate::structtest::average_ranks;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    /// Levels with fewer rows are dropped from the fit and from matching.
    pub min_rows_per_level: usize,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            min_rows_per_level: 20,
            ridge: 1e-6,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropensityKind {
    Binary,
    Multinomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub kind: PropensityKind,
    /// Modeled levels; the first is the reference (control) level.
    pub levels: Vec<u8>,
    /// Per non-reference level: intercept then one slope per standardized covariate.
    pub coefficients: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// AUC of the fitted score over all included rows (binary only).
    pub auc: Option<f64>,
    /// Linear predictors per panel row, one per non-reference level.
    #[serde(skip)]
    eta: Vec<Vec<f64>>,
    /// Whether each panel row's level was part of the fit.
    #[serde(skip)]
    included: Vec<bool>,
}

fn standardize(panel: &TreatmentPanel) -> (Vec<f64>, Vec<f64>) {
    let p = panel.dim();
    let n = panel.len() as f64;
    let mut mean = vec![0.0; p];
    for i in 0..panel.len() {
        for (m, x) in mean.iter_mut().zip(panel.covariates(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; p];
    for i in 0..panel.len() {
        for (j, x) in panel.covariates(i).iter().enumerate() {
            var[j] += (x - mean[j]).powi(2);
        }
    }
    let scale = var.iter().map(|v| (v / n).sqrt()).collect();
    (mean, scale)
}

fn design_row(x: &[f64], mean: &[f64], scale: &[f64], out: &mut [f64]) {
    out[0] = 1.0;
    for j in 0..x.len() {
        out[j + 1] = if scale[j] > 0.0 { (x[j] - mean[j]) / scale[j] } else { 0.0 };
    }
}

/// `ln(1 + sum exp(eta))` with the reference level's zero included.
fn log_denominator(eta: &[f64]) -> f64 {
    let m = eta.iter().copied().fold(0.0, f64::max);
    m + ((-m).exp() + eta.iter().map(|e| (e - m).exp()).sum::<f64>()).ln()
}

/// Area under the ROC curve via the rank-sum statistic; `None` if a class is empty.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n1 = positive.iter().filter(|&&p| p).count();
    let n0 = positive.len() - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let r1: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    Some((r1 - (n1 * (n1 + 1)) as f64 / 2.0) / (n1 as f64 * n0 as f64))
}

struct Design {
    x: Vec<f64>,
    y: Vec<usize>,
    q: usize,
}

fn penalized_ll(d: &Design, theta: &[f64], k: usize, ridge: f64) -> f64 {
    let q = d.q;
    let mut ll = 0.0;
    let mut eta = vec![0.0; k];
    for (i, &yi) in d.y.iter().enumerate() {
        let xi = &d.x[i * q..(i + 1) * q];
        for (c, e) in eta.iter_mut().enumerate() {
            *e = theta[c * q..(c + 1) * q].iter().zip(xi).map(|(a, b)| a * b).sum();
        }
        ll -= log_denominator(&eta);
        if yi > 0 {
            ll += eta[yi - 1];
        }
    }
    ll - 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
}

impl PropensityModel {
    pub fn fit(panel: &TreatmentPanel, cfg: &PropensityConfig) -> Result<Self> {
        if panel.is_empty() {
            return Err(LabError::insufficient("panel is empty"));
        }
        let mut counts = [0usize; 256];
        for r in panel.rows() {
            counts[usize::from(r.level)] += 1;
        }
        let levels: Vec<u8> = (0..=255u8).filter(|&l| counts[usize::from(l)] >= cfg.min_rows_per_level.max(1)).collect();
        if levels.len() < 2 || levels[0] != 0 {
            return Err(LabError::insufficient(format!(
                "need the control level and at least one treated level with {} rows each",
                cfg.min_rows_per_level
            )));
        }
        let k = levels.len() - 1;
        let kind = if panel.kind.is_multilevel() { PropensityKind::Multinomial } else { PropensityKind::Binary };
        let (mean, scale) = standardize(panel);
        let q = panel.dim() + 1;

        let included: Vec<bool> = panel.rows().iter().map(|r| levels.binary_search(&r.level).is_ok()).collect();
        let mut d = Design { x: Vec::new(), y: Vec::new(), q };
        let mut buf = vec![0.0; q];
        for (i, r) in panel.rows().iter().enumerate() {
            if included[i] {
                design_row(panel.covariates(i), &mean, &scale, &mut buf);
                d.x.extend_from_slice(&buf);
                d.y.push(levels.binary_search(&r.level).expect("included"));
            }
        }

        let dim = k * q;
        let mut theta = vec![0.0; dim];
        let mut ll = penalized_ll(&d, &theta, k, cfg.ridge);
        let mut iterations = 0;
        let mut converged = false;
        let mut eta = vec![0.0; k];
        let mut prob = vec![0.0; k];
        while iterations < cfg.max_iter {
            iterations += 1;
            let mut grad = DVector::<f64>::zeros(dim);
            let mut info = DMatrix::<f64>::zeros(dim, dim);
            for (i, &yi) in d.y.iter().enumerate() {
                let xi = &d.x[i * q..(i + 1) * q];
                for (c, e) in eta.iter_mut().enumerate() {
                    *e = theta[c * q..(c + 1) * q].iter().zip(xi).map(|(a, b)| a * b).sum();
                }
                let lse = log_denominator(&eta);
                for c in 0..k {
                    prob[c] = (eta[c] - lse).exp();
                }
                for c in 0..k {
                    let resid = f64::from(u8::from(yi == c + 1)) - prob[c];
                    for a in 0..q {
                        grad[c * q + a] += resid * xi[a];
                    }
                    for c2 in c..k {
                        let w = if c == c2 { prob[c] * (1.0 - prob[c]) } else { -prob[c] * prob[c2] };
                        for a in 0..q {
                            let wa = w * xi[a];
                            for b in 0..q {
                                info[(c * q + a, c2 * q + b)] += wa * xi[b];
                            }
                        }
                    }
                }
            }
            for r in 0..dim {
                for c in 0..r {
                    info[(r, c)] = info[(c, r)];
                }
                grad[r] -= cfg.ridge * theta[r];
                info[(r, r)] += cfg.ridge;
            }
            let step = info
                .cholesky()
                .ok_or(LabError::NoConvergence { what: "propensity Newton step", iterations })?
                .solve(&grad);

            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
                let cll = penalized_ll(&d, &cand, k, cfg.ridge);
                if cll >= ll - 1e-12 * ll.abs() {
                    let moved = step.iter().map(|s| (t * s).abs()).fold(0.0, f64::max);
                    theta = cand;
                    ll = cll;
                    accepted = true;
                    if moved < cfg.tol {
                        converged = true;
                    }
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // no ascent direction left: at the optimum up to rounding
                converged = step.iter().map(|s| s.abs()).fold(0.0, f64::max) < cfg.tol.sqrt();
                break;
            }
            if converged {
                break;
            }
        }
        if !converged {
            return Err(LabError::NoConvergence { what: "propensity fit", iterations });
        }

        let coefficients: Vec<Vec<f64>> = theta.chunks(q).map(<[f64]>::to_vec).collect();
        let eta: Vec<Vec<f64>> = (0..panel.len())
            .map(|i| {
                design_row(panel.covariates(i), &mean, &scale, &mut buf);
                coefficients.iter().map(|b| b.iter().zip(&buf).map(|(a, x)| a * x).sum()).collect()
            })
            .collect();
        let auc = if kind == PropensityKind::Binary {
            let (s, y): (Vec<f64>, Vec<bool>) = (0..panel.len())
                .filter(|&i| included[i])
                .map(|i| (eta[i][0], panel.rows()[i].level != 0))
                .unzip();
            auc(&s, &y)
        } else {
            None
        };
        Ok(PropensityModel {
            kind,
            levels,
            coefficients,
            means: mean,
            scales: scale,
            iterations,
            log_likelihood: ll,
            auc,
            eta,
            included,
        })
    }

    pub fn is_included(&self, row: usize) -> bool {
        self.included[row]
    }

    pub fn treated_levels(&self) -> &[u8] {
        &self.levels[1..]
    }

    /// Class probabilities for a panel row, in `levels` order.
    pub fn probabilities(&self, row: usize) -> Vec<f64> {
        let e = &self.eta[row];
        let lse = log_denominator(e);
        std::iter::once(-lse).chain(e.iter().map(|v| v - lse)).map(f64::exp).collect()
    }

    /// `logit P(T = level)` for every panel row.
    pub fn level_logits(&self, level: u8) -> Result<Vec<f64>> {
        let c = self
            .levels
            .iter()
            .position(|&l| l == level)
            .filter(|&c| c > 0)
            .ok_or_else(|| LabError::invalid(format!("level {level} is not a modeled treatment level")))?;
        Ok(self
            .eta
            .iter()
            .map(|e| {
                let all = log_denominator(e);
                let log_p = e[c - 1] - all;
                // log(1 - p) = log(sum over the other classes)
                let mut others: Vec<f64> = e.iter().enumerate().filter(|&(j, _)| j != c - 1).map(|(_, v)| *v).collect();
                others.push(0.0);
                let m = others.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_q = m + others.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                log_p - (log_q - all)
            })
            .collect())
    }

    /// Coefficients on the original covariate scale (intercept first).
    pub fn raw_coefficients(&self) -> Vec<Vec<f64>> {
        self.coefficients
            .iter()
            .map(|b| {
                let mut out = vec![b[0]];
                for j in 0..self.means.len() {
                    let s = if self.scales[j] > 0.0 { b[j + 1] / self.scales[j] } else { 0.0 };
                    out[0] -= s * self.means[j];
                    out.push(s);
                }
                out
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::panel::{CovariateSchema, PanelRow, TreatmentKind};
    use super::*;
    use crate::graph::Direction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel_from(x: Vec<Vec<f64>>, level: Vec<u8>, kind: TreatmentKind) -> TreatmentPanel {
        let p = x[0].len();
        let schema = CovariateSchema { names: (0..p).map(|j| format!("x{j}")).collect(), core: (0..p).collect() };
        let rows = (0..x.len()).map(|i| PanelRow { ego: i, day: 0, level: level[i], outcome: false }).collect();
        TreatmentPanel::from_rows(kind, Direction::Followee, schema, rows, x).unwrap()
    }

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &[false, false, true, true]), Some(1.0));
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &[true, true, false, false]), Some(0.0));
        assert_eq!(auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auc(&[0.5, 0.5], &[true, true]), None);
    }

    #[test]
    fn recovers_known_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta = [-0.5, 1.0, -0.7];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..10_000 {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(0.0..3.0);
            let p = sigmoid(theta[0] + theta[1] * a + theta[2] * b);
            x.push(vec![a, b]);
            y.push(u8::from(rng.random::<f64>() < p));
        }
        let panel = panel_from(x, y, TreatmentKind::Timing { d: 1 });
        let m = PropensityModel::fit(&panel, &PropensityConfig::default()).unwrap();
        let raw = &m.raw_coefficients()[0];
        for (est, truth) in raw.iter().zip(theta) {
            assert!((est - truth).abs() < 0.1, "{raw:?}");
        }
    }

    #[test]
    fn random_labels_give_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..1000).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<u8> = (0..1000).map(|_| u8::from(rng.random::<bool>())).collect();
        let m = PropensityModel::fit(&panel_from(x, y, TreatmentKind::Timing { d: 1 }), &PropensityConfig::default()).unwrap();
        assert!((m.auc.unwrap() - 0.5).abs() < 0.05, "{:?}", m.auc);
    }

    #[test]
    fn separable_data_handled_by_ridge() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![f64::from(i), f64::from(i % 7)]).collect();
        let y: Vec<u8> = (0..200).map(|i| u8::from(i >= 100)).collect();
        let m = PropensityModel::fit(&panel_from(x, y, TreatmentKind::Timing { d: 1 }), &PropensityConfig::default()).unwrap();
        assert!(m.auc.unwrap() >= 0.99);
    }

    #[test]
    fn multinomial_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..3000 {
            let a: f64 = rng.random_range(-1.0..1.0);
            x.push(vec![a, rng.random::<f64>()]);
            let z: f64 = a + rng.random_range(-1.0..1.0);
            y.push(if z < -0.5 { 0 } else if z < 0.3 { 1 } else if z < 0.9 { 2 } else { 4 });
        }
        let panel = panel_from(x, y, TreatmentKind::Dose);
        let m = PropensityModel::fit(&panel, &PropensityConfig::default()).unwrap();
        assert_eq!(m.kind, PropensityKind::Multinomial);
        assert_eq!(m.levels, vec![0, 1, 2, 4]);
        for i in 0..panel.len() {
            let p = m.probabilities(i);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let lg = m.level_logits(4).unwrap();
        for i in (0..panel.len()).step_by(97) {
            let p4 = m.probabilities(i)[3];
            assert!((lg[i] - (p4 / (1.0 - p4)).ln()).abs() < 1e-9);
        }
        assert!(m.level_logits(0).is_err());
    }

    #[test]
    fn sparse_levels_dropped() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![f64::from(i % 10)]).collect();
        let y: Vec<u8> = (0..100).map(|i| if i < 5 { 3 } else { u8::from(i % 2 == 0) }).collect();
        let m = PropensityModel::fit(&panel_from(x, y, TreatmentKind::Dose), &PropensityConfig::default()).unwrap();
        assert_eq!(m.levels, vec![0, 1]);
        assert!(!m.is_included(0));
    }

    #[test]
    fn single_level_rejected() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![f64::from(i)]).collect();
        let y = vec![0u8; 50];
        assert!(PropensityModel::fit(&panel_from(x, y, TreatmentKind::Timing { d: 1 }), &PropensityConfig::default()).is_err());
    }
}
