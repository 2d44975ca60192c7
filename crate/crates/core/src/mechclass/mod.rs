//! Gradient-boosted tree classifier from egocentric features to mechanism.
//!
//! Multi-class softmax boosting: each round fits one second-order regression
//! tree per class on the cross-entropy gradient `p_k - y_k` and hessian
//! `p_k (1 - p_k)`, with L2-regularized leaf weights `-G / (H + λ)`.

mod decompose;
mod tree;

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeEvent, Mechanism};
use crate::error::{LabError, Result};
use crate::features::{FeatureVector, FEATURE_NAMES, N_FEATURES};
use crate::rng::{self, Domain};

pub use decompose::{decompose, DailyMechanismCounts, DecompositionReport, EventPrediction};
pub use tree::TreeNode;
use tree::{Binner, TreeParams};

pub(crate) const NF: usize = N_FEATURES;
const NC: usize = 4;

pub const MODEL_FORMAT: &str = "contagion-lab/boosted-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub max_bins: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_rounds: 300,
            max_depth: 6,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            lambda: 1.0,
            max_bins: 256,
        }
    }
}

/// Labeled feature matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<[f64; NF]>,
    pub y: Vec<Mechanism>,
}

impl Dataset {
    /// Seeded day-0 adopters carry no rule and are left out.
    pub fn from_events(events: &[CascadeEvent]) -> Self {
        let kept = || events.iter().filter(|e| !e.seeded);
        Dataset {
            x: kept().map(|e| e.features.to_array()).collect(),
            y: kept().map(|e| e.mechanism).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Rows sorted by (feature bits, label), so fitting is independent of input order.
    fn canonical(&self) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            let ka = (self.x[a].map(f64::to_bits), self.y[a]);
            let kb = (self.x[b].map(f64::to_bits), self.y[b]);
            ka.cmp(&kb)
        });
        Dataset {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    fn class_count(&self) -> [usize; NC] {
        let mut c = [0; NC];
        for y in &self.y {
            c[y.index()] += 1;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedForest {
    pub format: String,
    pub version: u32,
    pub classes: Vec<Mechanism>,
    pub feature_names: Vec<String>,
    pub params: BoostParams,
    pub seed: u64,
    pub base_margin: [f64; NC],
    /// `trees[round][class]`.
    pub trees: Vec<Vec<TreeNode>>,
    /// Mean training cross-entropy after each round.
    pub train_loss: Vec<f64>,
}

fn softmax(z: &[f64; NC]) -> [f64; NC] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn cross_entropy(margins: &[[f64; NC]], y: &[Mechanism]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(z, c)| {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[c.index()]
        })
        .sum::<f64>()
        / margins.len() as f64
}

impl BoostedForest {
    /// Fits on every row of `data`.
    pub fn fit(data: &Dataset, params: &BoostParams, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(LabError::insufficient("no training rows"));
        }
        let counts = data.class_count();
        if counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(LabError::insufficient("training data holds a single class"));
        }
        if params.n_rounds == 0 || params.max_bins < 2 {
            return Err(LabError::invalid("need at least one round and two bins"));
        }
        let data = data.canonical();
        let n = data.len();
        let binner = Binner::fit(&data.x, params.max_bins);
        let bins = binner.transform(&data.x);
        let tp = TreeParams {
            max_depth: params.max_depth,
            min_child_weight: params.min_child_weight,
            lambda: params.lambda,
            learning_rate: params.learning_rate,
        };

        let base_margin = counts.map(|c| ((c as f64 + 1.0) / (n + NC) as f64).ln());
        let mut margins = vec![base_margin; n];
        let mut trees = Vec::with_capacity(params.n_rounds);
        let mut train_loss = Vec::with_capacity(params.n_rounds);
        let mut g = vec![vec![0.0; n]; NC];
        let mut h = vec![vec![0.0; n]; NC];

        for _ in 0..params.n_rounds {
            for (i, z) in margins.iter().enumerate() {
                let p = softmax(z);
                for k in 0..NC {
                    let y = if data.y[i].index() == k { 1.0 } else { 0.0 };
                    g[k][i] = p[k] - y;
                    h[k][i] = (p[k] * (1.0 - p[k])).max(1e-16);
                }
            }
            let round: Vec<TreeNode> = (0..NC)
                .into_par_iter()
                .map(|k| tree::grow(&binner, &bins, &g[k], &h[k], (0..n as u32).collect(), &tp))
                .collect();
            for (i, z) in margins.iter_mut().enumerate() {
                for (k, t) in round.iter().enumerate() {
                    z[k] += t.predict(&data.x[i]);
                }
            }
            trees.push(round);
            train_loss.push(cross_entropy(&margins, &data.y));
        }

        Ok(BoostedForest {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            classes: Mechanism::ALL.to_vec(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            params: *params,
            seed,
            base_margin,
            trees,
            train_loss,
        })
    }

    pub fn margins(&self, x: &[f64]) -> Result<[f64; NC]> {
        if x.len() != NF {
            return Err(LabError::invalid(format!("feature vector has {} entries, expected {NF}", x.len())));
        }
        let mut z = self.base_margin;
        for round in &self.trees {
            for (k, t) in round.iter().enumerate() {
                z[k] += t.predict(x);
            }
        }
        Ok(z)
    }

    /// Class probabilities in `Mechanism::ALL` order.
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; NC]> {
        Ok(softmax(&self.margins(x)?))
    }

    pub fn predict(&self, x: &FeatureVector) -> Prediction {
        let probs = self.predict_proba(&x.to_array()).expect("fixed arity");
        Prediction::from_probs(probs)
    }

    pub fn predict_many(&self, xs: &[FeatureVector]) -> Vec<Prediction> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    fn all_splits(&self, class: Option<usize>) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for round in &self.trees {
            for (k, t) in round.iter().enumerate() {
                if class.is_none_or(|c| c == k) {
                    t.visit_splits(&mut |f, gain| out.push((f, gain)));
                }
            }
        }
        out
    }

    /// Mean split gain per feature, normalized to sum to one.
    pub fn gain_importance(&self) -> Result<[f64; NF]> {
        gain_from_splits(&self.all_splits(None))
    }

    /// Same, restricted to the trees of one class.
    pub fn gain_importance_for(&self, class: Mechanism) -> Result<[f64; NF]> {
        gain_from_splits(&self.all_splits(Some(class.index())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let model: BoostedForest = serde_json::from_str(&text)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(LabError::invalid(format!(
                "unsupported model format {} v{}",
                model.format, model.version
            )));
        }
        Ok(model)
    }
}

fn gain_from_splits(splits: &[(usize, f64)]) -> Result<[f64; NF]> {
    if splits.is_empty() {
        return Err(LabError::Undefined("model has no splits".into()));
    }
    let mut sum = [0.0; NF];
    let mut cnt = [0usize; NF];
    for &(f, g) in splits {
        sum[f] += g;
        cnt[f] += 1;
    }
    let mut avg = [0.0; NF];
    for f in 0..NF {
        if cnt[f] > 0 {
            avg[f] = sum[f] / cnt[f] as f64;
        }
    }
    let total: f64 = avg.iter().sum();
    if total <= 0.0 {
        return Err(LabError::Undefined("all split gains are zero".into()));
    }
    Ok(avg.map(|v| v / total))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Mechanism,
    pub probs: [f64; NC],
}

impl Prediction {
    fn from_probs(probs: [f64; NC]) -> Self {
        let mut best = 0;
        for k in 1..NC {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        Prediction {
            label: Mechanism::ALL[best],
            probs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Mechanism,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[truth][predicted]`.
    pub confusion: [[usize; NC]; NC],
}

/// Macro-F1 averages over classes present in either the truth or the predictions.
pub fn evaluate(truth: &[Mechanism], predicted: &[Mechanism]) -> Metrics {
    let mut confusion = [[0usize; NC]; NC];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[t.index()][p.index()] += 1;
    }
    let mut per_class = Vec::new();
    for k in 0..NC {
        let tp = confusion[k][k] as f64;
        let support: usize = confusion[k].iter().sum();
        let pred: usize = (0..NC).map(|t| confusion[t][k]).sum();
        if support == 0 && pred == 0 {
            continue;
        }
        let precision = if pred > 0 { tp / pred as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            class: Mechanism::ALL[k],
            support,
            precision,
            recall,
            f1,
        });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len().max(1) as f64;
    let correct: usize = (0..NC).map(|k| confusion[k][k]).sum();
    Metrics {
        n: truth.len(),
        accuracy: correct as f64 / truth.len().max(1) as f64,
        macro_f1,
        per_class,
        confusion,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_rows: usize,
    pub test_rows: usize,
    pub test: Metrics,
    pub train: Metrics,
    pub gain_importance: Vec<(String, f64)>,
}

/// Stratified split: within each class, a seeded shuffle puts
/// `round(test_fraction * count)` rows in the test set.
pub fn stratified_split(data: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let data = data.canonical();
    let mut rng = rng::stream(seed, Domain::TrainSplit, 0);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in Mechanism::ALL {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    (data.subset(&train_idx), data.subset(&test_idx))
}

/// Stratified split, fit on the training part, metrics on both parts.
pub fn train(data: &Dataset, params: &BoostParams, test_fraction: f64, seed: u64) -> Result<(BoostedForest, TrainReport)> {
    if data.is_empty() {
        return Err(LabError::insufficient("no events to train on"));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(LabError::invalid("test fraction must lie in [0, 1)"));
    }
    let (tr, te) = stratified_split(data, test_fraction, seed);
    let model = BoostedForest::fit(&tr, params, seed)?;
    let score = |d: &Dataset| {
        let pred: Vec<Mechanism> = d
            .x
            .par_iter()
            .map(|x| Prediction::from_probs(model.predict_proba(x).expect("fixed arity")).label)
            .collect();
        evaluate(&d.y, &pred)
    };
    let gain = model.gain_importance()?;
    let report = TrainReport {
        train_rows: tr.len(),
        test_rows: te.len(),
        test: score(&te),
        train: score(&tr),
        gain_importance: FEATURE_NAMES.iter().map(|s| s.to_string()).zip(gain).collect(),
    };
    Ok((model, report))
}
