//! Daily mechanism decomposition of an observed adoption log.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BoostedForest, NC};
use crate::adoption::AdoptionLog;
use crate::cascade::Mechanism;
use crate::error::{LabError, Result};
use crate::features::{extract_log, FeatureVector};
use crate::graph::{DirectedGraph, NodeId};
use crate::shocks::{Day, ShockSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventPrediction {
    pub node: NodeId,
    pub day: Day,
    pub label: Mechanism,
    pub probs: [f64; NC],
    pub features: FeatureVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyMechanismCounts {
    pub day: Day,
    pub counts: [usize; NC],
    pub proportions: [f64; NC],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub classes: Vec<Mechanism>,
    pub events: Vec<EventPrediction>,
    /// Only days with at least one adoption.
    pub daily: Vec<DailyMechanismCounts>,
    pub overall_counts: [usize; NC],
    pub overall_shares: [f64; NC],
}

impl DecompositionReport {
    pub fn share(&self, m: Mechanism) -> f64 {
        self.overall_shares[m.index()]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| LabError::io(path, e))
    }

    /// One row per day: `day,n,simple,complex,spontaneous,shock` proportions.
    pub fn write_daily_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["day".to_string(), "n".to_string()];
        header.extend(Mechanism::ALL.iter().map(|m| m.name().to_string()));
        w.write_record(&header)?;
        for d in &self.daily {
            let mut rec = vec![d.day.to_string(), d.counts.iter().sum::<usize>().to_string()];
            rec.extend(d.proportions.iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| LabError::io(path, e))
    }
}

fn proportions(counts: &[usize; NC]) -> [f64; NC] {
    let total: usize = counts.iter().sum();
    counts.map(|c| c as f64 / total as f64)
}

/// Classifies every adopter at its adoption day and aggregates by day.
pub fn decompose(
    model: &BoostedForest,
    log: &AdoptionLog,
    g: &DirectedGraph,
    shocks: &ShockSchedule,
) -> Result<DecompositionReport> {
    if log.is_empty() {
        return Err(LabError::insufficient("adoption log is empty"));
    }
    let features = extract_log(g, log, shocks)?;
    let preds = model.predict_many(&features);
    let events: Vec<EventPrediction> = log
        .records()
        .par_iter()
        .zip(features.par_iter().zip(preds.par_iter()))
        .map(|(r, (f, p))| EventPrediction {
            node: r.node,
            day: r.day,
            label: p.label,
            probs: p.probs,
            features: *f,
        })
        .collect();

    let mut by_day: BTreeMap<Day, [usize; NC]> = BTreeMap::new();
    let mut overall = [0usize; NC];
    for e in &events {
        by_day.entry(e.day).or_default()[e.label.index()] += 1;
        overall[e.label.index()] += 1;
    }
    let daily = by_day
        .into_iter()
        .map(|(day, counts)| DailyMechanismCounts {
            day,
            counts,
            proportions: proportions(&counts),
        })
        .collect();
    Ok(DecompositionReport {
        classes: Mechanism::ALL.to_vec(),
        events,
        daily,
        overall_counts: overall,
        overall_shares: proportions(&overall),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{BoostParams, Dataset};
    use super::*;
    use crate::adoption::Adoption;

    fn model() -> BoostedForest {
        let mut d = Dataset::default();
        for i in 0..30u32 {
            d.x.push([f64::from(i % 3 + 1), 10.0, 0.1, 1.0, 1.0, 0.0, -1.0]);
            d.y.push(Mechanism::Simple);
            d.x.push([0.0, 10.0, 0.0, -1.0, -1.0, 1.0, 0.0]);
            d.y.push(Mechanism::Shock);
        }
        BoostedForest::fit(&d, &BoostParams { n_rounds: 20, ..Default::default() }, 0).unwrap()
    }

    fn world() -> DirectedGraph {
        let edges: Vec<_> = (1..6).map(|i| (i, 0)).collect();
        DirectedGraph::from_edges(6, &edges).unwrap().0
    }

    #[test]
    fn single_adopter_one_hot() {
        let log = AdoptionLog::new(vec![Adoption { node: 3, day: 4 }], 0, 10).unwrap();
        let r = decompose(&model(), &log, &world(), &ShockSchedule::empty()).unwrap();
        assert_eq!(r.overall_shares.iter().filter(|&&s| s == 1.0).count(), 1);
        assert_eq!(r.overall_shares.iter().filter(|&&s| s == 0.0).count(), 3);
    }

    #[test]
    fn daily_proportions_sum_to_one() {
        let recs = (0..6).map(|i| Adoption { node: i, day: (i / 2) as Day }).collect();
        let log = AdoptionLog::new(recs, 0, 10).unwrap();
        let r = decompose(&model(), &log, &world(), &ShockSchedule::empty()).unwrap();
        assert_eq!(r.daily.len(), 3);
        for d in &r.daily {
            assert!((d.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(r.events.len(), 6);
    }

    #[test]
    fn empty_log_rejected() {
        let log = AdoptionLog::new(vec![], 0, 10).unwrap();
        assert!(decompose(&model(), &log, &world(), &ShockSchedule::empty()).is_err());
    }
}
