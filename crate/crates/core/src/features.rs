//! Egocentric features at adoption time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adoption::AdoptionLog;
use crate::error::{LabError, Result};
use crate::graph::{DirectedGraph, NodeId};
use crate::shocks::{Day, ShockSchedule};

pub const N_FEATURES: usize = 7;

/// Canonical column order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "m",
    "k",
    "saturation",
    "exposure_duration",
    "influence_recency",
    "shock_intensity",
    "shock_recency",
];

/// Value used for durations that are undefined (never exposed, no shock yet).
pub const SENTINEL: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Followees that adopted strictly before the ego.
    pub m: u32,
    /// In-degree (number of followees).
    pub k: u32,
    /// `m / k`, zero when `k = 0`.
    pub saturation: f64,
    /// Days since the first followee adoption, or `-1`.
    pub exposure_duration: i64,
    /// Days since the latest followee adoption, or `-1`.
    pub influence_recency: i64,
    pub shock_intensity: f64,
    /// Days since the most recent shock peak, or `-1`.
    pub shock_recency: i64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            f64::from(self.m),
            f64::from(self.k),
            self.saturation,
            self.exposure_duration as f64,
            self.influence_recency as f64,
            self.shock_intensity,
            self.shock_recency as f64,
        ]
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != N_FEATURES {
            return Err(LabError::invalid(format!("feature vector has {} entries, expected {N_FEATURES}", x.len())));
        }
        Ok(FeatureVector {
            m: x[0] as u32,
            k: x[1] as u32,
            saturation: x[2],
            exposure_duration: x[3] as i64,
            influence_recency: x[4] as i64,
            shock_intensity: x[5],
            shock_recency: x[6] as i64,
        })
    }

    /// Assembles the vector from exposure bookkeeping.
    pub fn assemble(
        m: u32,
        k: u32,
        first_exposure: Option<Day>,
        last_exposure: Option<Day>,
        shocks: &ShockSchedule,
        t: Day,
    ) -> Self {
        FeatureVector {
            m,
            k,
            saturation: if k > 0 { f64::from(m) / f64::from(k) } else { 0.0 },
            exposure_duration: first_exposure.map_or(SENTINEL, |d| i64::from(t - d)),
            influence_recency: last_exposure.map_or(SENTINEL, |d| i64::from(t - d)),
            shock_intensity: shocks.intensity(t),
            shock_recency: shocks.recency(t).map_or(SENTINEL, i64::from),
        }
    }
}

/// Features of ego `u` adopting on day `t_u`, given every node's adoption day.
///
/// Only followees with `t_v < t_u` count as adopted.
pub fn extract_features(
    g: &DirectedGraph,
    adoption_times: &[Option<Day>],
    shocks: &ShockSchedule,
    u: NodeId,
    t_u: Day,
) -> Result<FeatureVector> {
    if u >= g.node_count() {
        return Err(LabError::NodeOutOfRange {
            id: u,
            count: g.node_count(),
        });
    }
    let mut m = 0u32;
    let mut first: Option<Day> = None;
    let mut last: Option<Day> = None;
    for &v in g.followees(u) {
        if let Some(tv) = adoption_times[v] {
            if tv < t_u {
                m += 1;
                first = Some(first.map_or(tv, |f| f.min(tv)));
                last = Some(last.map_or(tv, |l| l.max(tv)));
            }
        }
    }
    Ok(FeatureVector::assemble(m, g.in_degree(u) as u32, first, last, shocks, t_u))
}

/// Features of every adopter in the log, in log order.
pub fn extract_log(g: &DirectedGraph, log: &AdoptionLog, shocks: &ShockSchedule) -> Result<Vec<FeatureVector>> {
    let times = log.adoption_times(g.node_count())?;
    log.records()
        .iter()
        .map(|r| extract_features(g, &times, shocks, r.node, r.day))
        .collect()
}

/// Writes the feature matrix with optional labels as CSV.
pub fn write_feature_csv(path: &Path, rows: &[FeatureVector], labels: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    if labels.is_some() {
        header.push("label");
    }
    w.write_record(&header)?;
    for (i, f) in rows.iter().enumerate() {
        let mut rec = vec![
            f.m.to_string(),
            f.k.to_string(),
            f.saturation.to_string(),
            f.exposure_duration.to_string(),
            f.influence_recency.to_string(),
            f.shock_intensity.to_string(),
            f.shock_recency.to_string(),
        ];
        if let Some(l) = labels {
            rec.push(l[i].clone());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Reads a feature CSV; the `label` column is returned when present.
pub fn read_feature_csv(path: &Path) -> Result<(Vec<FeatureVector>, Option<Vec<String>>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(LabError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("column {i} must be `{name}`"),
            });
        }
    }
    let has_label = headers.get(N_FEATURES) == Some("label");
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut x = [0.0; N_FEATURES];
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(|| LabError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("bad value in column `{}`", FEATURE_NAMES[j]),
            })?;
        }
        rows.push(FeatureVector::from_slice(&x)?);
        if has_label {
            labels.push(rec.get(N_FEATURES).unwrap_or_default().to_string());
        }
    }
    Ok((rows, has_label.then_some(labels)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shocks::Shock;

    /// Ego 0 with 12 followees; two adopt on days 5 and 8, one on day 9.
    fn ego() -> (DirectedGraph, Vec<Option<Day>>) {
        let edges: Vec<_> = (1..=12).map(|j| (0, j)).collect();
        let (g, _) = DirectedGraph::from_edges(13, &edges).unwrap();
        let mut t = vec![None; 13];
        t[3] = Some(5);
        t[7] = Some(8);
        t[9] = Some(9);
        (g, t)
    }

    #[test]
    fn hand_computed_ego() {
        let (g, t) = ego();
        let sched = ShockSchedule::new(vec![Shock { tau: 20, gamma: 1.0, alpha: 0.5 }]).unwrap();
        let f = extract_features(&g, &t, &sched, 0, 9).unwrap();
        assert_eq!(f.m, 2);
        assert_eq!(f.k, 12);
        assert!((f.saturation - 2.0 / 12.0).abs() < 1e-15);
        assert_eq!(f.exposure_duration, 4);
        assert_eq!(f.influence_recency, 1);
        assert_eq!(f.shock_intensity, 0.0);
        assert_eq!(f.shock_recency, -1);
    }

    #[test]
    fn unexposed_sentinels() {
        let (g, t) = ego();
        let f = extract_features(&g, &t, &ShockSchedule::empty(), 0, 5).unwrap();
        assert_eq!((f.m, f.saturation, f.exposure_duration, f.influence_recency), (0, 0.0, -1, -1));
    }

    #[test]
    fn adoption_on_peak_day() {
        let (g, t) = ego();
        let sched = ShockSchedule::reference();
        let tau = sched.shocks()[4].tau;
        let f = extract_features(&g, &t, &sched, 0, tau).unwrap();
        assert_eq!(f.shock_intensity, 1.0);
        assert_eq!(f.shock_recency, 0);
    }

    #[test]
    fn no_lookahead() {
        let (g, mut t) = ego();
        let before = extract_features(&g, &t, &ShockSchedule::empty(), 0, 9).unwrap();
        t[11] = Some(9);
        t[12] = Some(40);
        let after = extract_features(&g, &t, &ShockSchedule::empty(), 0, 9).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn out_of_range() {
        let (g, t) = ego();
        assert!(extract_features(&g, &t, &ShockSchedule::empty(), 99, 1).is_err());
    }

    #[test]
    fn csv_roundtrip_keeps_labels() {
        let (g, t) = ego();
        let rows = vec![
            extract_features(&g, &t, &ShockSchedule::reference(), 0, 9).unwrap(),
            extract_features(&g, &t, &ShockSchedule::reference(), 0, 600).unwrap(),
        ];
        let labels = vec!["simple".to_string(), "shock".to_string()];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_feature_csv(&p, &rows, Some(&labels)).unwrap();
        let (back, l) = read_feature_csv(&p).unwrap();
        assert_eq!(back, rows);
        assert_eq!(l.unwrap(), labels);
    }
}
