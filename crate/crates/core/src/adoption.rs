//! Observed (or simulated) adoption log.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::graph::{DirectedGraph, NodeId};
use crate::shocks::{Day, ShockRange};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Adoption {
    pub node: NodeId,
    pub day: Day,
}

/// At most one adoption per node, all within `[first_day, last_day]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdoptionLog {
    records: Vec<Adoption>,
    pub first_day: Day,
    pub last_day: Day,
    /// Days belonging to shock periods, as inclusive ranges.
    #[serde(default)]
    pub shock_days: Vec<(Day, Day)>,
}

impl AdoptionLog {
    /// Records are sorted by `(day, node)`.
    pub fn new(mut records: Vec<Adoption>, first_day: Day, last_day: Day) -> Result<Self> {
        if last_day < first_day {
            return Err(LabError::invalid(format!("horizon end {last_day} precedes start {first_day}")));
        }
        records.sort_unstable_by_key(|r| (r.day, r.node));
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.node) {
                return Err(LabError::invalid(format!("node {} adopts more than once", r.node)));
            }
            if r.day < first_day || r.day > last_day {
                return Err(LabError::invalid(format!(
                    "adoption of node {} on day {} outside horizon [{first_day}, {last_day}]",
                    r.node, r.day
                )));
            }
        }
        Ok(AdoptionLog {
            records,
            first_day,
            last_day,
            shock_days: Vec::new(),
        })
    }

    pub fn with_shock_days(mut self, ranges: Vec<(Day, Day)>) -> Self {
        self.shock_days = ranges;
        self
    }

    pub fn with_detected_shocks(self, ranges: &[ShockRange]) -> Self {
        self.with_shock_days(ranges.iter().map(|r| (r.start as Day, r.end as Day)).collect())
    }

    pub fn records(&self) -> &[Adoption] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn horizon_days(&self) -> u64 {
        u64::from(self.last_day - self.first_day) + 1
    }

    pub fn is_shock_day(&self, day: Day) -> bool {
        self.shock_days.iter().any(|&(a, b)| a <= day && day <= b)
    }

    /// Adoption day per node (`None` = never adopted).
    pub fn adoption_times(&self, n: usize) -> Result<Vec<Option<Day>>> {
        let mut t = vec![None; n];
        for r in &self.records {
            if r.node >= n {
                return Err(LabError::NodeOutOfRange { id: r.node, count: n });
            }
            t[r.node] = Some(r.day);
        }
        Ok(t)
    }

    /// Daily adoption counts over the horizon, index 0 = `first_day`.
    pub fn daily_counts(&self) -> Vec<u64> {
        let mut c = vec![0u64; self.horizon_days() as usize];
        for r in &self.records {
            c[(r.day - self.first_day) as usize] += 1;
        }
        c
    }

    /// Reads `node,day` rows; node ids are resolved through the graph's id map.
    /// The horizon defaults to `[0, max day]`.
    pub fn load_csv(path: &Path, g: &DirectedGraph, horizon: Option<(Day, Day)>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            node: String,
            day: Day,
        }
        let index: HashMap<&str, NodeId> = g.id_index();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut records = Vec::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let line = i as u64 + 2;
            let row = rec.map_err(|e| LabError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
            let node = *index.get(row.node.as_str()).ok_or_else(|| LabError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("unknown node `{}`", row.node),
            })?;
            records.push(Adoption { node, day: row.day });
        }
        let (first, last) = match horizon {
            Some(h) => h,
            None => (0, records.iter().map(|r| r.day).max().unwrap_or(0)),
        };
        AdoptionLog::new(records, first, last)
    }

    pub fn write_csv(&self, path: &Path, g: &DirectedGraph) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node", "day"])?;
        for r in &self.records {
            w.write_record([g.external_id(r.node), &r.day.to_string()])?;
        }
        w.flush().map_err(|e| LabError::io(path, e))
    }
}
