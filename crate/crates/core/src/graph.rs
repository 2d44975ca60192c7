//! Immutable directed follower graph.
//!
//! An edge `source -> target` means *source follows target*: `target` is one
//! of `source`'s information sources (a followee) and `source` is part of
//! `target`'s audience (a follower). The in-degree `k_i` used throughout the
//! contagion rules is the number of followees.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type NodeId = usize;

/// Which adjacency set to read for a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Nodes `i` follows.
    Followee,
    /// Nodes following `i`.
    Follower,
    /// Reciprocated ties.
    Mutual,
}

/// Compressed adjacency: `targets[offsets[i]..offsets[i + 1]]`, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl Csr {
    fn build(n: usize, pairs: &[(NodeId, NodeId)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(a, _) in pairs {
            offsets[a + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0; pairs.len()];
        for &(a, b) in pairs {
            targets[fill[a]] = b;
            fill[a] += 1;
        }
        for i in 0..n {
            targets[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Csr { offsets, targets }
    }

    #[inline]
    fn row(&self, i: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Counts reported while loading an edge list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub records: usize,
    pub nodes: usize,
    pub edges: usize,
    pub duplicates_dropped: usize,
    pub self_loops_dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectedGraph {
    followees: Csr,
    followers: Csr,
    external_ids: Vec<String>,
}

/// Per-node degree triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degrees {
    /// `|followees(i)|`, the `k_i` of the contagion rules.
    pub in_degree: usize,
    /// `|followers(i)|`.
    pub out_degree: usize,
    /// `|followees(i) ∩ followers(i)|`.
    pub mutual_degree: usize,
}

impl DirectedGraph {
    /// Builds a graph over dense ids `0..n` from `(follower, followee)` pairs.
    ///
    /// Self-loops and duplicate pairs are dropped and counted.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<(Self, LoadReport)> {
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::from_edges_with_ids(ids, edges)
    }

    pub fn from_edges_with_ids(
        external_ids: Vec<String>,
        edges: &[(NodeId, NodeId)],
    ) -> Result<(Self, LoadReport)> {
        let n = external_ids.len();
        let mut report = LoadReport {
            records: edges.len(),
            nodes: n,
            ..Default::default()
        };
        let mut pairs = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            for id in [a, b] {
                if id >= n {
                    return Err(LabError::NodeOutOfRange { id, count: n });
                }
            }
            if a == b {
                report.self_loops_dropped += 1;
            } else {
                pairs.push((a, b));
            }
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        report.duplicates_dropped = before - pairs.len();
        report.edges = pairs.len();

        let followees = Csr::build(n, &pairs);
        let reversed: Vec<_> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        let followers = Csr::build(n, &reversed);
        Ok((
            DirectedGraph {
                followees,
                followers,
                external_ids,
            },
            report,
        ))
    }

    /// Loads a `source,target` CSV edge list (source follows target).
    ///
    /// Dense ids are assigned in order of first appearance.
    pub fn load_edge_list(path: &Path) -> Result<(Self, LoadReport)> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => LabError::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
                ),
                _ => LabError::Csv(e),
            })?;

        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "source" || &headers[1] != "target" {
            return Err(LabError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header `source,target`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }

        let mut index: HashMap<String, NodeId> = HashMap::new();
        let mut ids: Vec<String> = Vec::new();
        let mut edges = Vec::new();
        let mut intern = |s: &str| -> NodeId {
            if let Some(&i) = index.get(s) {
                return i;
            }
            let i = ids.len();
            ids.push(s.to_string());
            index.insert(s.to_string(), i);
            i
        };

        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 2 || rec[0].is_empty() || rec[1].is_empty() {
                return Err(LabError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected two non-empty fields, got {:?}", rec.iter().collect::<Vec<_>>()),
                });
            }
            let a = intern(&rec[0]);
            let b = intern(&rec[1]);
            edges.push((a, b));
        }
        if edges.is_empty() {
            return Err(LabError::EmptyInput(path.to_path_buf()));
        }
        Self::from_edges_with_ids(ids, &edges)
    }

    /// Writes the canonical edge list (ascending by source, then target).
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "target"])?;
        for i in 0..self.node_count() {
            for &j in self.followees(i) {
                w.write_record([self.external_ids[i].as_str(), self.external_ids[j].as_str()])?;
            }
        }
        w.flush().map_err(|e| LabError::io(path, e))?;
        Ok(())
    }

    /// Writes `dense_id,external_id` pairs.
    pub fn write_id_map(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| LabError::io(path, e))?,
        );
        writeln!(f, "dense_id,external_id").map_err(|e| LabError::io(path, e))?;
        for (i, id) in self.external_ids.iter().enumerate() {
            writeln!(f, "{i},{id}").map_err(|e| LabError::io(path, e))?;
        }
        f.flush().map_err(|e| LabError::io(path, e))
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.external_ids.len()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.followees.targets.len()
    }

    #[inline]
    pub fn followees(&self, i: NodeId) -> &[NodeId] {
        self.followees.row(i)
    }

    #[inline]
    pub fn followers(&self, i: NodeId) -> &[NodeId] {
        self.followers.row(i)
    }

    /// `k_i`, the number of followees.
    #[inline]
    pub fn in_degree(&self, i: NodeId) -> usize {
        self.followees.offsets[i + 1] - self.followees.offsets[i]
    }

    #[inline]
    pub fn out_degree(&self, i: NodeId) -> usize {
        self.followers.offsets[i + 1] - self.followers.offsets[i]
    }

    pub fn mutual_degree(&self, i: NodeId) -> usize {
        sorted_intersection_len(self.followees(i), self.followers(i))
    }

    pub fn external_id(&self, i: NodeId) -> &str {
        &self.external_ids[i]
    }

    pub fn external_ids(&self) -> &[String] {
        &self.external_ids
    }

    /// Map from external id to dense id.
    pub fn id_index(&self) -> HashMap<&str, NodeId> {
        self.external_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.followees(from).binary_search(&to).is_ok()
    }

    pub fn degrees(&self) -> Vec<Degrees> {
        (0..self.node_count())
            .map(|i| Degrees {
                in_degree: self.in_degree(i),
                out_degree: self.out_degree(i),
                mutual_degree: self.mutual_degree(i),
            })
            .collect()
    }

    /// Adjacency in the requested direction, ascending by id.
    pub fn neighbors(&self, i: NodeId, direction: Direction) -> Result<Vec<NodeId>> {
        if i >= self.node_count() {
            return Err(LabError::NodeOutOfRange {
                id: i,
                count: self.node_count(),
            });
        }
        Ok(match direction {
            Direction::Followee => self.followees(i).to_vec(),
            Direction::Follower => self.followers(i).to_vec(),
            Direction::Mutual => sorted_intersection(self.followees(i), self.followers(i)),
        })
    }

    /// Iterator over all `(follower, followee)` edges in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.node_count()).flat_map(move |i| self.followees(i).iter().map(move |&j| (i, j)))
    }
}

fn sorted_intersection_len(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub(crate) fn sorted_intersection(a: &[NodeId], b: &[NodeId]) -> Vec<NodeId> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}
