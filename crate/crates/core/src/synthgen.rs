//! Synthetic worlds: heavy-tailed follower graphs, homophilous adoption
//! without contagion, and single-mechanism cascades.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adoption::{Adoption, AdoptionLog};
use crate::calibrate::MechanismParams;
use crate::cascade::{run_realization, CascadeConfig, Mechanism, MechanismSet, Realization};
use crate::error::{LabError, Result};
use crate::graph::{DirectedGraph, NodeId};
use crate::rng::{self, Domain};
use crate::shocks::Day;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_nodes: usize,
    /// Power-law exponent of the degree distributions.
    pub exponent: f64,
    /// Followees per node on average.
    pub mean_degree: f64,
    /// Probability that a followee is drawn from the ego's own trait group.
    pub homophily: f64,
    /// Probability that a node carries trait 1.
    pub trait_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_nodes: 1000,
            exponent: 2.5,
            mean_degree: 10.0,
            homophily: 0.0,
            trait_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(LabError::invalid("need at least two nodes"));
        }
        if !(self.exponent > 1.0) {
            return Err(LabError::invalid("degree exponent must exceed 1"));
        }
        if !(0.0..=1.0).contains(&self.homophily) || !(0.0..=1.0).contains(&self.trait_fraction) {
            return Err(LabError::invalid("homophily and trait fraction must lie in [0, 1]"));
        }
        if !(self.mean_degree >= 0.0) || self.mean_degree > (self.n_nodes - 1) as f64 * 0.5 {
            return Err(LabError::invalid(format!(
                "mean degree {} is infeasible for {} nodes",
                self.mean_degree, self.n_nodes
            )));
        }
        Ok(())
    }
}

/// Binary latent trait per node.
pub fn gen_traits(cfg: &SynthConfig) -> Vec<u8> {
    let mut rng = rng::stream(cfg.seed, Domain::Trait, 0);
    (0..cfg.n_nodes).map(|_| u8::from(rng.random::<f64>() < cfg.trait_fraction)).collect()
}

/// Rank-based power-law weights `rank^(-1/(exponent-1))`, randomly assigned to nodes.
fn power_weights<R: Rng>(n: usize, exponent: f64, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-1.0 / (exponent - 1.0))).collect();
    w.shuffle(rng);
    w
}

/// Directed Chung–Lu style graph: each edge draws its follower by activity
/// weight and its followee by popularity weight (within the follower's trait
/// group with probability `homophily`), rejecting self-loops and duplicates.
///
/// Returns the graph and the node traits.
pub fn gen_graph(cfg: &SynthConfig) -> Result<(DirectedGraph, Vec<u8>)> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let traits = gen_traits(cfg);
    let mut rng = rng::stream(cfg.seed, Domain::Graph, 0);
    let activity = power_weights(n, cfg.exponent, &mut rng);
    let popularity = power_weights(n, cfg.exponent, &mut rng);
    let sampler = |members: &[NodeId]| -> Option<WeightedIndex<f64>> {
        WeightedIndex::new(members.iter().map(|&i| popularity[i])).ok()
    };
    let all: Vec<NodeId> = (0..n).collect();
    let groups: [Vec<NodeId>; 2] = [0u8, 1].map(|t| (0..n).filter(|&i| traits[i] == t).collect());
    let pick_all = sampler(&all).expect("positive weights");
    let pick_group = [sampler(&groups[0]), sampler(&groups[1])];
    let pick_follower = WeightedIndex::new(&activity).expect("positive weights");

    let target = (n as f64 * cfg.mean_degree).round() as usize;
    let mut edges = std::collections::HashSet::with_capacity(target);
    let mut list = Vec::with_capacity(target);
    let max_attempts = 50 * target + 1000;
    let mut attempts = 0;
    while list.len() < target {
        attempts += 1;
        if attempts > max_attempts {
            return Err(LabError::invalid(format!(
                "could not place {target} distinct edges on {n} nodes; lower the mean degree"
            )));
        }
        let u = pick_follower.sample(&mut rng);
        let own = usize::from(traits[u]);
        let v = match &pick_group[own] {
            Some(p) if rng.random::<f64>() < cfg.homophily => groups[own][p.sample(&mut rng)],
            _ => all[pick_all.sample(&mut rng)],
        };
        if u != v && edges.insert((u, v)) {
            list.push((u, v));
        }
    }
    let (g, _) = DirectedGraph::from_edges(n, &list)?;
    Ok((g, traits))
}

/// Each node adopts independently with the daily rate of its trait until it
/// adopts or the horizon ends. No peer influence is involved.
pub fn gen_homophily_adoptions(traits: &[u8], rates: &[f64], horizon_days: Day, seed: u64) -> Result<AdoptionLog> {
    if horizon_days == 0 {
        return Err(LabError::invalid("horizon must be at least one day"));
    }
    if let Some(&t) = traits.iter().find(|&&t| usize::from(t) >= rates.len()) {
        return Err(LabError::invalid(format!("no adoption rate for trait {t}")));
    }
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(LabError::invalid("adoption rates must lie in [0, 1]"));
    }
    let mut recs = Vec::new();
    for (i, &t) in traits.iter().enumerate() {
        let p = rates[usize::from(t)];
        if p == 0.0 {
            continue;
        }
        let mut rng = rng::stream(seed, Domain::Homophily, i as u64);
        if let Some(day) = (0..horizon_days).find(|_| rng.random::<f64>() < p) {
            recs.push(Adoption { node: i, day });
        }
    }
    AdoptionLog::new(recs, 0, horizon_days - 1)
}

/// Outcome of a single-mechanism cascade.
#[derive(Clone, Debug)]
pub struct PureCascade {
    pub log: AdoptionLog,
    pub realization: Realization,
}

/// Runs one realization with only `mechanism` enabled. Seeds (if any) adopt
/// on day 0 and are flagged `seeded` in the events; every other adoption
/// carries the named label.
pub fn gen_pure_cascade(
    g: &DirectedGraph,
    mechanism: Mechanism,
    params: &MechanismParams,
    cfg: &CascadeConfig,
    seed: u64,
) -> Result<PureCascade> {
    let cfg = CascadeConfig {
        enabled: MechanismSet::only(mechanism),
        ..cfg.clone()
    };
    let realization = run_realization(g, params, &cfg, seed, 0)?;
    let recs = realization.events.iter().map(|e| Adoption { node: e.node, day: e.day }).collect();
    let last = realization.stop_day;
    let log = AdoptionLog::new(recs, 0, last)?;
    Ok(PureCascade { log, realization })
}
