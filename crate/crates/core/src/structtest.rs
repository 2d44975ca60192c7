//! Degree versus adoption-order rank correlation.
//!
//! Under simple contagion well-connected nodes are exposed early and adopt
//! first, so degree and adoption day are negatively rank-correlated. Complex
//! contagion weakens or reverses the pattern.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::adoption::AdoptionLog;
use crate::error::{LabError, Result};
use crate::graph::DirectedGraph;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DegreeKind {
    /// Followee count.
    #[default]
    In,
    /// Follower count.
    Out,
    Total,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderTestResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Average (fractional) ranks, 1-based. Ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with a two-sided p-value from the t approximation
/// `t = ρ √((n - 2) / (1 - ρ²))` on `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<OrderTestResult> {
    if x.len() != y.len() {
        return Err(LabError::invalid("samples differ in length"));
    }
    let n = x.len();
    if n < 3 {
        return Err(LabError::insufficient(format!("need at least 3 observations, got {n}")));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| LabError::Undefined("zero variance in ranks".into()))?;
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| LabError::Undefined(e.to_string()))?;
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(OrderTestResult { rho, p_value, n })
}

/// Correlates each adopter's degree with its adoption day.
pub fn degree_order_test(g: &DirectedGraph, log: &AdoptionLog, kind: DegreeKind) -> Result<OrderTestResult> {
    if log.len() < 3 {
        return Err(LabError::insufficient(format!("need at least 3 adopters, got {}", log.len())));
    }
    let mut deg = Vec::with_capacity(log.len());
    let mut day = Vec::with_capacity(log.len());
    for r in log.records() {
        if r.node >= g.node_count() {
            return Err(LabError::NodeOutOfRange { id: r.node, count: g.node_count() });
        }
        let d = match kind {
            DegreeKind::In => g.in_degree(r.node),
            DegreeKind::Out => g.out_degree(r.node),
            DegreeKind::Total => g.in_degree(r.node) + g.out_degree(r.node),
        };
        deg.push(d as f64);
        day.push(f64::from(r.day));
    }
    if deg.iter().all(|&d| d == deg[0]) {
        return Err(LabError::Undefined("all adopters have the same degree".into()));
    }
    spearman(&deg, &day)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adoption::Adoption;
    use proptest::prelude::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn perfect_anti_order() {
        // node i follows nodes 0..i, so in-degree grows with id; adopt in reverse
        let n = 12;
        let edges: Vec<_> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
        let (g, _) = DirectedGraph::from_edges(n, &edges).unwrap();
        let recs = (0..n).map(|i| Adoption { node: i, day: (n - i) as u32 }).collect();
        let log = AdoptionLog::new(recs, 0, 20).unwrap();
        let res = degree_order_test(&g, &log, DegreeKind::In).unwrap();
        assert!((res.rho + 1.0).abs() < 1e-12);
        assert_eq!(res.p_value, 0.0);
    }

    #[test]
    fn known_value_against_hand_computation() {
        // x ranks 1..5, y ranks (2,1,4,3,5): d² = 1+1+1+1+0 = 4, ρ = 1 - 6·4/(5·24) = 0.8
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r.rho - 0.8).abs() < 1e-12);
        // t = 0.8·sqrt(3/0.36) = 2.3094; two-sided p on 3 df ≈ 0.1040
        assert!((r.p_value - 0.1040).abs() < 5e-4, "p {}", r.p_value);
    }

    #[test]
    fn errors() {
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(LabError::Undefined(_))));
    }

    proptest! {
        #[test]
        fn invariant_to_monotone_transform(xs in proptest::collection::vec(0u32..50, 5..40), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = xs.iter().map(|&v| f64::from(v)).collect();
            let y: Vec<f64> = x.iter().map(|_| rng.random_range(0..30) as f64).collect();
            let tx: Vec<f64> = x.iter().map(|v| (v + 1.0).ln() * 3.0 + 7.0).collect();
            if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&tx, &y)) {
                prop_assert!((a.rho - b.rho).abs() < 1e-12);
            }
        }

        #[test]
        fn reversal_negates(xs in proptest::collection::vec(0u32..1000, 5..40), ys in proptest::collection::vec(0u32..1000, 40)) {
            let x: Vec<f64> = xs.iter().map(|&v| f64::from(v)).collect();
            let y: Vec<f64> = ys[..x.len()].iter().map(|&v| f64::from(v)).collect();
            let ry: Vec<f64> = y.iter().map(|v| -v).collect();
            if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&x, &ry)) {
                prop_assert!((a.rho + b.rho).abs() < 1e-12);
            }
        }
    }
}
