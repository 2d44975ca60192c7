//! Histogram-based second-order regression trees.

use serde::{Deserialize, Serialize};

/// Per-feature cut points; bin `b` holds values in `(cuts[b-1], cuts[b]]`.
#[derive(Clone, Debug)]
pub(crate) struct Binner {
    cuts: Vec<Vec<f64>>,
}

impl Binner {
    /// Unique values when there are at most `max_bins`, otherwise quantiles
    /// of the sorted column (always including the maximum).
    pub(crate) fn fit(rows: &[[f64; super::NF]], max_bins: usize) -> Self {
        let cuts = (0..super::NF)
            .map(|f| {
                let mut col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
                col.sort_by(|a, b| a.total_cmp(b));
                let mut uniq = col.clone();
                uniq.dedup();
                if uniq.len() <= max_bins {
                    return uniq;
                }
                let mut cuts: Vec<f64> = (1..=max_bins)
                    .map(|q| col[(q * col.len() / max_bins).min(col.len()) - 1])
                    .collect();
                cuts.dedup();
                cuts
            })
            .collect();
        Binner { cuts }
    }

    #[inline]
    pub(crate) fn bin(&self, f: usize, v: f64) -> u16 {
        let c = &self.cuts[f];
        c.partition_point(|&cut| cut < v).min(c.len().saturating_sub(1)) as u16
    }

    pub(crate) fn n_bins(&self, f: usize) -> usize {
        self.cuts[f].len()
    }

    pub(crate) fn cut(&self, f: usize, b: usize) -> f64 {
        self.cuts[f][b]
    }

    /// Column-major bin matrix.
    pub(crate) fn transform(&self, rows: &[[f64; super::NF]]) -> Vec<Vec<u16>> {
        (0..super::NF)
            .map(|f| rows.iter().map(|r| self.bin(f, r[f])).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        /// Loss reduction achieved by this split.
        gain: f64,
        cover: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        weight: f64,
    },
}

impl TreeNode {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn visit_splits(&self, f: &mut impl FnMut(usize, f64)) {
        if let TreeNode::Split { feature, gain, left, right, .. } = self {
            f(*feature, *gain);
            left.visit_splits(f);
            right.visit_splits(f);
        }
    }

    pub fn n_splits(&self) -> usize {
        let mut n = 0;
        self.visit_splits(&mut |_, _| n += 1);
        n
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub learning_rate: f64,
}

struct BestSplit {
    feature: usize,
    bin: usize,
    gain: f64,
}

/// Grows one tree on gradients `g` and hessians `h` over the given rows.
pub(crate) fn grow(
    binner: &Binner,
    bins: &[Vec<u16>],
    g: &[f64],
    h: &[f64],
    rows: Vec<u32>,
    p: &TreeParams,
) -> TreeNode {
    grow_node(binner, bins, g, h, rows, 0, p)
}

fn leaf_weight(gs: f64, hs: f64, p: &TreeParams) -> f64 {
    -gs / (hs + p.lambda) * p.learning_rate
}

fn score(gs: f64, hs: f64, lambda: f64) -> f64 {
    gs * gs / (hs + lambda)
}

fn grow_node(
    binner: &Binner,
    bins: &[Vec<u16>],
    g: &[f64],
    h: &[f64],
    rows: Vec<u32>,
    depth: usize,
    p: &TreeParams,
) -> TreeNode {
    let (mut gs, mut hs) = (0.0, 0.0);
    for &r in &rows {
        gs += g[r as usize];
        hs += h[r as usize];
    }
    if depth >= p.max_depth || rows.len() < 2 || hs < 2.0 * p.min_child_weight {
        return TreeNode::Leaf { weight: leaf_weight(gs, hs, p) };
    }

    let parent = score(gs, hs, p.lambda);
    let mut best: Option<BestSplit> = None;
    let mut hist_g = Vec::new();
    let mut hist_h = Vec::new();
    for (f, col) in bins.iter().enumerate() {
        let nb = binner.n_bins(f);
        if nb < 2 {
            continue;
        }
        hist_g.clear();
        hist_g.resize(nb, 0.0);
        hist_h.clear();
        hist_h.resize(nb, 0.0);
        for &r in &rows {
            let b = col[r as usize] as usize;
            hist_g[b] += g[r as usize];
            hist_h[b] += h[r as usize];
        }
        let (mut gl, mut hl) = (0.0, 0.0);
        for b in 0..nb - 1 {
            gl += hist_g[b];
            hl += hist_h[b];
            let (gr, hr) = (gs - gl, hs - hl);
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl, p.lambda) + score(gr, hr, p.lambda) - parent);
            // strict comparison keeps the lowest feature index, then the lowest threshold
            if gain > 0.0 && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                best = Some(BestSplit { feature: f, bin: b, gain });
            }
        }
    }

    let Some(best) = best else {
        return TreeNode::Leaf { weight: leaf_weight(gs, hs, p) };
    };
    let col = &bins[best.feature];
    let (left, right): (Vec<u32>, Vec<u32>) = rows.into_iter().partition(|&r| col[r as usize] as usize <= best.bin);
    TreeNode::Split {
        feature: best.feature,
        threshold: binner.cut(best.feature, best.bin),
        gain: best.gain,
        cover: hs,
        left: Box::new(grow_node(binner, bins, g, h, left, depth + 1, p)),
        right: Box::new(grow_node(binner, bins, g, h, right, depth + 1, p)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: f64) -> [f64; super::super::NF] {
        [v, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    }

    #[test]
    fn bins_respect_thresholds() {
        let rows: Vec<_> = (0..1000).map(|i| row((i % 377) as f64 * 0.37)).collect();
        let b = Binner::fit(&rows, 32);
        assert!(b.n_bins(0) <= 32);
        for r in &rows {
            let bin = b.bin(0, r[0]) as usize;
            assert!(r[0] <= b.cut(0, bin));
            if bin > 0 {
                assert!(r[0] > b.cut(0, bin - 1));
            }
        }
    }

    #[test]
    fn stump_separates_two_groups() {
        let rows: Vec<_> = (0..20).map(|i| row(i as f64)).collect();
        let b = Binner::fit(&rows, 256);
        let bins = b.transform(&rows);
        let g: Vec<f64> = (0..20).map(|i| if i < 10 { -1.0 } else { 1.0 }).collect();
        let h = vec![1.0; 20];
        let p = TreeParams { max_depth: 1, min_child_weight: 1.0, lambda: 0.0, learning_rate: 1.0 };
        let t = grow(&b, &bins, &g, &h, (0..20).collect(), &p);
        match &t {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 9.0);
            }
            _ => panic!("expected a split"),
        }
        assert_eq!(t.predict(&row(3.0)), 1.0);
        assert_eq!(t.predict(&row(15.0)), -1.0);
    }
}
