//! Gradient boosting with squared-error loss over shallow regression trees.
//! Features are bucketed once into at most 256 quantile bins and each level of
//! a tree is grown from per-node gradient histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Defaults to `max(20, N / 1000)` when unset.
    pub min_leaf: Option<usize>,
    pub max_bins: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self { rounds: 200, learning_rate: 0.1, max_depth: 2, min_leaf: None, max_bins: 256 }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(2..=256).contains(&self.max_bins) {
            return Err(Error::invalid("max_bins must be between 2 and 256"));
        }
        if self.max_depth > 16 {
            return Err(Error::invalid("max_depth must be at most 16"));
        }
        if self.min_leaf == Some(0) {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        Ok(())
    }

    pub fn min_leaf_for(&self, n: usize) -> usize {
        self.min_leaf.unwrap_or_else(|| (n / 1000).max(20))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Split { feature, threshold, left, right } => {
                    k = if row[feature] <= threshold { left } else { right } as usize;
                }
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Fitted additive model `base + sum_t tree_t(x)`; leaf values already include the learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.n_features);
        self.base + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

/// Cut points splitting `values` into at most `max_bins` buckets of roughly
/// equal count, placed halfway between neighbouring distinct values.
pub(crate) fn quantile_cuts(values: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut uniq = sorted.clone();
    uniq.dedup();
    if uniq.len() <= 1 {
        return Vec::new();
    }
    let mid = |u: usize| uniq[u - 1] + (uniq[u] - uniq[u - 1]) / 2.0;
    if uniq.len() <= max_bins {
        return (1..uniq.len()).map(mid).collect();
    }
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..max_bins)
        .filter_map(|k| {
            let v = sorted[k * n / max_bins];
            let u = uniq.partition_point(|&q| q < v);
            (u > 0).then(|| mid(u))
        })
        .collect();
    cuts.dedup();
    cuts
}

#[inline]
fn bin_of(cuts: &[f64], v: f64) -> u8 {
    cuts.partition_point(|&c| c < v) as u8
}

const NO_SLOT: u32 = u32::MAX;

/// Fits on column-major `features` (one `Vec` per feature) against `y`.
pub fn fit_gbdt(features: &[Vec<f64>], y: &[f64], params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    let n = y.len();
    let nf = features.len();
    if n == 0 || nf == 0 || features.iter().any(|f| f.len() != n) {
        return Err(Error::invalid("feature columns and target must be non-empty and of equal length"));
    }
    let min_leaf = params.min_leaf_for(n);
    let cuts: Vec<Vec<f64>> = features.iter().map(|f| quantile_cuts(f, params.max_bins)).collect();
    let bins: Vec<Vec<u8>> =
        features.iter().zip(&cuts).map(|(f, c)| f.iter().map(|&v| bin_of(c, v)).collect()).collect();
    const NB: usize = 256;

    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut resid = vec![0.0; n];
    let mut node_of = vec![0u32; n];
    let mut trees = Vec::with_capacity(params.rounds);

    for _ in 0..params.rounds {
        for ((r, &yi), &p) in resid.iter_mut().zip(y).zip(&pred) {
            *r = yi - p;
        }
        node_of.fill(0);
        // Nodes are created as leaves (value filled in at the end) and
        // turned into splits level by level.
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut frontier = vec![0usize];
        for _depth in 0..params.max_depth {
            if frontier.is_empty() {
                break;
            }
            let mut slot_of = vec![NO_SLOT; nodes.len()];
            for (s, &k) in frontier.iter().enumerate() {
                slot_of[k] = s as u32;
            }
            let mut hist = vec![(0.0_f64, 0_u32); frontier.len() * nf * NB];
            for (f, fb) in bins.iter().enumerate() {
                for i in 0..n {
                    let s = slot_of[node_of[i] as usize];
                    if s != NO_SLOT {
                        let h = &mut hist[(s as usize * nf + f) * NB + fb[i] as usize];
                        h.0 += resid[i];
                        h.1 += 1;
                    }
                }
            }
            let mut next = Vec::new();
            let mut split_of = vec![None; frontier.len()];
            for (s, &k) in frontier.iter().enumerate() {
                let Some((feature, bin)) = best_split(&hist[s * nf * NB..(s + 1) * nf * NB], nf, min_leaf) else {
                    continue;
                };
                let left = nodes.len() as u32;
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[k] = Node::Split { feature, threshold: cuts[feature][bin], left, right: left + 1 };
                split_of[s] = Some((feature, bin as u8, left));
                next.extend([left as usize, left as usize + 1]);
            }
            for i in 0..n {
                let s = slot_of[node_of[i] as usize];
                if s == NO_SLOT {
                    continue;
                }
                if let Some((feature, bin, left)) = split_of[s as usize] {
                    node_of[i] = if bins[feature][i] <= bin { left } else { left + 1 };
                }
            }
            frontier = next;
        }

        let mut sums = vec![(0.0_f64, 0_u32); nodes.len()];
        for (&k, &r) in node_of.iter().zip(&resid) {
            sums[k as usize].0 += r;
            sums[k as usize].1 += 1;
        }
        for (node, &(s, c)) in nodes.iter_mut().zip(&sums) {
            if let Node::Leaf { value } = node {
                *value = if c > 0 { params.learning_rate * s / c as f64 } else { 0.0 };
            }
        }
        for (p, &k) in pred.iter_mut().zip(&node_of) {
            if let Node::Leaf { value } = nodes[k as usize] {
                *p += value;
            }
        }
        trees.push(Tree { nodes });
    }
    Ok(GbdtModel { base, n_features: nf, trees })
}

/// Best `(feature, bin)` split of one node by squared-error reduction; the
/// left child takes bins `<= bin`.
fn best_split(hist: &[(f64, u32)], nf: usize, min_leaf: usize) -> Option<(usize, usize)> {
    const NB: usize = 256;
    let (total_s, total_c) = hist[..NB].iter().fold((0.0, 0u32), |(s, c), &(hs, hc)| (s + hs, c + hc));
    let total_c = total_c as usize;
    if total_c < 2 * min_leaf {
        return None;
    }
    let parent = total_s * total_s / total_c as f64;
    let mut best = None;
    let mut best_gain = 0.0;
    for f in 0..nf {
        let h = &hist[f * NB..(f + 1) * NB];
        let (mut sl, mut cl) = (0.0, 0usize);
        for (b, &(hs, hc)) in h.iter().enumerate().take(NB - 1) {
            sl += hs;
            cl += hc as usize;
            let cr = total_c - cl;
            if cl < min_leaf || hc == 0 {
                continue;
            }
            if cr < min_leaf {
                break;
            }
            let sr = total_s - sl;
            let gain = sl * sl / cl as f64 + sr * sr / cr as f64 - parent;
            if gain > best_gain {
                best_gain = gain;
                best = Some((f, b));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuts_on_few_distinct_values() {
        assert_eq!(quantile_cuts(&[1.0, 3.0, 3.0, 2.0], 256), vec![1.5, 2.5]);
        assert!(quantile_cuts(&[4.0; 10], 256).is_empty());
        let many: Vec<f64> = (0..10_000).map(|k| k as f64).collect();
        let cuts = quantile_cuts(&many, 256);
        assert!(cuts.len() <= 255 && cuts.len() > 200);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn step_function_is_recovered() {
        let x: Vec<f64> = (0..2000).map(|k| (k % 200) as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 0.3 { 1.0 } else { 0.0 }).collect();
        let params = GbdtParams { rounds: 100, learning_rate: 0.3, ..Default::default() };
        let model = fit_gbdt(&[x], &y, &params).unwrap();
        assert!((model.predict(&[0.1]) - 1.0).abs() < 1e-6);
        assert!(model.predict(&[0.8]).abs() < 1e-6);
    }

    #[test]
    fn constant_target_gives_constant_model() {
        let x: Vec<f64> = (0..500).map(|k| (k * 7 % 500) as f64).collect();
        let model = fit_gbdt(&[x], &vec![1.0; 500], &GbdtParams::default()).unwrap();
        for v in [0.0, 123.0, 499.0] {
            assert_eq!(model.predict(&[v]), 1.0);
        }
    }

    #[test]
    fn depth_two_captures_an_interaction() {
        let mut cols = [Vec::new(), Vec::new()];
        let mut y = Vec::new();
        for a in 0..40 {
            for b in 0..40 {
                let (u, v) = (a as f64 / 40.0, b as f64 / 40.0);
                cols[0].push(u);
                cols[1].push(v);
                y.push(if u < 0.5 && v < 0.5 { 1.0 } else { 0.0 });
            }
        }
        let model = fit_gbdt(&cols, &y, &GbdtParams { rounds: 300, learning_rate: 0.5, ..Default::default() }).unwrap();
        assert!(model.trees.iter().all(|t| t.leaves() <= 4));
        assert!((model.predict(&[0.1, 0.1]) - 1.0).abs() < 0.05);
        assert!(model.predict(&[0.1, 0.9]).abs() < 0.05);
        assert!(model.predict(&[0.9, 0.1]).abs() < 0.05);
    }

    #[test]
    fn min_leaf_blocks_small_splits() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = (0..30).map(|k| if k == 0 { 10.0 } else { 0.0 }).collect();
        let model = fit_gbdt(&[x], &y, &GbdtParams { rounds: 5, ..Default::default() }).unwrap();
        // 30 rows cannot be split into two leaves of at least 20.
        assert!(model.trees.iter().all(|t| t.leaves() == 1));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_gbdt(&[], &[], &GbdtParams::default()).is_err());
        assert!(fit_gbdt(&[vec![1.0]], &[1.0, 2.0], &GbdtParams::default()).is_err());
        let bad = GbdtParams { learning_rate: 0.0, ..Default::default() };
        assert!(fit_gbdt(&[vec![1.0]], &[1.0], &bad).is_err());
    }
}
