//! Beam-search retrieval over the label tree.
//!
//! The relevance of a node is the product of `activation(w . x)` over the node
//! and all of its ancestors below the root. Scores are accumulated as sums of
//! logs and exponentiated only when a prediction is returned.
//!
//! For fast scoring the weights of the children of each parent are stored
//! together as a feature-major block, so scoring all children of one parent
//! costs one sorted-list intersection with the query.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexer::ClusterChain;
use crate::par::Executor;
use crate::sparse::{CscMatrix, SparseVector, SparseView};
use crate::train::LayeredWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    /// `1 - min(1, max(0, 1 - v))^3`.
    #[default]
    L3Hinge,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::L3Hinge => {
                let c = (1.0 - v).clamp(0.0, 1.0);
                1.0 - c * c * c
            }
        }
    }

    /// `ln(apply(v))`, computed without forming tiny intermediate values.
    pub fn ln_apply(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if v >= 0.0 {
                    -(-v).exp().ln_1p()
                } else {
                    v - v.exp().ln_1p()
                }
            }
            Activation::L3Hinge => {
                let c = (1.0 - v).clamp(0.0, 1.0);
                (-(c * c * c)).ln_1p()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::L3Hinge => "l3-hinge",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "l3-hinge" => Ok(Activation::L3Hinge),
            other => Err(Error::InvalidInput(format!(
                "unknown activation {other:?} (expected sigmoid or l3-hinge)"
            ))),
        }
    }
}

/// Top-k labels with scores, best first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u32>,
    pub scores: Vec<f64>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.labels.iter().copied().zip(self.scores.iter().copied())
    }

    /// Keeps the `k` best entries, ordered by descending score and ascending
    /// id on ties.
    pub fn from_candidates(mut candidates: Vec<(u32, f64)>, k: usize) -> Self {
        select_top(&mut candidates, k);
        let (labels, scores) = candidates.into_iter().unzip();
        Self { labels, scores }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Number of `w . x` evaluations performed.
    pub margin_evals: usize,
}

fn rank(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Truncates to the best `k` by (score desc, id asc), sorted.
fn select_top(items: &mut Vec<(u32, f64)>, k: usize) {
    if items.len() > k {
        if k == 0 {
            items.clear();
            return;
        }
        items.select_nth_unstable_by(k - 1, rank);
        items.truncate(k);
    }
    items.sort_unstable_by(rank);
}

/// Weights of the children of one parent, stored feature-major.
#[derive(Clone, Debug, Default, PartialEq)]
struct Block {
    features: Vec<u32>,
    ptr: Vec<u32>,
    child: Vec<u32>,
    values: Vec<f64>,
}

impl Block {
    fn build(w: &CscMatrix, children: &[u32]) -> Self {
        let mut entries: Vec<(u32, u32, f64)> = Vec::new();
        for (pos, &c) in children.iter().enumerate() {
            entries.extend(w.column(c as usize).iter().map(|(f, v)| (f, pos as u32, v)));
        }
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut block = Block {
            ptr: vec![0],
            ..Default::default()
        };
        for (f, pos, v) in entries {
            if block.features.last() != Some(&f) {
                if !block.features.is_empty() {
                    block.ptr.push(block.child.len() as u32);
                }
                block.features.push(f);
            }
            block.child.push(pos);
            block.values.push(v);
        }
        if !block.features.is_empty() {
            block.ptr.push(block.child.len() as u32);
        }
        block
    }

    fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Adds `w_c . x` for every child position `c` into `out`.
    fn accumulate(&self, x: SparseView<'_>, out: &mut [f64]) {
        let feats = &self.features;
        if feats.is_empty() || x.is_empty() {
            return;
        }
        let mut add = |slot: usize, xv: f64| {
            let (lo, hi) = (self.ptr[slot] as usize, self.ptr[slot + 1] as usize);
            for e in lo..hi {
                out[self.child[e] as usize] += xv * self.values[e];
            }
        };
        if x.nnz() <= feats.len() {
            let mut start = 0;
            for (f, xv) in x.iter() {
                start += feats[start..].partition_point(|&g| g < f);
                if start == feats.len() {
                    break;
                }
                if feats[start] == f {
                    add(start, xv);
                }
            }
        } else {
            let mut start = 0;
            for (slot, &f) in feats.iter().enumerate() {
                start += x.indices[start..].partition_point(|&g| g < f);
                if start == x.nnz() {
                    break;
                }
                if x.indices[start] == f {
                    add(slot, x.values[start]);
                }
            }
        }
    }
}

/// A trained tree model ready for retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    chain: ClusterChain,
    dim: usize,
    /// `blocks[t - 1][k]` holds the weights of the children of node `k` of
    /// layer `t - 1`.
    blocks: Vec<Vec<Block>>,
    activation: Activation,
    default_beam: usize,
}

impl Model {
    pub fn new(
        weights: &LayeredWeights,
        chain: ClusterChain,
        activation: Activation,
        default_beam: usize,
    ) -> Result<Self> {
        weights.check_against(&chain)?;
        if default_beam == 0 {
            return Err(Error::InvalidInput("default beam width must be >= 1".into()));
        }
        let blocks = chain
            .layers()
            .iter()
            .zip(weights.layers())
            .map(|(layer, w)| {
                (0..layer.n_parents())
                    .map(|k| Block::build(w, layer.children(k)))
                    .collect()
            })
            .collect();
        Ok(Self {
            dim: weights.dim(),
            chain,
            blocks,
            activation,
            default_beam,
        })
    }

    pub fn chain(&self) -> &ClusterChain {
        &self.chain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.chain.depth()
    }

    pub fn n_labels(&self) -> usize {
        self.chain.n_labels()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Switches the score transform; weights are unaffected.
    pub fn set_activation(&mut self, activation: Activation) {
        self.activation = activation;
    }

    pub fn default_beam(&self) -> usize {
        self.default_beam
    }

    pub fn nnz(&self) -> usize {
        self.blocks.iter().flatten().map(Block::nnz).sum()
    }

    /// Largest layer width; a beam at least this wide never discards a node.
    pub fn max_width(&self) -> usize {
        self.chain.widths().into_iter().max().unwrap_or(1)
    }

    /// Rebuilds the per-layer column-major weight matrices.
    pub fn weights(&self) -> LayeredWeights {
        let layers = self
            .chain
            .layers()
            .iter()
            .zip(&self.blocks)
            .map(|(layer, blocks)| {
                let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); layer.width()];
                for (k, block) in blocks.iter().enumerate() {
                    let children = layer.children(k);
                    for (slot, &f) in block.features.iter().enumerate() {
                        for e in block.ptr[slot] as usize..block.ptr[slot + 1] as usize {
                            cols[children[block.child[e] as usize] as usize].push((f, block.values[e]));
                        }
                    }
                }
                let cols = cols
                    .into_iter()
                    .map(|c| {
                        let (i, v) = c.into_iter().unzip();
                        SparseVector::new(self.dim, i, v).expect("block entries are sorted and nonzero")
                    })
                    .collect();
                CscMatrix::from_columns(self.dim, cols).expect("columns share the dimension")
            })
            .collect();
        LayeredWeights::new(layers).expect("at least one layer")
    }

    fn check_query(&self, x: &SparseVector) {
        assert!(
            x.dim() <= self.dim,
            "query dimension {} exceeds model dimension {}",
            x.dim(),
            self.dim
        );
    }

    /// Log-scores of the children of `parent` (layer `t - 1`) as
    /// `(child id, parent_log + ln activation(margin))`.
    fn expand(&self, t: usize, parent: u32, parent_log: f64, x: SparseView<'_>, margins: &mut Vec<f64>, out: &mut Vec<(u32, f64)>) {
        let children = self.chain.layer(t).children(parent as usize);
        margins.clear();
        margins.resize(children.len(), 0.0);
        self.blocks[t - 1][parent as usize].accumulate(x, margins);
        out.extend(
            children
                .iter()
                .zip(margins.iter())
                .map(|(&c, &m)| (c, parent_log + self.activation.ln_apply(m))),
        );
    }

    pub fn beam_search(&self, x: &SparseVector, beam: usize, k: usize) -> Prediction {
        self.beam_search_with_stats(x, beam, k).0
    }

    /// Level-by-level search keeping the `beam` best nodes per layer (ties go
    /// to the lower node id), returning the `k` best labels.
    pub fn beam_search_with_stats(&self, x: &SparseVector, beam: usize, k: usize) -> (Prediction, SearchStats) {
        assert!(beam >= 1 && k >= 1, "beam width and k must be >= 1");
        self.check_query(x);
        let xv = x.view();
        let mut stats = SearchStats::default();
        let mut frontier: Vec<(u32, f64)> = vec![(0, 0.0)];
        let mut next: Vec<(u32, f64)> = Vec::new();
        let mut margins = Vec::new();
        let depth = self.depth();
        for t in 1..=depth {
            next.clear();
            for &(node, log) in &frontier {
                self.expand(t, node, log, xv, &mut margins, &mut next);
            }
            stats.margin_evals += next.len();
            select_top(&mut next, if t == depth { k } else { beam });
            std::mem::swap(&mut frontier, &mut next);
        }
        let (labels, scores) = frontier.into_iter().map(|(l, s)| (l, s.exp())).unzip();
        (Prediction { labels, scores }, stats)
    }

    /// Scores every node of every layer and returns the exact top-k labels.
    pub fn exact_predict(&self, x: &SparseVector, k: usize) -> Prediction {
        self.check_query(x);
        let xv = x.view();
        let mut margins = Vec::new();
        let mut layer_logs: Vec<f64> = vec![0.0];
        let mut scored: Vec<(u32, f64)> = Vec::new();
        for t in 1..=self.depth() {
            let layer = self.chain.layer(t);
            scored.clear();
            for (parent, &log) in layer_logs.iter().enumerate() {
                self.expand(t, parent as u32, log, xv, &mut margins, &mut scored);
            }
            let mut logs = vec![f64::NEG_INFINITY; layer.width()];
            for &(node, log) in &scored {
                logs[node as usize] = log;
            }
            layer_logs = logs;
        }
        let candidates = layer_logs.iter().enumerate().map(|(l, &s)| (l as u32, s)).collect();
        let mut top = Prediction::from_candidates(candidates, k);
        top.scores.iter_mut().for_each(|s| *s = s.exp());
        top
    }

    /// Beam search over many queries, parallel over queries.
    pub fn batch_predict(&self, queries: &[SparseVector], beam: usize, k: usize, executor: &Executor) -> Vec<Prediction> {
        executor.map(queries.len(), |i| self.beam_search(&queries[i], beam, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(dim: usize, entries: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_pairs(dim, entries.to_vec())
    }

    /// Root -> 2 clusters -> 4 labels; labels {0,1} under cluster 0.
    fn toy(activation: Activation) -> Model {
        let chain = ClusterChain::from_parents(vec![vec![0, 0], vec![0, 0, 1, 1]]).unwrap();
        let w1 = CscMatrix::from_columns(2, vec![col(2, &[(0, 2.0)]), col(2, &[(1, 1.0)])]).unwrap();
        let w2 = CscMatrix::from_columns(
            2,
            vec![
                col(2, &[(0, 0.5)]),
                col(2, &[(0, -1.0), (1, 1.0)]),
                col(2, &[(0, 3.0), (1, 1.0)]),
                col(2, &[]),
            ],
        )
        .unwrap();
        let w = LayeredWeights::new(vec![w1, w2]).unwrap();
        Model::new(&w, chain, activation, 1).unwrap()
    }

    fn sig(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    #[test]
    fn activation_examples() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::L3Hinge.apply(1.0), 1.0);
        assert_eq!(Activation::L3Hinge.apply(7.0), 1.0);
        assert_eq!(Activation::L3Hinge.apply(0.0), 0.0);
        assert_eq!(Activation::L3Hinge.apply(-3.0), 0.0);
        assert!((Activation::L3Hinge.apply(0.5) - 0.875).abs() < 1e-15);
        for a in [Activation::Sigmoid, Activation::L3Hinge] {
            let grid: Vec<f64> = (0..1000).map(|i| -10.0 + 20.0 * i as f64 / 999.0).collect();
            for w in grid.windows(2) {
                assert!(a.apply(w[0]) <= a.apply(w[1]));
            }
            for &v in &grid {
                let direct = a.apply(v).ln();
                let stable = a.ln_apply(v);
                assert!(direct == stable || (direct - stable).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn beam_one_follows_the_best_cluster() {
        let model = toy(Activation::Sigmoid);
        let x = SparseVector::new(2, vec![0, 1], vec![0.6, 0.8]).unwrap();
        // cluster margins: 1.2 and 0.8 -> cluster 0 wins with b = 1
        let (pred, stats) = model.beam_search_with_stats(&x, 1, 10);
        assert_eq!(pred.labels, vec![0, 1]);
        let l0 = sig(1.2) * sig(0.3);
        let l1 = sig(1.2) * sig(-0.6 + 0.8);
        assert!((pred.scores[0] - l0).abs() < 1e-12);
        assert!((pred.scores[1] - l1).abs() < 1e-12);
        assert_eq!(stats.margin_evals, 2 + 2);

        // every label reachable with a wide beam
        let wide = model.beam_search(&x, 2, 10);
        assert_eq!(wide.len(), 4);
        assert_eq!(wide.labels[0], 2);
        assert!((wide.scores[0] - sig(0.8) * sig(1.8 + 0.8)).abs() < 1e-12);
        assert_eq!(wide, model.exact_predict(&x, 10));
    }

    #[test]
    fn zero_columns_score_activation_of_zero() {
        let model = toy(Activation::Sigmoid);
        let x = SparseVector::new(2, vec![1], vec![1.0]).unwrap();
        let pred = model.exact_predict(&x, 4);
        let pos = pred.labels.iter().position(|&l| l == 3).unwrap();
        assert!((pred.scores[pos] - sig(1.0) * 0.5).abs() < 1e-12);
    }

    #[test]
    fn l3_hinge_zero_scores_tie_break_by_id() {
        let model = toy(Activation::L3Hinge);
        let x = SparseVector::new(2, vec![0], vec![-1.0]).unwrap();
        let pred = model.beam_search(&x, 2, 4);
        assert_eq!(pred.labels, vec![0, 1, 2, 3]);
        assert!(pred.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn weights_round_trip_through_blocks() {
        let model = toy(Activation::Sigmoid);
        let rebuilt = Model::new(&model.weights(), model.chain().clone(), Activation::Sigmoid, 1).unwrap();
        assert_eq!(rebuilt, model);
        assert_eq!(model.nnz(), 2 + 5);
    }

    #[test]
    fn empty_query_and_short_results() {
        let model = toy(Activation::Sigmoid);
        let pred = model.beam_search(&SparseVector::empty(2), 1, 100);
        assert_eq!(pred.len(), 2);
        assert!(pred.scores.iter().all(|&s| (s - 0.25).abs() < 1e-12));
    }
}
