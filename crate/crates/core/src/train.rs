//! Layer-by-layer one-vs-rest training of the tree's weight matrices.
//!
//! For every layer `t` the label matrix is coarsened to `Y(t)` by pushing
//! labels up the cluster chain. Column `l` of `W(t)` is a binary squared-hinge
//! classifier trained on the instances selected by the negative-sampling
//! mask: with teacher-forcing negatives only the instances whose ground-truth
//! parent cluster of `l` is relevant take part. Columns are independent and
//! are solved in parallel; each is hard-thresholded right after its solve.

use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::indexer::ClusterChain;
use crate::par::Executor;
use crate::solver::{DcdSolver, SolverParams};
use crate::sparse::{CscMatrix, CsrMatrix, SparseVector, SparseView};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    SquaredHinge,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeSampling {
    /// Teacher-forcing negatives: instances whose parent cluster is relevant.
    #[default]
    Tfn,
    /// Every instance takes part in every sub-problem (plain one-vs-rest).
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub loss: Loss,
    pub solver_max_iters: usize,
    pub solver_tol: f64,
    pub neg_sampling: NegativeSampling,
    pub prune_epsilon: f64,
    pub seed: u64,
    /// Worker count (0 = all cores). Not part of the persisted config since
    /// results do not depend on it.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            loss: Loss::SquaredHinge,
            solver_max_iters: 100,
            solver_tol: 0.1,
            neg_sampling: NegativeSampling::Tfn,
            prune_epsilon: 0.1,
            seed: 0,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            errs.push(format!("train.lambda must be > 0, got {}", self.lambda));
        }
        if self.prune_epsilon.is_nan() || self.prune_epsilon < 0.0 {
            errs.push(format!("train.prune_epsilon must be >= 0, got {}", self.prune_epsilon));
        }
        if self.solver_tol.is_nan() || self.solver_tol <= 0.0 {
            errs.push(format!("train.solver_tol must be > 0, got {}", self.solver_tol));
        }
        if self.solver_max_iters == 0 {
            errs.push("train.solver_max_iters must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Weight matrices `W(1..=D)`, each `d x K_t` in compressed sparse column form.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredWeights {
    layers: Vec<CscMatrix>,
}

impl LayeredWeights {
    pub fn new(layers: Vec<CscMatrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("layered weights need at least one layer".into()));
        }
        let d = layers[0].n_rows();
        if layers.iter().any(|w| w.n_rows() != d) {
            return Err(Error::DimensionMismatch(
                "all weight layers must share the feature dimension".into(),
            ));
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].n_rows()
    }

    /// `W(t)` for `t` in `1..=D`.
    pub fn layer(&self, t: usize) -> &CscMatrix {
        &self.layers[t - 1]
    }

    pub fn layers(&self) -> &[CscMatrix] {
        &self.layers
    }

    pub fn nnz(&self) -> usize {
        self.layers.iter().map(CscMatrix::nnz).sum()
    }

    /// Checks that `W(t)` has one column per node of layer `t`.
    pub fn check_against(&self, chain: &ClusterChain) -> Result<()> {
        if self.depth() != chain.depth() {
            return Err(Error::DimensionMismatch(format!(
                "weights have {} layers but the tree has depth {}",
                self.depth(),
                chain.depth()
            )));
        }
        for t in 1..=self.depth() {
            if self.layer(t).n_cols() != chain.layer(t).width() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {t}: {} weight columns for {} tree nodes",
                    self.layer(t).n_cols(),
                    chain.layer(t).width()
                )));
            }
        }
        Ok(())
    }
}

/// Hard thresholding of every layer: keeps entries with `|w| > epsilon`.
pub fn prune(weights: &LayeredWeights, epsilon: f64) -> LayeredWeights {
    LayeredWeights {
        layers: weights.layers.iter().map(|w| w.pruned(epsilon)).collect(),
    }
}

/// `Y(1..=D)` with `Y(D) = Y` and `Y(t-1) = binarize(Y(t) C(t))`.
pub fn induce_label_chain(y: &CsrMatrix, chain: &ClusterChain) -> Result<Vec<CsrMatrix>> {
    if y.n_cols() != chain.n_labels() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} columns but the tree has {} labels",
            y.n_cols(),
            chain.n_labels()
        )));
    }
    let depth = chain.depth();
    let mut out = vec![y.clone()];
    for t in (2..=depth).rev() {
        let layer = chain.layer(t);
        let below = out.last().unwrap();
        let rows: Vec<Vec<u32>> = (0..below.n_rows())
            .map(|i| below.row_pattern(i).iter().map(|&j| layer.parent(j as usize)).collect())
            .collect();
        out.push(CsrMatrix::from_binary_rows(layer.n_parents(), &rows)?);
    }
    out.reverse();
    Ok(out)
}

/// Teacher-forcing negative-sampling mask `M(t) = Y(t-1)`: instance `i` is
/// active for the children of cluster `c` iff `M[i, c] = 1`.
pub fn tfn_mask(y_parent: &CsrMatrix) -> CsrMatrix {
    y_parent.clone()
}

/// Per-parent active instance lists of a mask (the transpose of `M(t)`).
fn active_sets(mask: &CsrMatrix) -> CsrMatrix {
    mask.transpose()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub columns: usize,
    /// Sum over columns of the number of active instances.
    pub active_total: u64,
    /// Columns whose active set was empty (left as zero vectors).
    pub empty_columns: usize,
    pub nnz: usize,
    pub objective: f64,
    pub unconverged_columns: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub layers: Vec<LayerStats>,
}

/// Trains all layers top-down.
pub fn train(
    x: &CsrMatrix,
    y: &CsrMatrix,
    chain: &ClusterChain,
    config: &TrainConfig,
    executor: &Executor,
) -> Result<(LayeredWeights, TrainReport)> {
    config.validate().map_err(Error::Config)?;
    if x.n_rows() != y.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows but Y has {}",
            x.n_rows(),
            y.n_rows()
        )));
    }
    let n = x.n_rows();
    let d = x.n_cols();
    let label_chain = induce_label_chain(y, chain)?;
    let mut layers = Vec::with_capacity(chain.depth());
    let mut report = TrainReport::default();

    for t in 1..=chain.depth() {
        let layer = chain.layer(t);
        let all: Vec<u32> = (0..n as u32).collect();
        let active = match (t, config.neg_sampling) {
            (1, _) | (_, NegativeSampling::Full) => None,
            (_, NegativeSampling::Tfn) => Some(active_sets(&tfn_mask(&label_chain[t - 2]))),
        };
        let positives = label_chain[t - 1].transpose();

        let solved = executor.map_init(
            layer.width(),
            || (DcdSolver::new(d), Vec::<SparseView<'_>>::new(), Vec::<f64>::new()),
            |(solver, rows, signs), col| {
                let parent = layer.parent(col) as usize;
                let act = active.as_ref().map_or(all.as_slice(), |a| a.row_pattern(parent));
                let pos = positives.row_pattern(col);
                rows.clear();
                signs.clear();
                let mut p = 0;
                for &i in act {
                    while p < pos.len() && pos[p] < i {
                        p += 1;
                    }
                    let is_pos = p < pos.len() && pos[p] == i;
                    rows.push(x.row(i as usize));
                    signs.push(if is_pos { 1.0 } else { -1.0 });
                }
                let params = SolverParams {
                    lambda: config.lambda,
                    max_iters: config.solver_max_iters,
                    tol: config.solver_tol,
                    seed: derive_seed(config.seed, t as u64, col as u64),
                };
                let sol = solver.solve(rows, signs, &params);
                let weights = threshold(sol.weights, config.prune_epsilon);
                (weights, act.len(), sol.objective, sol.converged)
            },
        );

        let mut stats = LayerStats {
            layer: t,
            columns: layer.width(),
            ..Default::default()
        };
        let mut columns = Vec::with_capacity(solved.len());
        for (w, n_active, objective, converged) in solved {
            stats.active_total += n_active as u64;
            stats.empty_columns += usize::from(n_active == 0);
            stats.unconverged_columns += usize::from(!converged);
            stats.objective += objective;
            stats.nnz += w.nnz();
            columns.push(w);
        }
        log::info!(
            "layer {t}: {} columns, {} active instances, {} empty, nnz {}, objective {:.4}",
            stats.columns,
            stats.active_total,
            stats.empty_columns,
            stats.nnz,
            stats.objective
        );
        if stats.empty_columns > 0 {
            log::warn!("layer {t}: {} columns had no active instances", stats.empty_columns);
        }
        layers.push(CscMatrix::from_columns(d, columns)?);
        report.layers.push(stats);
    }
    Ok((LayeredWeights::new(layers)?, report))
}

fn threshold(w: SparseVector, epsilon: f64) -> SparseVector {
    if w.values().iter().all(|v| v.abs() > epsilon) {
        return w;
    }
    let pairs = w.iter().filter(|(_, v)| v.abs() > epsilon).collect();
    SparseVector::from_pairs(w.dim(), pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grouping() -> ClusterChain {
        // Labels {0, 1} under cluster 0 and {2, 3} under cluster 1.
        ClusterChain::from_parents(vec![vec![0, 0], vec![0, 0, 1, 1]]).unwrap()
    }

    #[test]
    fn induced_chain_examples() {
        let chain = grouping();
        let y = CsrMatrix::from_binary_rows(4, &[vec![0, 2], vec![], vec![1]]).unwrap();
        let ys = induce_label_chain(&y, &chain).unwrap();
        assert_eq!(ys.len(), 2);
        assert_eq!(ys[1], y);
        assert_eq!(ys[0].row_pattern(0), &[0, 1]);
        assert!(ys[0].row_pattern(1).is_empty());
        assert_eq!(ys[0].row_pattern(2), &[0]);

        let bad = CsrMatrix::from_binary_rows(3, &[vec![0]]).unwrap();
        assert!(induce_label_chain(&bad, &chain).is_err());
    }

    #[test]
    fn tfn_mask_examples() {
        let yp = CsrMatrix::from_binary_rows(2, &[vec![0]]).unwrap();
        let active = active_sets(&tfn_mask(&yp));
        assert_eq!(active.row_pattern(0), &[0]);
        assert!(active.row_pattern(1).is_empty());

        let all = CsrMatrix::from_binary_rows(2, &[vec![0, 1], vec![0, 1]]).unwrap();
        let active = active_sets(&tfn_mask(&all));
        assert_eq!(active.row_pattern(0), &[0, 1]);
        assert_eq!(active.row_pattern(1), &[0, 1]);
    }

    #[test]
    fn prune_examples() {
        let col = SparseVector::new(3, vec![0, 1, 2], vec![0.05, -0.2, 0.4]).unwrap();
        let w = LayeredWeights::new(vec![CscMatrix::from_columns(3, vec![col]).unwrap()]).unwrap();
        let p = prune(&w, 0.1);
        assert_eq!(p.layer(1).column(0).values, &[-0.2, 0.4]);
        assert_eq!(prune(&w, 0.0), w);
        assert!(prune(&w, 0.45).nnz() <= prune(&w, 0.1).nnz());
        assert_eq!(prune(&prune(&w, 0.1), 0.3), prune(&w, 0.3));
    }

    #[test]
    fn conflicting_duplicates_give_finite_weights() {
        let x = CsrMatrix::from_rows(
            2,
            &[
                SparseVector::new(2, vec![0], vec![1.0]).unwrap(),
                SparseVector::new(2, vec![0], vec![1.0]).unwrap(),
            ],
        )
        .unwrap();
        let y = CsrMatrix::from_binary_rows(2, &[vec![0], vec![1]]).unwrap();
        let chain = ClusterChain::from_parents(vec![vec![0, 0]]).unwrap();
        let (w, _) = train(&x, &y, &chain, &TrainConfig::default(), &Executor::sequential()).unwrap();
        for t in 1..=w.depth() {
            assert!(w.layer(t).values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn invalid_config_lists_every_field() {
        let cfg = TrainConfig {
            lambda: 0.0,
            prune_epsilon: -1.0,
            ..Default::default()
        };
        let errs = cfg.validate().unwrap_err();
        assert_eq!(errs.len(), 2);
    }
}
