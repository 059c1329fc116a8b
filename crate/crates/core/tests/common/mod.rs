//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treematch::indexer::ClusterChain;
use treematch::inference::{Activation, Model};
use treematch::sparse::{CscMatrix, SparseVector};
use treematch::train::LayeredWeights;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A sparse vector with `nnz` distinct random coordinates, values in [-1, 1].
pub fn random_sparse(rng: &mut ChaCha8Rng, dim: usize, nnz: usize) -> SparseVector {
    let idx = rand::seq::index::sample(rng, dim, nnz.min(dim));
    let pairs = idx
        .into_iter()
        .map(|i| (i as u32, rng.gen_range(-1.0..1.0)))
        .filter(|&(_, v)| v != 0.0)
        .collect();
    SparseVector::from_pairs(dim, pairs)
}

pub fn random_query(rng: &mut ChaCha8Rng, dim: usize, nnz: usize) -> SparseVector {
    let mut q = random_sparse(rng, dim, nnz);
    q.l2_normalize();
    q
}

/// Random weights for every layer of `chain`, `col_nnz` entries per column.
pub fn random_weights(rng: &mut ChaCha8Rng, chain: &ClusterChain, dim: usize, col_nnz: usize) -> LayeredWeights {
    let layers = chain
        .widths()
        .into_iter()
        .map(|w| {
            let cols = (0..w).map(|_| random_sparse(rng, dim, col_nnz)).collect();
            CscMatrix::from_columns(dim, cols).unwrap()
        })
        .collect();
    LayeredWeights::new(layers).unwrap()
}

pub fn random_model(
    seed: u64,
    n_labels: usize,
    branching: usize,
    max_leaf: usize,
    dim: usize,
    col_nnz: usize,
    activation: Activation,
) -> Model {
    let mut r = rng(seed);
    let chain = ClusterChain::contiguous(n_labels, branching, max_leaf).unwrap();
    let weights = random_weights(&mut r, &chain, dim, col_nnz);
    Model::new(&weights, chain, activation, 10).unwrap()
}
