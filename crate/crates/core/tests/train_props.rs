mod common;

use proptest::prelude::*;
use rand::Rng;
use treematch::indexer::ClusterChain;
use treematch::par::Executor;
use treematch::solver::{primal_objective, DcdSolver, SolverParams};
use treematch::sparse::{CsrMatrix, SparseVector, SparseView};
use treematch::train::{induce_label_chain, prune, train, TrainConfig};

fn problem(seed: u64, n: usize, dim: usize) -> (Vec<SparseVector>, Vec<f64>) {
    let mut rng = common::rng(seed);
    let xs = (0..n).map(|_| common::random_sparse(&mut rng, dim, 3)).collect();
    let signs = (0..n).map(|_| if rng.gen_bool(0.4) { 1.0 } else { -1.0 }).collect();
    (xs, signs)
}

fn dataset(seed: u64, n: usize, n_labels: usize, dim: usize) -> (CsrMatrix, CsrMatrix) {
    let mut rng = common::rng(seed);
    let xs: Vec<_> = (0..n).map(|_| common::random_query(&mut rng, dim, 5)).collect();
    let ys: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let mut l: Vec<u32> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(0..n_labels) as u32).collect();
            l.sort_unstable();
            l.dedup();
            l
        })
        .collect();
    (CsrMatrix::from_rows(dim, &xs).unwrap(), CsrMatrix::from_binary_rows(n_labels, &ys).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Small steps in any direction do not improve on the solver's answer.
    #[test]
    fn solver_returns_a_local_minimum(seed in 0u64..10_000, lambda in 0.05f64..5.0) {
        let dim = 6;
        let (xs, signs) = problem(seed, 15, dim);
        let rows: Vec<SparseView<'_>> = xs.iter().map(|x| x.view()).collect();
        let params = SolverParams { lambda, max_iters: 10_000, tol: 1e-9, seed };
        let w = DcdSolver::new(dim).solve(&rows, &signs, &params).weights.to_dense();
        let best = primal_objective(&rows, &signs, &w, lambda);
        let mut rng = common::rng(seed + 1);
        for _ in 0..20 {
            let probe: Vec<f64> = w.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
            prop_assert!(primal_objective(&rows, &signs, &probe, lambda) >= best - 1e-9);
        }
    }

    #[test]
    fn pruning_is_monotone_and_nested(seed in 0u64..10_000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let chain = ClusterChain::contiguous(60, 4, 8).unwrap();
        let w = common::random_weights(&mut rng, &chain, 30, 8);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = prune(&w, lo);
        let p_hi = prune(&w, hi);
        prop_assert!(p_hi.nnz() <= p_lo.nnz() && p_lo.nnz() <= w.nnz());
        for layer in p_lo.layers() {
            prop_assert!(layer.values().iter().all(|v| v.abs() > lo));
        }
        prop_assert_eq!(&prune(&p_lo, hi), &p_hi);
        prop_assert_eq!(&prune(&p_hi, lo), &p_hi);
    }

    /// Under teacher forcing, a column of cluster `c` sees exactly the
    /// instances relevant to the parent of `c`.
    #[test]
    fn tfn_active_sets_follow_parent_relevance(seed in 0u64..10_000) {
        let (x, y) = dataset(seed, 80, 40, 20);
        let chain = ClusterChain::contiguous(40, 3, 5).unwrap();
        let config = TrainConfig { solver_max_iters: 5, ..TrainConfig::default() };
        let (_, report) = train(&x, &y, &chain, &config, &Executor::new(1)).unwrap();
        let ys = induce_label_chain(&y, &chain).unwrap();
        for t in 1..=chain.depth() {
            let layer = chain.layer(t);
            let expected: u64 = if t == 1 {
                (x.n_rows() * layer.width()) as u64
            } else {
                (0..x.n_rows())
                    .map(|i| ys[t - 2].row_pattern(i).iter().map(|&c| layer.children(c as usize).len() as u64).sum::<u64>())
                    .sum()
            };
            prop_assert_eq!(report.layers[t - 1].active_total, expected);
            let all_ones = t == 1 || (0..x.n_rows()).all(|i| ys[t - 2].row_pattern(i).len() == layer.n_parents());
            if !all_ones {
                prop_assert!(expected < (x.n_rows() * layer.width()) as u64);
            }
        }
    }
}

#[test]
fn training_is_independent_of_thread_count() {
    let (x, y) = dataset(11, 300, 120, 50);
    let chain = ClusterChain::contiguous(120, 4, 10).unwrap();
    let config = TrainConfig::default();
    let (a, ra) = train(&x, &y, &chain, &config, &Executor::new(1)).unwrap();
    let (b, rb) = train(&x, &y, &chain, &config, &Executor::new(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn trained_weights_respect_the_pruning_threshold() {
    let (x, y) = dataset(5, 200, 50, 40);
    let chain = ClusterChain::contiguous(50, 4, 10).unwrap();
    let config = TrainConfig {
        prune_epsilon: 0.05,
        ..TrainConfig::default()
    };
    let (w, _) = train(&x, &y, &chain, &config, &Executor::new(1)).unwrap();
    assert_eq!(w.layers().len(), chain.depth());
    for (layer, width) in w.layers().iter().zip(chain.widths()) {
        assert_eq!(layer.n_cols(), width);
        assert!(layer.values().iter().all(|v| v.abs() > 0.05));
    }
}
