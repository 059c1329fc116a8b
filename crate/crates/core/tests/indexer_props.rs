mod common;

use proptest::prelude::*;
use rand::Rng;
use treematch::indexer::{
    balanced_spherical_kmeans, build_tree, pifa_embeddings, planned_widths, ClusterChain, TreeConfig,
};
use treematch::par::Executor;
use treematch::sparse::{CsrMatrix, SparseView};

fn random_xy(seed: u64, n_labels: usize) -> (CsrMatrix, CsrMatrix) {
    let mut rng = common::rng(seed);
    let dim = 60;
    let n = n_labels * 2;
    let xs: Vec<_> = (0..n).map(|_| common::random_query(&mut rng, dim, 6)).collect();
    let ys: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let mut l: Vec<u32> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(0..n_labels) as u32).collect();
            l.sort_unstable();
            l.dedup();
            l
        })
        .collect();
    (CsrMatrix::from_rows(dim, &xs).unwrap(), CsrMatrix::from_binary_rows(n_labels, &ys).unwrap())
}

/// Follows parent pointers from every label and counts arrivals at the root.
fn root_reach(chain: &ClusterChain) -> usize {
    (0..chain.n_labels())
        .filter(|&l| {
            let mut node = l;
            for t in (1..=chain.depth()).rev() {
                node = chain.layer(t).parent(node) as usize;
            }
            node == 0
        })
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn contiguous_chains_satisfy_invariants(n in 1usize..3000, b in 2usize..20, leaf in 1usize..120) {
        let chain = ClusterChain::contiguous(n, b, leaf).unwrap();
        prop_assert!(chain.check_invariants(leaf).is_ok());
        prop_assert_eq!(chain.widths(), planned_widths(n, b, leaf));
        prop_assert_eq!(*chain.widths().last().unwrap(), n);
        prop_assert_eq!(root_reach(&chain), n);
        // Internal layers fan out by at most B; the label layer by at most max_leaf.
        let widths = chain.widths();
        let mut prev = 1;
        for (t, &w) in widths.iter().enumerate() {
            let fanout = if t + 1 == widths.len() { leaf } else { b };
            prop_assert!(w <= prev * fanout);
            prev = w;
        }
    }

    #[test]
    fn built_trees_satisfy_invariants(seed in 0u64..1000, n in 2usize..400, b in 2usize..10, leaf in 2usize..40) {
        let exec = Executor::new(1);
        let (x, y) = random_xy(seed, n);
        let z = pifa_embeddings(&x, &y, &exec).unwrap();
        for l in 0..n {
            let norm = z.row(l).norm();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-9);
        }
        let config = TreeConfig { branching: b, max_leaf: leaf, seed, ..TreeConfig::default() };
        let chain = build_tree(&z, &config, &exec).unwrap();
        prop_assert!(chain.check_invariants(leaf).is_ok());
        prop_assert_eq!(root_reach(&chain), n);
        prop_assert_eq!(&build_tree(&z, &config, &exec).unwrap(), &chain);
        prop_assert_eq!(ClusterChain::from_text(&chain.to_text()).unwrap(), chain);
    }

    #[test]
    fn kmeans_objective_never_decreases(seed in 0u64..1000, n in 8usize..200, groups in 2usize..8) {
        let (x, y) = random_xy(seed, n);
        let z = pifa_embeddings(&x, &y, &Executor::new(1)).unwrap();
        let rows: Vec<SparseView<'_>> = (0..n).map(|l| z.row(l)).collect();
        let out = balanced_spherical_kmeans(&rows, groups, seed, 20, 0.0).unwrap();
        for w in out.objective_history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        let mut sizes = vec![0usize; groups];
        for &g in &out.assignment {
            sizes[g as usize] += 1;
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn tree_is_independent_of_thread_count() {
    let (x, y) = random_xy(3, 500);
    let config = TreeConfig {
        branching: 4,
        max_leaf: 20,
        ..TreeConfig::default()
    };
    let build = |threads| {
        let exec = Executor::new(threads);
        build_tree(&pifa_embeddings(&x, &y, &exec).unwrap(), &config, &exec).unwrap()
    };
    assert_eq!(build(1), build(4));
}
