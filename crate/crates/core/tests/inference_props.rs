mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use treematch::inference::{Activation, Model};
use treematch::par::Executor;
use treematch::sparse::SparseVector;

fn activation(sigmoid: bool) -> Activation {
    if sigmoid {
        Activation::Sigmoid
    } else {
        Activation::L3Hinge
    }
}

/// Product of node activations along the label's path, from the weights.
fn path_score(model: &Model, x: &SparseVector, label: u32) -> f64 {
    let weights = model.weights();
    let path = model.chain().path(label as usize);
    path.iter()
        .enumerate()
        .map(|(i, &node)| model.activation().apply(weights.layer(i + 1).column(node as usize).dot(&x.view())))
        .product()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_beam_equals_exact(seed in 0u64..10_000, n in 1usize..600, b in 2usize..9, leaf in 1usize..30, sig: bool, k in 1usize..50) {
        let model = common::random_model(seed, n, b, leaf, 40, 6, activation(sig));
        let mut rng = common::rng(seed + 1);
        let x = common::random_query(&mut rng, 40, 8);
        prop_assert_eq!(model.beam_search(&x, model.max_width(), k), model.exact_predict(&x, k));
    }

    #[test]
    fn scores_match_path_products(seed in 0u64..10_000, n in 1usize..600, beam in 1usize..12, sig: bool) {
        let model = common::random_model(seed, n, 4, 10, 40, 6, activation(sig));
        let mut rng = common::rng(seed + 1);
        let x = common::random_query(&mut rng, 40, 8);
        let p = model.beam_search(&x, beam, 20);
        let ids: HashSet<_> = p.labels.iter().collect();
        prop_assert_eq!(ids.len(), p.len());
        for w in p.scores.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        for (label, score) in p.iter() {
            prop_assert!((0.0..=1.0).contains(&score));
            prop_assert!((score - path_score(&model, &x, label)).abs() <= 1e-9);
        }
    }

    #[test]
    fn margin_evaluations_are_bounded(seed in 0u64..10_000, n in 1usize..2000, b in 2usize..9, leaf in 1usize..40, beam in 1usize..20) {
        let model = common::random_model(seed, n, b, leaf, 30, 4, Activation::Sigmoid);
        let mut rng = common::rng(seed + 1);
        let x = common::random_query(&mut rng, 30, 6);
        let (_, stats) = model.beam_search_with_stats(&x, beam, 10);
        let per_layer: usize = model.chain().layers().iter().map(|l| beam * l.max_children()).sum();
        prop_assert!(stats.margin_evals <= per_layer);
        prop_assert!(stats.margin_evals <= model.depth() * beam * b.max(leaf));
    }

    #[test]
    fn activations_are_monotone(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for act in [Activation::Sigmoid, Activation::L3Hinge] {
            prop_assert!(act.apply(lo) <= act.apply(hi));
            prop_assert!((0.0..=1.0).contains(&act.apply(lo)));
            let v = act.apply(lo);
            if v > 0.0 {
                prop_assert!((act.ln_apply(lo) - v.ln()).abs() <= 1e-9);
            }
        }
        prop_assert!(Activation::Sigmoid.apply(lo) > 0.0);
    }
}

#[test]
fn l3_hinge_saturates_outside_the_unit_interval() {
    let act = Activation::L3Hinge;
    assert_eq!(act.apply(-0.5), 0.0);
    assert_eq!(act.apply(0.0), 0.0);
    assert_eq!(act.apply(1.0), 1.0);
    assert_eq!(act.apply(2.0), 1.0);
    assert!((act.apply(0.5) - 0.875).abs() < 1e-15);
}

#[test]
fn batch_prediction_is_independent_of_thread_count() {
    let model = common::random_model(9, 3000, 8, 50, 100, 8, Activation::Sigmoid);
    let mut rng = common::rng(10);
    let qs: Vec<_> = (0..200).map(|_| common::random_query(&mut rng, 100, 10)).collect();
    let one = model.batch_predict(&qs, 10, 20, &Executor::new(1));
    let four = model.batch_predict(&qs, 10, 20, &Executor::new(4));
    assert_eq!(one, four);
}
