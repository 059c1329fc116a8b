mod common;

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use treematch::eval::{mean_recall, recall_at_k, InvertedIndex};
use treematch::inference::Prediction;

fn prediction(labels: Vec<u32>) -> Prediction {
    let scores = (0..labels.len()).map(|i| 1.0 / (i + 1) as f64).collect();
    Prediction { labels, scores }
}

fn ranked_list() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::hash_set(0u32..60, 0..40).prop_map(|s| s.into_iter().collect())
}

#[test]
fn recall_matches_set_arithmetic() {
    let mut rng = common::rng(1);
    for _ in 0..1000 {
        let mut pool: Vec<u32> = (0..80).collect();
        pool.shuffle(&mut rng);
        let predicted: Vec<u32> = pool[..rng.gen_range(0..50)].to_vec();
        let truth: HashSet<u32> = (0..rng.gen_range(0..15)).map(|_| rng.gen_range(0..80)).collect();
        let k = rng.gen_range(1..60);
        let top: HashSet<u32> = predicted.iter().take(k).copied().collect();
        let expected = (!truth.is_empty()).then(|| top.intersection(&truth).count() as f64 / truth.len() as f64);
        assert_eq!(recall_at_k(&prediction(predicted), &truth, k), expected);
    }
}

proptest! {
    #[test]
    fn recall_is_non_decreasing_in_k(list in ranked_list(), truth in prop::collection::hash_set(0u32..60, 1..10)) {
        let p = prediction(list);
        let mut last = 0.0;
        for k in 1..=45 {
            let r = recall_at_k(&p, &truth, k).unwrap();
            prop_assert!(r >= last && r <= 1.0);
            last = r;
        }
    }

    #[test]
    fn mean_recall_skips_empty_truths(lists in prop::collection::vec(ranked_list(), 1..20)) {
        let truths: Vec<HashSet<u32>> = lists.iter().enumerate()
            .map(|(i, l)| if i % 3 == 0 { HashSet::new() } else { l.iter().take(2).copied().collect() })
            .collect();
        let preds: Vec<Prediction> = lists.into_iter().map(prediction).collect();
        let s = mean_recall(&preds, &truths, &[1, 10]);
        let empty = truths.iter().filter(|t| t.is_empty()).count();
        prop_assert_eq!(s.excluded_queries, empty);
        prop_assert_eq!(s.evaluated_queries + empty, truths.len());
        if s.evaluated_queries > 0 {
            prop_assert!(s.recall_at[&1] <= s.recall_at[&10]);
        }
    }

    #[test]
    fn bm25_ignores_document_order(docs in prop::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,4}", 1..15), query in "[a-f]{1,3}( [a-f]{1,3}){0,2}", seed: u64) {
        let text = Default::default();
        let a = InvertedIndex::build(&docs, Default::default(), &text).unwrap();
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut common::rng(seed));
        let shuffled: Vec<&String> = order.iter().map(|&i| &docs[i]).collect();
        let b = InvertedIndex::build(&shuffled, Default::default(), &text).unwrap();
        let original: BTreeMap<u32, f64> = a.score_all(&query).into_iter().collect();
        let permuted: BTreeMap<u32, f64> = b.score_all(&query)
            .into_iter()
            .map(|(d, s)| (order[d as usize] as u32, s))
            .collect();
        prop_assert_eq!(original.len(), permuted.len());
        for (d, s) in &original {
            prop_assert!((s - permuted[d]).abs() <= 1e-12);
        }
    }

    /// With avgdl held fixed, a document sharing no token with a one-token
    /// query neither shows up nor reorders the others.
    #[test]
    fn non_matching_document_changes_nothing(docs in prop::collection::vec("[a-f]{1,2}( [a-f]{1,2}){0,4}", 1..15), token in "[a-f]{1,2}") {
        let text = Default::default();
        let before = InvertedIndex::build(&docs, Default::default(), &text).unwrap();
        let mut more = docs.clone();
        more.push("zz yy".to_string());
        let after = InvertedIndex::build(&more, Default::default(), &text).unwrap().with_avgdl(before.avgdl());
        let k = docs.len() + 1;
        let p = before.top_k(&token, k);
        let q = after.top_k(&token, k);
        prop_assert!(!q.labels.contains(&(docs.len() as u32)));
        prop_assert_eq!(p.labels, q.labels);
    }
}
