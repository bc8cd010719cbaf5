//! Top-K_N class selection against a full-sort reference.

mod common;

use common::{has_tie, topk_oracle, topk_trials};
use dmpt::prompt::select_top_scores;
use dmpt::DptError;
use proptest::prelude::*;

#[test]
fn thousand_vectors_match_the_sort() {
    let trials = topk_trials(1000, 42);
    let tied = trials.iter().filter(|t| has_tie(&t.scores)).count();
    assert!(tied > 300, "only {tied} vectors with ties");
    for t in &trials {
        let got = select_top_scores(&t.scores, t.k_n, t.label).unwrap();
        assert_eq!(got.indices, topk_oracle(&t.scores, t.k_n, t.label), "scores {:?} k_n {}", t.scores, t.k_n);
    }
}

#[test]
fn all_equal_scores_keep_the_lowest_ids() {
    let s = select_top_scores(&[0.5; 6], 3, None).unwrap();
    assert_eq!(s.indices, vec![0, 1, 2]);
}

#[test]
fn invalid_inputs() {
    assert!(matches!(select_top_scores(&[1.0], 0, None), Err(DptError::Parameter(_))));
    assert!(matches!(select_top_scores(&[1.0, f32::NAN], 1, None), Err(DptError::Parameter(_))));
    assert!(matches!(select_top_scores(&[1.0, 2.0], 1, Some(2)), Err(DptError::Label { .. })));
}

proptest! {
    #[test]
    fn selection_matches_sort(
        scores in prop::collection::vec(prop_oneof![(-3i32..3).prop_map(|v| v as f32), -5.0f32..5.0], 1..30),
        k_n in 1usize..35,
        label_seed in any::<Option<usize>>(),
    ) {
        let label = label_seed.map(|l| l % scores.len());
        let got = select_top_scores(&scores, k_n, label).unwrap();
        prop_assert_eq!(&got.indices, &topk_oracle(&scores, k_n, label));
        // distinct, right size, label always present when given
        let mut seen = got.indices.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), k_n.min(scores.len()));
        if let Some(l) = label {
            prop_assert!(got.indices.contains(&l));
            prop_assert_eq!(got.forced_ground_truth.is_some(), !topk_oracle(&scores, k_n, None).contains(&l));
        }
    }

    #[test]
    fn selection_is_deterministic(scores in prop::collection::vec(-2.0f32..2.0, 1..20), k_n in 1usize..20) {
        let a = select_top_scores(&scores, k_n, None).unwrap();
        let b = select_top_scores(&scores, k_n, None).unwrap();
        prop_assert_eq!(a, b);
    }
}
