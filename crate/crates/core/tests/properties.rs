//! Property tests for the aggregation, retrieval, and backup invariants.

use proptest::prelude::*;
use rmcts_core::action::Action;
use rmcts_core::policy::aggregate_actions;
use rmcts_core::reflection::cosine_similarity;
use rmcts_core::search::tree::ROOT;
use rmcts_core::search::SearchTree;
use rmcts_core::value::choice_to_value;

fn sampled_actions() -> impl Strategy<Value = Vec<Action>> {
    prop::collection::vec(0u8..6, 1..40).prop_map(|ids| {
        ids.into_iter()
            .map(|i| Action::parse(&format!("click [{i}]")).unwrap())
            .collect()
    })
}

proptest! {
    #[test]
    fn aggregated_priors_are_sorted_bounded_and_subnormalized(
        samples in sampled_actions(),
        breadth in 1usize..8,
    ) {
        let dist = aggregate_actions(&samples, breadth).unwrap();
        prop_assert!(dist.entries.len() <= breadth);
        prop_assert_eq!(dist.total_samples, samples.len());
        let priors: Vec<f64> = dist.entries.iter().map(|e| e.prior).collect();
        for pair in priors.windows(2) {
            prop_assert!(pair[0] >= pair[1], "priors not non-increasing: {:?}", priors);
        }
        for &p in &priors {
            prop_assert!(p > 0.0 && p <= 1.0);
        }
        prop_assert!(priors.iter().sum::<f64>() <= 1.0 + 1e-12);
        let counts: usize = dist.entries.iter().map(|e| e.count).sum();
        prop_assert!(counts <= dist.total_samples);
    }

    #[test]
    fn aggregation_is_permutation_invariant(samples in sampled_actions(), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut shuffled = samples.clone();
        let mut rng = rmcts_core::seeds::substream(seed, &["prop", "shuffle"]);
        shuffled.shuffle(&mut rng);
        let a = aggregate_actions(&samples, 5).unwrap();
        let b = aggregate_actions(&shuffled, 5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mean_choice_value_is_order_invariant(choices in prop::collection::vec(0usize..5, 1..30)) {
        let letters = ['A', 'B', 'C', 'D', 'E'];
        let forward: f64 = choices.iter().map(|&i| choice_to_value(letters[i]).unwrap()).sum();
        let mut reversed = choices.clone();
        reversed.reverse();
        let backward: f64 = reversed.iter().map(|&i| choice_to_value(letters[i]).unwrap()).sum();
        prop_assert!((forward - backward).abs() < 1e-12);
        prop_assert!(forward / choices.len() as f64 <= 1.0);
    }

    #[test]
    fn cosine_similarity_is_bounded_and_symmetric(
        u in prop::collection::vec(-10.0f32..10.0, 4..32),
        v_seed in prop::collection::vec(-10.0f32..10.0, 4..32),
    ) {
        let n = u.len().min(v_seed.len());
        let u = &u[..n];
        let v = &v_seed[..n];
        let nonzero = |x: &[f32]| x.iter().any(|a| *a != 0.0);
        prop_assume!(nonzero(u) && nonzero(v));
        let s = cosine_similarity(u, v).unwrap();
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));
        let t = cosine_similarity(v, u).unwrap();
        prop_assert!((s - t).abs() < 1e-12);
        let own = cosine_similarity(u, u).unwrap();
        prop_assert!((own - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backups_keep_q_the_running_mean(values in prop::collection::vec(0.0f64..=1.0, 1..60)) {
        let mut tree = SearchTree::new("t", "g", "obs".into(), None);
        let samples = vec![Action::parse("click [1]").unwrap(); 3];
        let dist = aggregate_actions(&samples, 5).unwrap();
        tree.attach_children(ROOT, &dist, 5);
        for &v in &values {
            tree.backpropagate(&[(ROOT, 0)], v).unwrap();
        }
        let edge = &tree.node(ROOT).edges[0];
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert_eq!(edge.visits as usize, values.len());
        prop_assert!((edge.q - mean).abs() < 1e-10);
    }

    #[test]
    fn action_canonical_round_trips(elem in 0u32..100, text in "[a-z ]{1,20}") {
        let action = Action::Type { elem: elem.to_string(), text: text.clone() };
        let reparsed = Action::parse(&action.canonical()).unwrap();
        prop_assert_eq!(reparsed.canonical(), action.canonical());
    }
}
