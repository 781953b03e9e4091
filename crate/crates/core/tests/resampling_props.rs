use std::collections::BTreeMap;

use nhac::nrm::{
    build_triplets, oversample, over_under_union, sample_training_frames, split_nodes, undersample, NodeSplit,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn split(easy: usize, hard: usize) -> NodeSplit {
    NodeSplit {
        easy: (0..easy).collect(),
        hard: (easy..easy + hard).collect(),
        mean_similarity: 0.0,
    }
}

fn count(indices: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &i in indices {
        *m.entry(i).or_insert(0) += 1;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn over_cardinality(easy in 1usize..40, hard in 0usize..40, seed in any::<u64>()) {
        let s = split(easy, hard);
        let e = oversample(&s, &mut ChaCha8Rng::seed_from_u64(seed)).indices;
        if hard > 0 && easy > hard {
            prop_assert_eq!(e.len(), 2 * easy);
        } else {
            prop_assert_eq!(e.len(), easy + hard);
        }
        let c = count(&e);
        for j in 0..easy + hard {
            prop_assert!(c.contains_key(&j));
        }
        for &j in &s.easy {
            prop_assert_eq!(c[&j], 1);
        }
    }

    #[test]
    fn under_cardinality(easy in 1usize..40, hard in 0usize..40, seed in any::<u64>()) {
        let s = split(easy, hard);
        let e = undersample(&s, &mut ChaCha8Rng::seed_from_u64(seed)).indices;
        if hard == 0 {
            prop_assert_eq!(e.len(), easy);
        } else if hard <= easy {
            prop_assert_eq!(e.len(), 2 * hard);
        } else {
            prop_assert_eq!(e.len(), easy + hard);
        }
        let c = count(&e);
        prop_assert!(c.values().all(|&n| n == 1));
        for &j in &s.hard {
            prop_assert!(c.contains_key(&j));
        }
    }

    #[test]
    fn union_cardinality(easy in 1usize..40, hard in 0usize..40, seed in any::<u64>()) {
        let s = split(easy, hard);
        let e = over_under_union(&s, &mut ChaCha8Rng::seed_from_u64(seed)).indices;
        let expected = if hard == 0 {
            easy
        } else {
            let b_star = if easy > hard { easy } else { hard };
            b_star + hard.min(easy)
        };
        prop_assert_eq!(e.len(), expected);
    }

    #[test]
    fn split_is_a_partition(sims in prop::collection::vec(-1.0f64..1.0, 1..40)) {
        let s = split_nodes(&sims);
        let mut all: Vec<usize> = s.easy.iter().chain(&s.hard).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..sims.len()).collect::<Vec<_>>());
        prop_assert!(!s.easy.is_empty());
    }

    #[test]
    fn frame_samples_come_from_the_set(set in prop::collection::vec(0usize..100, 1..40), m in 1usize..32, seed in any::<u64>()) {
        let out = sample_training_frames(&set, m, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(out.len(), m);
        prop_assert!(out.iter().all(|x| set.contains(x)));
        if set.len() >= m {
            // positions are drawn without replacement
            let mut budget = count(&set);
            for x in &out {
                let slot = budget.get_mut(x).unwrap();
                prop_assert!(*slot > 0);
                *slot -= 1;
            }
        }
    }

    #[test]
    fn triplets_respect_labels(labels in prop::collection::vec(0usize..4, 2..16), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match build_triplets(16, 2, &labels, &mut rng) {
            None => prop_assert!(labels.iter().all(|&l| l == labels[0])),
            Some(tb) => {
                prop_assert_eq!(tb.part_len, 8);
                prop_assert_eq!(tb.triplets.len(), labels.len());
                for t in &tb.triplets {
                    prop_assert_eq!(t.anchor.member, t.positive.member);
                    prop_assert_ne!(t.anchor.part, t.positive.part);
                    prop_assert_ne!(labels[t.anchor.member], labels[t.negative.member]);
                }
            }
        }
    }
}

#[test]
fn oversampled_hard_frequencies_are_uniform() {
    let s = split(12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 10_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        let e = oversample(&s, &mut rng).indices;
        // extra draws follow the copied hard set
        for &j in &e[12 + 3..] {
            counts[j - 12] += 1;
        }
    }
    let n = (draws * 9) as f64;
    let p = 1.0 / 3.0;
    let sd = (n * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n * p).abs() < 5.0 * sd, "count {c}");
    }
}

#[test]
fn split_example_with_mean_tie_rule() {
    let s = split_nodes(&[0.9, 0.9, 0.5, 0.3]);
    assert!((s.mean_similarity - 0.65).abs() < 1e-15);
    assert_eq!((s.easy, s.hard), (vec![0, 1], vec![2, 3]));
    let s = split_nodes(&[0.4; 5]);
    assert!(s.hard.is_empty());
}

#[test]
fn degenerate_triplet_settings_are_skipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(build_triplets(16, 1, &[0, 1], &mut rng).is_none());
    assert!(build_triplets(15, 2, &[0, 1], &mut rng).is_none());
    assert!(build_triplets(16, 2, &[3, 3, 3], &mut rng).is_none());
    let tb = build_triplets(16, 2, &[0, 1], &mut rng).unwrap();
    assert_eq!(tb.triplets.len(), 2);
    assert_eq!(tb.triplets[0].negative.member, 1);
    assert_eq!(tb.triplets[1].negative.member, 0);
}
