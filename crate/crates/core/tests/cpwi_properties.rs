mod common;

use cascom::cost::{cpwi, PriorityVector};
use cascom::kb::{ContextEntry, ContextVector, Direction};
use common::{dominates, random_candidates, random_weights, reference_index};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn values(cands: &[ContextVector], w: &std::collections::BTreeMap<String, f64>) -> Vec<f64> {
    cpwi(cands, &PriorityVector { weights: w.clone() }).unwrap().into_iter().map(|c| c.value).collect()
}

fn instance(seed: u64, sparse: bool) -> (Vec<ContextVector>, std::collections::BTreeMap<String, f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    let props = rng.random_range(1..=5);
    (random_candidates(&mut rng, n, props, sparse), random_weights(&mut rng, props))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_the_reference_and_stays_in_range(seed in any::<u64>(), sparse in any::<bool>()) {
        let (cands, w) = instance(seed, sparse);
        let got = values(&cands, &w);
        let want = reference_index(&cands, &w);
        for (g, r) in got.iter().zip(&want) {
            prop_assert!((0.0..=1.0).contains(g));
            prop_assert!((g - r).abs() <= 1e-12, "{} vs {}", g, r);
        }
    }

    #[test]
    fn scaling_all_weights_keeps_the_ranking(seed in any::<u64>(), factor in 0.001f64..1000.0) {
        let (cands, w) = instance(seed, true);
        let scaled: std::collections::BTreeMap<_, _> = w.iter().map(|(k, v)| (k.clone(), v * factor)).collect();
        let a = values(&cands, &w);
        let b = values(&cands, &scaled);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn a_dominating_candidate_never_costs_more(seed in any::<u64>()) {
        let (cands, w) = instance(seed, false);
        let v = values(&cands, &w);
        for i in 0..cands.len() {
            for j in 0..cands.len() {
                if dominates(&cands[i], &cands[j]) {
                    prop_assert!(v[i] <= v[j] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn permuting_candidates_permutes_indices(seed in any::<u64>(), shuffle in any::<u64>()) {
        let (cands, w) = instance(seed, true);
        let mut order: Vec<usize> = (0..cands.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<ContextVector> = order.iter().map(|&i| cands[i].clone()).collect();
        let v = values(&cands, &w);
        let p = values(&permuted, &w);
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(p[k], v[i]);
        }
    }
}

#[test]
fn two_candidate_example_gives_zero_and_one() {
    let cand = |v: f64| -> ContextVector { [("reliability".to_string(), ContextEntry::new(v, Direction::HigherBetter))].into() };
    let idx = cpwi(&[cand(0.9), cand(0.6)], &PriorityVector::equal().with("reliability", 1.0)).unwrap();
    // direct evaluation: normalized 1 and 0, so sqrt(1 * 0^2) and sqrt(1 * 1^2)
    assert_eq!(idx[0].value, 0.0);
    assert_eq!(idx[1].value, 1.0);
}
