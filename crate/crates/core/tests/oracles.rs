//! Metrics against brute-force reference implementations.

mod common;

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::brute::{instance, verify_f1_and_buckets, verify_hand_case, verify_ranking, verify_tagging, verify_top_k, INSTANCES, TOL};
use conceptcode::eval;

#[test]
fn ranking_metrics_match_pairwise_and_step_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..INSTANCES {
        let inst = instance(&mut rng);
        verify_ranking(&inst).unwrap_or_else(|e| panic!("case {case}: {e}"));
    }
}

#[test]
fn f1_and_buckets_match_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..INSTANCES {
        let inst = instance(&mut rng);
        verify_f1_and_buckets(&inst).unwrap_or_else(|e| panic!("case {case}: {e}"));
    }
}

#[test]
fn precision_and_recall_at_k_match_exhaustive_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..INSTANCES {
        let inst = instance(&mut rng);
        verify_top_k(&inst).unwrap_or_else(|e| panic!("case {case}: {e}"));
    }
}

#[test]
fn tagging_accuracy_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..INSTANCES {
        verify_tagging(&mut rng).unwrap();
    }
}

#[test]
fn hand_computed_pooled_versus_averaged_f1() {
    verify_hand_case().unwrap();
}

#[test]
fn random_five_by_twenty_precision_at_eight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scores: Vec<Vec<f64>> = (0..5).map(|_| (0..20).map(|_| rng.gen()).collect()).collect();
    let gold: Vec<Vec<bool>> = (0..5).map(|_| (0..20).map(|_| rng.gen_bool(0.3)).collect()).collect();
    let mut want = 0.0;
    for (s, g) in scores.iter().zip(&gold) {
        let mut order: Vec<usize> = (0..20).collect();
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
        want += order[..8].iter().filter(|&&l| g[l]).count() as f64 / 8.0;
    }
    assert_abs_diff_eq!(eval::p_at_k(&scores, &gold, 8).unwrap(), want / 5.0, epsilon = TOL);
}
