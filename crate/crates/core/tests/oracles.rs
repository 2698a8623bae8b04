mod common;

use common::*;

#[test]
fn sampled_softmax_with_all_negatives_is_exact_cross_entropy() {
    assert!(sampled_softmax_full_negatives(100) < 1e-6);
}

#[test]
fn metrics_match_brute_force() {
    assert_eq!(metrics_match_oracle(100), 0);
}

#[test]
fn metric_oracle_agrees_with_hand_values() {
    use std::collections::HashSet;
    let t: HashSet<usize> = [0, 1].into_iter().collect();
    let (r, n, h) = metric_oracle(&[9, 0, 8], &t, 3);
    let g = 1.0 / 3f64.log2();
    assert_eq!((r, h), (0.5, 1.0));
    assert!((n - g / (1.0 + g)).abs() < 1e-15);
}

#[test]
fn topn_matches_full_sort() {
    assert_eq!(retrieval_matches_oracle(100), 0);
}

#[test]
fn orthogonality_worked_example_value() {
    assert!((orthogonality_worked_example() - 0.0625).abs() < 1e-9);
}

#[test]
fn analytic_spot_values() {
    assert!((bpr_zero_margin() - std::f64::consts::LN_2).abs() < 1e-9);
    assert!((uniform_ten_way() - 10f64.ln()).abs() < 1e-9);
    let (worst, alpha) = single_interest_aggregation();
    assert_eq!(worst, 0.0);
    assert_eq!(alpha, 1.0);
}

#[test]
fn no_gs_rerank_matches_union_oracle() {
    use dsie::aggregate::retrieve_per_interest;
    use dsie::params::Dims;
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for t in 0..50 {
        let dims = Dims {
            items: rng.random_range(3..60),
            dim: 4,
            layers: 1,
            interests: rng.random_range(1..5),
        };
        let p = random_params(dims, t, 1.0);
        let f = random_matrix(&mut rng, dims.interests, 4);
        let exclude: HashSet<usize> = (0..dims.items).filter(|_| rng.random_bool(0.1)).collect();
        let n = rng.random_range(1..10);
        // union of per-interest top-N lists, each item at its best score
        let mut best = std::collections::BTreeMap::new();
        for row in f.rows() {
            let scores: Vec<f64> = p.item_embeddings().dot(&row).to_vec();
            for (i, s) in topn_oracle(&scores, n, &exclude) {
                let e = best.entry(i).or_insert(f64::NEG_INFINITY);
                *e = f64::max(*e, s);
            }
        }
        let mut union: Vec<(usize, f64)> = best.into_iter().collect();
        union.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        union.truncate(n);
        assert_eq!(retrieve_per_interest(&f, &p, n, &exclude).unwrap().items, union);
    }
}
