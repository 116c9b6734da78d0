mod common;

use common::{run_oracle, ORACLE_INSTANCES};

fn assert_oracle(check: common::Check) {
    assert_eq!(run_oracle(check).unwrap(), ORACLE_INSTANCES);
}

#[test]
fn classify_with_anchors_matches_brute_force() {
    assert_oracle(common::check_classify);
}

#[test]
fn entropy_filter_matches_brute_force() {
    assert_oracle(common::check_entropy_filter);
}

#[test]
fn weighted_prototypes_match_brute_force() {
    assert_oracle(common::check_weighted_prototypes);
}

#[test]
fn silhouette_matches_brute_force() {
    assert_oracle(common::check_silhouette);
}

#[test]
fn similarity_matrix_matches_brute_force() {
    assert_oracle(common::check_similarity_matrix);
}

#[test]
fn oracle_sanity() {
    use common::oracle;
    // Orthogonal unit pair: cos 0.
    assert_eq!(oracle::cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
    let p = oracle::softmax(&[0.0, 0.0]);
    assert_eq!(p, vec![0.5, 0.5]);
    assert_eq!(oracle::first_argmax(&p), 0);
    assert!((oracle::entropy(&p) - 2f64.ln()).abs() < 1e-15);
    // Two members, alpha 0.5 keeps the lower-entropy one; ties go to the lower row.
    assert_eq!(
        oracle::entropy_filter(&[0, 0], &[0.3, 0.1], 1, 0.5),
        vec![vec![1]]
    );
    assert_eq!(
        oracle::entropy_filter(&[0, 0], &[0.2, 0.2], 1, 0.5),
        vec![vec![0]]
    );
}
