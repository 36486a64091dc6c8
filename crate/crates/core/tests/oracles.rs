mod common;

use common::oracles;

#[test]
fn raw_disparity_matches_loop_bitwise() {
    oracles::disparity_oracle(1000).unwrap();
}

#[test]
fn ranking_metrics_match_brute_force() {
    oracles::metrics_oracle().unwrap();
}

#[test]
fn loop_oracle_handles_the_worked_examples() {
    let mut row = vec![0.0f32; 64];
    row[5 * 8..6 * 8].copy_from_slice(&[0.0, 0.0, 0.1, 0.8, 0.1, 0.0, 0.0, 0.0]);
    for r in 0..8 {
        if r != 5 {
            row[r * 8] = 1.0;
        }
    }
    let t = sfas_autograd::Tensor::new(&[1, 1, 8, 8], row).unwrap();
    let d = oracles::raw_disparity_loop(&t);
    assert!((d[5] - 2.0).abs() < 1e-6);
    assert_eq!(d[3], 3.0);
}
