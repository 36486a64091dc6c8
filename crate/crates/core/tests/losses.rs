mod common;

use common::anchors;
use proptest::prelude::*;
use sfas_autograd::{Tape, Tensor};
use sfas_core::data::RelPair;
use sfas_core::losses;
use sfas_core::Map;

#[test]
fn relative_loss_values() {
    anchors::relative_equal_points().unwrap();
}

#[test]
fn reconstruction_loss_values() {
    anchors::reconstruction_constant_images().unwrap();
}

#[test]
fn smoothness_loss_values() {
    anchors::smoothness_steps().unwrap();
}

#[test]
fn focal_map_loss_values() {
    anchors::focal_map_cases().unwrap();
}

#[test]
fn triplet_loss_values() {
    anchors::triplet_margin_case().unwrap();
}

#[test]
fn focal_classification_loss_values() {
    anchors::focal_classification_cases().unwrap();
}

#[test]
fn zero_disparity_warp_is_identity() {
    let tape = Tape::<f64>::new();
    let r = Tensor::from_fn(&[1, 1, 3, 5], |i| (i * 7 % 5) as f64);
    let out = losses::reconstruct_left(tape.constant(r.clone()), tape.constant(Tensor::zeros(&[1, 1, 3, 5]))).unwrap();
    assert_eq!(out.value().data(), r.data());
}

#[test]
fn unit_disparity_shifts_right_image() {
    let tape = Tape::<f64>::new();
    let (h, w) = (2, 6);
    let r = Tensor::from_fn(&[1, 1, h, w], |i| (i * 3 % 11) as f64);
    let out = losses::reconstruct_left(tape.constant(r.clone()), tape.constant(Tensor::ones(&[1, 1, h, w]))).unwrap();
    for y in 0..h {
        for x in 0..w {
            let src = x.saturating_sub(1);
            assert_eq!(out.value().data()[y * w + x], r.data()[y * w + src]);
        }
    }
}

#[test]
fn classification_with_zero_gamma_is_weighted_cross_entropy() {
    let tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, -0.5, 0.2, 0.9]).unwrap());
    let got = losses::focal_classification_loss(l, &[true, false], 0.0, 0.5).unwrap().item();
    let p0 = 1.0 / (1.0 + (-(1.5f64)).exp());
    let p1 = 1.0 / (1.0 + (-(0.7f64)).exp());
    let want = 0.5 * -(p0.ln() + p1.ln()) / 2.0;
    assert!((got - want).abs() < 1e-12);
}

fn scalar(v: f64) -> Map {
    Map::from_fn(1, 2, |x, _| if x == 0 { 0.0 } else { v as f32 })
}

proptest! {
    #[test]
    fn relative_loss_is_symmetric_under_swap(di in -3.0f64..3.0, dj in -3.0f64..3.0, tj in 0.0f64..1.0, r in prop::sample::select(vec![-1i8, 1])) {
        let tape = Tape::<f64>::new();
        let d = tape.constant(Tensor::from_f64(&[1, 1, 1, 2], &[di, dj]).unwrap());
        let t = scalar(tj);
        let fwd = vec![vec![RelPair { i: (0, 0), j: (1, 0), r }]];
        let bwd = vec![vec![RelPair { i: (1, 0), j: (0, 0), r: -r }]];
        let a = losses::relative_disparity_loss(d, &fwd, &[&t]).unwrap().item();
        let b = losses::relative_disparity_loss(d, &bwd, &[&t]).unwrap().item();
        prop_assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn triplet_loss_ignores_translation(seed in 0u64..1000, shift in -5.0f64..5.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = Tensor::from_fn(&[6, 3], |_| rng.gen_range(-1.0..1.0));
        let labels = [true, false, true, false, true, false];
        let tape = Tape::<f64>::new();
        let a = losses::triplet_loss(tape.constant(f.clone()), &labels, 0.3).unwrap().item();
        let b = losses::triplet_loss(tape.constant(f.map(|v| v + shift)), &labels, 0.3).unwrap().item();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_fn(&[1, 1, 8, 8], |_| rng.gen_range(0.0..1.0)));
        let b = tape.constant(Tensor::from_fn(&[1, 1, 8, 8], |_| rng.gen_range(0.0..1.0)));
        prop_assert!(losses::reconstruction_loss(a, b).unwrap().item() >= 0.0);
        prop_assert!(losses::smoothness_loss(a, b).unwrap().item() >= 0.0);
        let p = tape.constant(Tensor::from_fn(&[1], |_| rng.gen_range(0.0..1.0)));
        prop_assert!(losses::focal_map_loss(a, b, p).unwrap().item() >= 0.0);
    }
}
