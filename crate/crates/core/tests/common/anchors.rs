//! Hand-evaluated loss values.

use sfas_autograd::{Tape, Tensor};
use sfas_core::data::RelPair;
use sfas_core::losses;
use sfas_core::Map;

pub const TOL: f64 = 1e-6;

fn check(name: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= TOL {
        Ok(())
    } else {
        Err(format!("{name}: got {got}, expected {want}"))
    }
}

pub fn relative_equal_points() -> Result<(), String> {
    let tape = Tape::<f64>::new();
    let d = tape.constant(Tensor::full(&[1, 1, 2, 2], 0.4));
    let t = Map::from_fn(2, 2, |_, _| 0.3);
    let pairs = vec![vec![RelPair { i: (0, 0), j: (1, 1), r: 1 }]];
    let l = losses::relative_disparity_loss(d, &pairs, &[&t]).map_err(|e| e.to_string())?;
    check("relative loss, equal points", l.item(), std::f64::consts::LN_2)?;
    let d = tape.constant(Tensor::from_f64(&[1, 1, 1, 2], &[0.0, 10.0]).unwrap());
    let t = Map::zeros(1, 2);
    let pairs = vec![vec![RelPair { i: (0, 0), j: (1, 0), r: 1 }]];
    let l = losses::relative_disparity_loss(d, &pairs, &[&t]).map_err(|e| e.to_string())?;
    check("relative loss, separated points", l.item(), (-10f64).exp().ln_1p())
}

pub fn reconstruction_constant_images() -> Result<(), String> {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[1, 1, 8, 8]));
    let b = tape.constant(Tensor::ones(&[1, 1, 8, 8]));
    let c1 = 1e-4;
    let want = 0.15 + 0.85 * (1.0 - c1 / (1.0 + c1));
    let ab = losses::reconstruction_loss(a, b).map_err(|e| e.to_string())?.item();
    let ba = losses::reconstruction_loss(b, a).map_err(|e| e.to_string())?.item();
    check("reconstruction loss, constant images", ab, want)?;
    check("reconstruction loss symmetry", ba, ab)
}

/// A vertical step between columns 1 and 2 of a 3×4 image.
fn step(h: usize, w: usize, height: f64) -> Tensor<f64> {
    Tensor::from_fn(&[1, 1, h, w], |i| if i % w >= 2 { height } else { 0.0 })
}

pub fn smoothness_steps() -> Result<(), String> {
    let tape = Tape::<f64>::new();
    let (h, w) = (3, 4);
    let flat = tape.constant(Tensor::full(&[1, 1, h, w], 0.7));
    let s = 0.6;
    let l = losses::smoothness_loss(tape.constant(step(h, w, s)), flat).map_err(|e| e.to_string())?;
    // one edge pixel per row
    check("smoothness, step in disparity", l.item(), 0.2 * s * h as f64)?;
    let g = 0.9;
    let l = losses::smoothness_loss(flat, tape.constant(step(h, w, g))).map_err(|e| e.to_string())?;
    check("smoothness, step in image", l.item(), 0.8 * g * h as f64)?;
    let l = losses::smoothness_loss(flat, flat).map_err(|e| e.to_string())?;
    check("smoothness, constant", l.item(), 0.0)
}

pub fn focal_map_cases() -> Result<(), String> {
    let tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::from_f64(&[1, 1, 2], &[0.7, 0.3]).unwrap());
    let t = tape.constant(Tensor::from_f64(&[1, 1, 2], &[0.2, 0.3]).unwrap());
    let run = |p: f64| {
        losses::focal_map_loss(c, t, tape.constant(Tensor::from_f64(&[1], &[p]).unwrap()))
            .map(|v| v.item())
            .map_err(|e| e.to_string())
    };
    check("focal map, logit 1", run(1.0)?, 0.25)?;
    check("focal map, logit 0", run(0.0)?, std::f64::consts::E * 0.25)?;
    let l = losses::focal_map_loss(t, t, tape.constant(Tensor::from_f64(&[1], &[0.3]).unwrap()))
        .map_err(|e| e.to_string())?;
    check("focal map, exact match", l.item(), 0.0)
}

pub fn triplet_margin_case() -> Result<(), String> {
    let tape = Tape::<f64>::new();
    // anchor at the origin, positive and negative both at distance 1
    let f = tape.constant(Tensor::from_f64(&[3, 2], &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = 0.3;
    let labels = [true, true, false];
    // per-anchor: anchor 0 -> pos 1, neg 1 -> m; anchor 1 -> pos 1, neg sqrt2;
    // anchor 2 has no positive.
    let want = m + (1.0 - 2f64.sqrt() + m).max(0.0);
    let l = losses::triplet_loss(f, &labels, m).map_err(|e| e.to_string())?;
    check("triplet, equal distances", l.item(), want)?;
    let single = tape.constant(Tensor::from_f64(&[2, 2], &[0.0, 0.0, 5.0, 5.0]).unwrap());
    check(
        "triplet, single class",
        losses::triplet_loss(single, &[false, false], m).map_err(|e| e.to_string())?.item(),
        0.0,
    )
}

pub fn focal_classification_cases() -> Result<(), String> {
    let tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::from_f64(&[1, 2], &[0.4, 0.4]).unwrap());
    let v = losses::focal_classification_loss(l, &[true], 2.0, 0.5).map_err(|e| e.to_string())?;
    check("focal classification, p_t 0.5", v.item(), 0.5 * 0.25 * std::f64::consts::LN_2)?;
    let sure = tape.constant(Tensor::from_f64(&[1, 2], &[-40.0, 40.0]).unwrap());
    let v = losses::focal_classification_loss(sure, &[false], 2.0, 0.5).map_err(|e| e.to_string())?;
    check("focal classification, p_t 1", v.item(), 0.0)
}

pub const ALL: [(&str, fn() -> Result<(), String>); 6] = [
    ("relative loss", relative_equal_points),
    ("reconstruction loss", reconstruction_constant_images),
    ("smoothness loss", smoothness_steps),
    ("focal confidence-map loss", focal_map_cases),
    ("triplet loss", triplet_margin_case),
    ("focal classification loss", focal_classification_cases),
];
