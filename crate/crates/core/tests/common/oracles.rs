//! Direct loop evaluations used as oracles for the vectorised code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfas_autograd::{Tape, Tensor};
use sfas_core::disparity::attention_to_raw;
use sfas_core::metrics::{self, Scored};

/// Window regression evaluated literally: argmax (first wins), then the
/// three taps in order, skipping taps outside the row.
pub fn raw_disparity_loop(a: &Tensor<f32>) -> Vec<f32> {
    let w = *a.shape().last().unwrap();
    a.data()
        .chunks(w)
        .enumerate()
        .map(|(row, r)| {
            let xl = (row % w) as i64;
            let mut best = 0;
            for j in 1..w {
                if r[j] > r[best] {
                    best = j;
                }
            }
            let mut d = 0.0f32;
            for k in [-1i64, 0, 1] {
                let xr = best as i64 + k;
                if xr >= 0 && xr < w as i64 {
                    d += r[xr as usize] * (xl - xr) as f32;
                }
            }
            d
        })
        .collect()
}

/// Random row-normalised volume; some draws quantise logits to force ties.
pub fn random_volume(rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (b, h, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..17));
    let quantise = rng.gen_bool(0.3);
    let scale = rng.gen_range(0.5..6.0);
    let logits = Tensor::from_fn(&[b, h, w, w], |_| {
        let v: f32 = rng.gen_range(-1.0..1.0) * scale;
        if quantise { v.round() } else { v }
    });
    let tape = Tape::new();
    tape.constant(logits).softmax_lastdim().unwrap().value().as_ref().clone()
}

pub fn disparity_oracle(volumes: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..volumes {
        let a = random_volume(&mut rng);
        let tape = Tape::new();
        let got = attention_to_raw(tape.constant(a.clone())).map_err(|e| e.to_string())?.value();
        let want = raw_disparity_loop(&a);
        if got.data().iter().zip(&want).any(|(g, w)| g.to_bits() != w.to_bits()) {
            return Err(format!("volume {i} of shape {:?} differs", a.shape()));
        }
    }
    Ok(())
}

/// Operating point at threshold `t` counted directly.
fn rates_at(s: &[Scored], t: f64) -> (f64, f64) {
    let pos = s.iter().filter(|x| x.1).count() as f64;
    let neg = s.len() as f64 - pos;
    let fp = s.iter().filter(|x| !x.1 && x.0 >= t).count() as f64;
    let tp = s.iter().filter(|x| x.1 && x.0 >= t).count() as f64;
    (fp / neg, tp / pos)
}

/// Every distinct score as a threshold, plus one above the maximum,
/// ordered from loosest to strictest.
fn thresholds(s: &[Scored]) -> Vec<f64> {
    let mut t: Vec<f64> = s.iter().map(|x| x.0).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.push(f64::INFINITY);
    t
}

pub fn auc_brute(s: &[Scored]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for p in s.iter().filter(|x| x.1) {
        for n in s.iter().filter(|x| !x.1) {
            den += 1.0;
            num += if p.0 > n.0 {
                1.0
            } else if p.0 == n.0 {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

pub fn eer_brute(s: &[Scored]) -> f64 {
    let pts: Vec<(f64, f64)> = thresholds(s)
        .into_iter()
        .map(|t| {
            let (f, tp) = rates_at(s, t);
            (f, 1.0 - tp)
        })
        .collect();
    for k in 0..pts.len() - 1 {
        let (f0, n0) = pts[k];
        let (f1, n1) = pts[k + 1];
        if f0 == n0 {
            return f0;
        }
        if f0 > n0 && f1 <= n1 {
            let a = (f0 - n0) / ((f0 - n0) - (f1 - n1));
            return f0 + a * (f1 - f0);
        }
    }
    panic!("no crossing")
}

pub fn tpr_brute(s: &[Scored], target: f64) -> f64 {
    thresholds(s)
        .into_iter()
        .map(|t| rates_at(s, t))
        .filter(|&(f, _)| f <= target)
        .map(|(_, t)| t)
        .fold(0.0, f64::max)
}

const FPR_TARGETS: [f64; 5] = [0.0, 0.01, 0.1, 0.25, 0.5];

fn compare(s: &[Scored]) -> Result<(), String> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let auc = metrics::auc(s).map_err(|e| e.to_string())?;
    let eer = metrics::eer(s).map_err(|e| e.to_string())?;
    let tpr = metrics::tpr_at_fpr(s, &FPR_TARGETS).map_err(|e| e.to_string())?;
    if !close(auc, auc_brute(s)) {
        return Err(format!("AUC {auc} vs {} on {s:?}", auc_brute(s)));
    }
    if !close(eer, eer_brute(s)) {
        return Err(format!("EER {eer} vs {} on {s:?}", eer_brute(s)));
    }
    for (t, got) in FPR_TARGETS.iter().zip(tpr) {
        if !close(got, tpr_brute(s, *t)) {
            return Err(format!("TPR@{t} {got} vs {} on {s:?}", tpr_brute(s, *t)));
        }
    }
    Ok(())
}

fn both_classes(labels: u32, n: usize) -> bool {
    labels != 0 && labels != (1 << n) - 1
}

/// Exhaustive small sets: every labelling of every score vector over a
/// four-level grid (n <= 6, ties included), and every labelling of n
/// distinct scores (n <= 12, all rank patterns). Then 200 random sets of
/// 13 to 300 samples.
pub fn metrics_oracle() -> Result<(), String> {
    let grid = [0.0, 0.25, 0.5, 1.0];
    for n in 2..=6usize {
        for code in 0..4usize.pow(n as u32) {
            let scores: Vec<f64> = (0..n).map(|i| grid[(code / 4usize.pow(i as u32)) % 4]).collect();
            for labels in 0..(1u32 << n) {
                if !both_classes(labels, n) {
                    continue;
                }
                let s: Vec<Scored> = (0..n).map(|i| (scores[i], labels >> i & 1 == 1)).collect();
                compare(&s)?;
            }
        }
    }
    for n in 7..=12usize {
        for labels in 0..(1u32 << n) {
            if !both_classes(labels, n) {
                continue;
            }
            let s: Vec<Scored> = (0..n).map(|i| (i as f64 / n as f64, labels >> i & 1 == 1)).collect();
            compare(&s)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let n = rng.gen_range(13..300);
        let levels = if rng.gen_bool(0.5) { 20 } else { 1_000_000 };
        let mut s: Vec<Scored> = (0..n)
            .map(|_| {
                let pos = rng.gen_bool(0.5);
                let mu = if pos { 0.6 } else { 0.4 };
                let v: f64 = (mu + rng.gen_range(-0.4..0.4f64)).clamp(0.0, 1.0);
                ((v * levels as f64).round() / levels as f64, pos)
            })
            .collect();
        s[0].1 = true;
        s[1].1 = false;
        compare(&s)?;
    }
    Ok(())
}
