//! Training objectives. Each function returns the plain sum (or mean, where
//! noted) over its inputs; the trainer applies normalisation and weights.

use serde::{Deserialize, Serialize};
use sfas_autograd::{Element, Tensor, Var};

use crate::data::RelPair;
use crate::error::{Error, Result};
use crate::map::Map;

const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Relative-order loss over point pairs of a batch of disparity maps
/// `[N, 1, H, W]`. Pair `k` of image `n` contributes
/// `ln(1 + λ exp(r (d_i - d_j)))` with `λ = exp(r (t_j - t_i))`; pairs with
/// `r = 0` contribute nothing.
pub fn relative_disparity_loss<'t, F: Element>(
    d: Var<'t, F>,
    pairs: &[Vec<RelPair>],
    teachers: &[&Map],
) -> Result<Var<'t, F>> {
    let s = d.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    if pairs.len() != n || teachers.len() != n {
        return Err(Error::Config(format!(
            "{} pair lists and {} teachers for a batch of {n}",
            pairs.len(),
            teachers.len()
        )));
    }
    let (mut ii, mut jj, mut sign, mut log_w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (b, (ps, t)) in pairs.iter().zip(teachers).enumerate() {
        for p in ps.iter().filter(|p| p.r != 0) {
            let ((xi, yi), (xj, yj)) = (p.i, p.j);
            if xi >= w || xj >= w || yi >= h || yj >= h {
                return Err(Error::Config(format!("pair {p:?} outside {h}x{w}")));
            }
            let r = f64::from(p.r);
            ii.push(b * h * w + yi * w + xi);
            jj.push(b * h * w + yj * w + xj);
            sign.push(F::from_f64(r));
            log_w.push(F::from_f64(r * (f64::from(t.get(xj, yj)) - f64::from(t.get(xi, yi)))));
        }
    }
    let tape = d.tape();
    if ii.is_empty() {
        return Ok(d.sum().mul_scalar(F::zero()));
    }
    let k = ii.len();
    let diff = d.gather_flat(&ii)?.sub(d.gather_flat(&jj)?)?;
    let z = diff
        .mul(tape.constant(Tensor::new(&[k], sign)?))?
        .add(tape.constant(Tensor::new(&[k], log_w)?))?;
    Ok(z.softplus().sum())
}

/// Left view reconstructed by sampling `right` at `x - d` (clamped).
pub fn reconstruct_left<'t, F: Element>(right: Var<'t, F>, d: Var<'t, F>) -> Result<Var<'t, F>> {
    Ok(right.warp_horizontal(d)?)
}

/// Mean SSIM over all valid 7×7 windows of `[N, 1, H, W]` images.
pub fn ssim<'t, F: Element>(x: Var<'t, F>, y: Var<'t, F>) -> Result<Var<'t, F>> {
    let tape = x.tape();
    let k = SSIM_WINDOW;
    let box_w = tape.constant(Tensor::full(&[1, 1, k, k], F::one() / F::from_usize(k * k)));
    let pool = |v: Var<'t, F>| v.conv2d(box_w, 1, 0);
    let (mx, my) = (pool(x)?, pool(y)?);
    let sxx = pool(x.square())?.sub(mx.square())?;
    let syy = pool(y.square())?.sub(my.square())?;
    let sxy = pool(x.mul(y)?)?.sub(mx.mul(my)?)?;
    let (c1, c2) = (F::from_f64(SSIM_C1), F::from_f64(SSIM_C2));
    let two = F::from_f64(2.0);
    let num = mx.mul(my)?.mul_scalar(two).add_scalar(c1).mul(sxy.mul_scalar(two).add_scalar(c2))?;
    let den = mx.square().add(my.square())?.add_scalar(c1).mul(sxx.add(syy)?.add_scalar(c2))?;
    Ok(num.div(den)?.mean())
}

/// `0.15 · mean|L - L̂| + 0.85 · (1 - SSIM(L, L̂))`.
pub fn reconstruction_loss<'t, F: Element>(left: Var<'t, F>, recon: Var<'t, F>) -> Result<Var<'t, F>> {
    let l1 = left.sub(recon)?.abs().mean();
    let dssim = ssim(left, recon)?.neg().add_scalar(F::one());
    Ok(l1.mul_scalar(F::from_f64(0.15)).add(dssim.mul_scalar(F::from_f64(0.85)))?)
}

/// Forward differences along the last (x) and second-to-last (y) axes; the
/// missing last column/row is treated as zero by simply omitting it.
fn grads<'t, F: Element>(v: Var<'t, F>) -> Result<(Var<'t, F>, Var<'t, F>)> {
    let s = v.shape();
    let r = s.len();
    let (h, w) = (s[r - 2], s[r - 1]);
    let gx = v.narrow(r - 1, 1, w - 1)?.sub(v.narrow(r - 1, 0, w - 1)?)?;
    let gy = v.narrow(r - 2, 1, h - 1)?.sub(v.narrow(r - 2, 0, h - 1)?)?;
    Ok((gx, gy))
}

/// Edge-aware smoothness, summed over pixels:
/// `0.2 (|∂d| e^{-|∂L|}) + 0.8 (|∂L| e^{-|∂d|})` in both directions.
pub fn smoothness_loss<'t, F: Element>(d: Var<'t, F>, image: Var<'t, F>) -> Result<Var<'t, F>> {
    let (dx, dy) = grads(d)?;
    let (lx, ly) = grads(image)?;
    let term = |g: Var<'t, F>, e: Var<'t, F>| -> Result<Var<'t, F>> {
        Ok(g.abs().mul(e.abs().neg().exp())?.sum())
    };
    let a = term(dx, lx)?.add(term(dy, ly)?)?;
    let b = term(lx, dx)?.add(term(ly, dy)?)?;
    Ok(a.mul_scalar(F::from_f64(0.2)).add(b.mul_scalar(F::from_f64(0.8)))?)
}

/// `Σ e^{1 - p} (c - t)²` for maps `c`, `t` of shape `[N, ...]` and the
/// true-class probability `p` of shape `[N]`.
pub fn focal_map_loss<'t, F: Element>(c: Var<'t, F>, target: Var<'t, F>, p_true: Var<'t, F>) -> Result<Var<'t, F>> {
    let s = c.shape();
    let n = s[0];
    if p_true.shape() != [n] || target.shape() != s {
        return Err(Error::Config(format!(
            "focal map loss shapes {s:?} / {:?} / {:?}",
            target.shape(),
            p_true.shape()
        )));
    }
    let weight = p_true.neg().add_scalar(F::one()).exp().reshape(&[n, 1])?;
    let sq = c.sub(target)?.square().reshape(&[n, s[1..].iter().product()])?;
    Ok(sq.mul(weight)?.sum())
}

/// Batch-hard triplet loss on features `[N, D]`: for every anchor with both a
/// same-class and an other-class partner, `max(0, max d_pos - min d_neg + m)`.
pub fn triplet_loss<'t, F: Element>(features: Var<'t, F>, real: &[bool], margin: f64) -> Result<Var<'t, F>> {
    let s = features.shape();
    let n = s[0];
    if s.len() != 2 || real.len() != n {
        return Err(Error::Config(format!("triplet loss got features {s:?} and {} labels", real.len())));
    }
    let a = features.reshape(&[n, 1, s[1]])?;
    let b = features.reshape(&[1, n, s[1]])?;
    let dist = a.sub(b)?.square().sum_axis(2, false)?.add_scalar(F::from_f64(1e-12)).sqrt();
    let mut total: Option<Var<'t, F>> = None;
    for i in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && real[j] == real[i]).map(|j| i * n + j).collect();
        let neg: Vec<usize> = (0..n).filter(|&j| real[j] != real[i]).map(|j| i * n + j).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let hp = dist.gather_flat(&pos)?.max_axis(0, false)?;
        let hn = dist.gather_flat(&neg)?.min_axis(0, false)?;
        let h = hp.sub(hn)?.add_scalar(F::from_f64(margin)).relu();
        total = Some(match total {
            Some(t) => t.add(h)?,
            None => h,
        });
    }
    Ok(total.unwrap_or_else(|| features.sum().mul_scalar(F::zero())))
}

/// Binary focal loss averaged over the batch. `logits` is `[N, 2]` with
/// channel 0 the real class; `p_t = sigmoid(±(l_0 - l_1))`.
pub fn focal_classification_loss<'t, F: Element>(
    logits: Var<'t, F>,
    real: &[bool],
    gamma: f64,
    alpha: f64,
) -> Result<Var<'t, F>> {
    let z = true_class_margin(logits, real)?;
    // (1 - p_t)^γ = exp(-γ softplus(z)),  -ln p_t = softplus(-z)
    let modulating = z.softplus().mul_scalar(F::from_f64(-gamma)).exp();
    let ce = z.neg().softplus();
    Ok(modulating.mul(ce)?.mean().mul_scalar(F::from_f64(alpha)))
}

/// `l_true - l_other` per sample, shape `[N]`.
pub fn true_class_margin<'t, F: Element>(logits: Var<'t, F>, real: &[bool]) -> Result<Var<'t, F>> {
    let s = logits.shape();
    let n = s[0];
    if s != [n, 2] || real.len() != n {
        return Err(Error::Config(format!("logits {s:?} with {} labels", real.len())));
    }
    let diff = logits.narrow(1, 0, 1)?.sub(logits.narrow(1, 1, 1)?)?.reshape(&[n])?;
    let sign = Tensor::from_fn(&[n], |i| if real[i] { F::one() } else { -F::one() });
    Ok(diff.mul(logits.tape().constant(sign))?)
}

/// Weights of the individual terms; zero disables a term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub relative: f64,
    pub reconstruction: f64,
    pub smoothness: f64,
    pub focal_map: f64,
    pub triplet: f64,
    pub classification: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            relative: 1.0,
            reconstruction: 1.0,
            smoothness: 1.0,
            focal_map: 1.0,
            triplet: 1.0,
            classification: 1.0,
        }
    }
}

/// Named loss values of one step and their weighted total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub terms: Vec<(&'static str, f64)>,
    pub total: f64,
}

impl LossBundle {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfas_autograd::Tape;

    #[test]
    fn zero_pairs_give_zero() {
        let tape = Tape::<f64>::new();
        let d = tape.constant(Tensor::full(&[1, 1, 4, 4], 0.3));
        let t = Map::zeros(4, 4);
        let pairs = vec![vec![RelPair { i: (0, 0), j: (1, 1), r: 0 }]];
        assert_eq!(relative_disparity_loss(d, &pairs, &[&t]).unwrap().item(), 0.0);
    }

    #[test]
    fn identical_images_have_zero_reconstruction_loss() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 9, 9], |i| ((i * 37) % 11) as f64 / 11.0));
        assert!(reconstruction_loss(x, x).unwrap().item().abs() < 1e-12);
    }

    #[test]
    fn single_class_triplet_is_zero() {
        let tape = Tape::<f64>::new();
        let f = tape.constant(Tensor::from_fn(&[3, 2], |i| i as f64));
        assert_eq!(triplet_loss(f, &[true; 3], 0.3).unwrap().item(), 0.0);
    }

    #[test]
    fn bundle_lookup() {
        let b = LossBundle { terms: vec![("relative", 0.5)], total: 0.5 };
        assert_eq!(b.get("relative"), Some(0.5));
        assert_eq!(b.get("triplet"), None);
    }
}
