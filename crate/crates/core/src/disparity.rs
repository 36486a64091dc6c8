//! Matching volume to disparity: windowed soft-argmax regression at token
//! scale, then up-sampling and a small residual refinement network.

use rand::Rng;
use sfas_autograd::{Bound, Element, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{Conv, ResBlock};

/// Token-to-pixel scale of the raw disparity.
pub const SCALE: usize = 4;

/// Offsets `x_l - x_r` on the three taps around each row's argmax, zero
/// elsewhere (including taps that fall outside the row).
fn window_offsets<F: Element>(a: &Tensor<F>) -> Tensor<F> {
    let w = *a.shape().last().unwrap();
    let mut m = vec![F::zero(); a.len()];
    for (row, j) in a.argmax_lastdim().into_iter().enumerate() {
        let xl = (row % w) as isize;
        for k in -1isize..=1 {
            let xr = j as isize + k;
            if (0..w as isize).contains(&xr) {
                m[row * w + xr as usize] = F::from_f64((xl - xr) as f64);
            }
        }
    }
    Tensor::new(a.shape(), m).expect("same shape")
}

/// Raw token-scale disparity `[B, Hq, Wq]` from a left-query volume
/// `[B, Hq, Wq(x_l), Wq(x_r)]`. The argmax position is a constant; the
/// gradient flows through the three window weights only.
pub fn attention_to_raw<'t, F: Element>(volume: Var<'t, F>) -> Result<Var<'t, F>> {
    let s = volume.shape();
    if s.len() != 4 || s[2] != s[3] {
        return Err(Error::Config(format!("matching volume must be [B, H, W, W], got {s:?}")));
    }
    let m = volume.tape().constant(window_offsets(&volume.value()));
    Ok(volume.mul(m)?.sum_axis(3, false)?)
}

/// Up-samples raw disparity `[B, Hq, Wq]` to pixel units at `[B, 1, H, W]`.
pub fn upsample_raw<'t, F: Element>(raw: Var<'t, F>, height: usize, width: usize) -> Result<Var<'t, F>> {
    let s = raw.shape();
    Ok(raw
        .mul_scalar(F::from_usize(SCALE))
        .reshape(&[s[0], 1, s[1], s[2]])?
        .bilinear_resize(height, width)?)
}

/// Per-image min-max normalisation of `[B, 1, H, W]` to `[0, 1]`; constant
/// images map to 0.5.
pub fn normalize_per_image<'t, F: Element>(d: Var<'t, F>) -> Result<Var<'t, F>> {
    let s = d.shape();
    let flat = d.reshape(&[s[0], s[1] * s[2] * s[3]])?;
    let lo = flat.min_axis(1, true)?;
    let hi = flat.max_axis(1, true)?;
    let eps = F::from_f64(1e-6);
    let n = flat.sub(lo)?.add_scalar(eps * F::from_f64(0.5)).div(hi.sub(lo)?.add_scalar(eps))?;
    Ok(n.reshape(&s)?)
}

#[derive(Clone, Debug)]
pub struct Refiner {
    stem: Conv,
    blocks: Vec<ResBlock>,
    head: Conv,
}

/// Raw and refined disparity for one batch.
pub struct DisparityOutput<'t, F: Element> {
    /// Token-scale disparity `[B, Hq, Wq]` in token units.
    pub raw: Var<'t, F>,
    /// Raw disparity up-sampled to `[B, 1, H, W]` in pixels.
    pub pixels: Var<'t, F>,
    /// Refined relative disparity `[B, 1, H, W]` in (0, 1).
    pub refined: Var<'t, F>,
}

impl Refiner {
    pub fn new<F: Element, R: Rng + ?Sized>(store: &mut ParamStore<F>, blocks: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            stem: Conv::new(store, "disp.stem", 1, 8, 3, 1, rng)?,
            blocks: (0..blocks)
                .map(|i| ResBlock::new(store, &format!("disp.res{i}"), 8, 8, 1, rng))
                .collect::<sfas_autograd::Result<_>>()?,
            head: Conv::new(store, "disp.head", 8, 1, 3, 1, rng)?,
        })
    }

    /// Refines normalised disparity `[B, 1, H, W]`; the network predicts a
    /// logit correction on top of the normalised input.
    pub fn refine<'t, F: Element>(&self, p: &Bound<'t, F>, n: Var<'t, F>) -> Result<Var<'t, F>> {
        let mut h = self.stem.forward(p, n)?.relu();
        for b in &self.blocks {
            h = b.forward(p, h)?;
        }
        let prior = n.add_scalar(F::from_f64(-0.5)).mul_scalar(F::from_f64(4.0));
        Ok(self.head.forward(p, h)?.add(prior)?.sigmoid())
    }

    pub fn forward<'t, F: Element>(
        &self,
        p: &Bound<'t, F>,
        volume: Var<'t, F>,
        height: usize,
        width: usize,
    ) -> Result<DisparityOutput<'t, F>> {
        let raw = attention_to_raw(volume)?;
        let pixels = upsample_raw(raw, height, width)?;
        let refined = self.refine(p, normalize_per_image(pixels)?)?;
        Ok(DisparityOutput { raw, pixels, refined })
    }
}
