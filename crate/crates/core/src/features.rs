//! Hourglass convolutional feature extractor producing quarter-resolution
//! tokens with a sinusoidal width encoding.

use rand::Rng;
use sfas_autograd::{Bound, Element, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{to_nhwc, Conv, Linear, ResBlock};

const STEM: usize = 8;
const MID: usize = 16;
const DEEP: usize = 32;
/// Width encoding amplitude. At 1 it swamps the unit-variance content and the
/// matcher settles on a position-only prior.
const PE_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    stem: Conv,
    down1: ResBlock,
    down2: ResBlock,
    fuse: Conv,
    embed: Linear,
    pub channels: usize,
}

/// `pe[x, 2i] = sin(x / 10000^(2i/C))`, `pe[x, 2i+1] = cos(...)`.
pub fn width_encoding<F: Element>(width: usize, channels: usize) -> Tensor<F> {
    Tensor::from_fn(&[width, channels], |k| {
        let (x, c) = ((k / channels) as f64, k % channels);
        let freq = 10000f64.powf(-((c - c % 2) as f64) / channels as f64);
        F::from_f64(if c % 2 == 0 { (x * freq).sin() } else { (x * freq).cos() })
    })
}

/// Zero mean and unit variance per image; blank images stay zero.
pub fn standardize<'t, F: Element>(images: Var<'t, F>) -> Result<Var<'t, F>> {
    let s = images.shape();
    let flat = images.reshape(&[s[0], s[1] * s[2] * s[3]])?;
    let centred = flat.sub(flat.mean_axis(1, true)?)?;
    let std = centred.square().mean_axis(1, true)?.add_scalar(F::from_f64(1e-4)).sqrt();
    Ok(centred.div(std)?.reshape(&s)?)
}

impl FeatureExtractor {
    pub fn new<F: Element, R: Rng + ?Sized>(store: &mut ParamStore<F>, channels: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            stem: Conv::new(store, "fe.stem", 1, STEM, 3, 2, rng)?,
            down1: ResBlock::new(store, "fe.down1", STEM, MID, 2, rng)?,
            down2: ResBlock::new(store, "fe.down2", MID, DEEP, 2, rng)?,
            fuse: Conv::new(store, "fe.up", DEEP + MID, DEEP, 3, 1, rng)?,
            embed: Linear::new(store, "fe.embed", DEEP, channels, rng)?,
            channels,
        })
    }

    /// `[N, 1, H, W]` images to `[N, H/4, W/4, C]` tokens.
    pub fn forward<'t, F: Element>(&self, p: &Bound<'t, F>, images: Var<'t, F>) -> Result<Var<'t, F>> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 1 || s[2] % 8 != 0 || s[3] % 8 != 0 || s[2] == 0 || s[3] == 0 {
            return Err(Error::Config(format!(
                "feature extractor needs [N, 1, H, W] with H and W multiples of 8, got {s:?}"
            )));
        }
        let (h4, w4) = (s[2] / 4, s[3] / 4);
        let x = self.stem.forward(p, standardize(images)?)?.relu();
        let skip = self.down1.forward(p, x)?;
        let deep = self.down2.forward(p, skip)?;
        let up = deep.bilinear_resize(h4, w4)?;
        let x = self.fuse.forward(p, Var::concat(&[up, skip], 1)?)?.relu();
        let tokens = self.embed.forward(p, to_nhwc(x)?)?;
        let pe = images.tape().constant(width_encoding::<F>(w4, self.channels).map(|v| v * F::from_f64(PE_SCALE)));
        Ok(tokens.add(pe)?)
    }

    /// Shared-weight extraction of both views.
    pub fn extract<'t, F: Element>(
        &self,
        p: &Bound<'t, F>,
        left: Var<'t, F>,
        right: Var<'t, F>,
    ) -> Result<(Var<'t, F>, Var<'t, F>)> {
        let n = left.shape()[0];
        let both = self.forward(p, Var::concat(&[left, right], 0)?)?;
        Ok((both.narrow(0, 0, n)?, both.narrow(0, n, n)?))
    }
}
