//! Parameterised layers. Each layer only holds parameter ids; the values live
//! in a [`ParamStore`] and are bound to a tape for every forward pass.

use rand::Rng;
use sfas_autograd::{Bound, Element, ParamId, ParamStore, Result, Var};

/// Affine map over the last axis: `x W + b`, `W: [d_in, d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<F: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_xavier(format!("{name}.w"), &[d_in, d_out], d_in, d_out, rng)?,
            b: store.add_zeros(format!("{name}.b"), &[d_out])?,
        })
    }

    pub fn forward<'t, F: Element>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        x.matmul(p[self.w])?.add(p[self.b])
    }
}

/// Dense 2-D convolution with bias, "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new<F: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_xavier(format!("{name}.w"), &[c_out, c_in, k, k], c_in * k * k, c_out * k * k, rng)?,
            b: store.add_zeros(format!("{name}.b"), &[c_out, 1, 1])?,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward<'t, F: Element>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        x.conv2d(p[self.w], self.stride, self.pad)?.add(p[self.b])
    }
}

/// Depthwise 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct DwConv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl DwConv {
    pub fn new<F: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_xavier(format!("{name}.w"), &[channels, 1, k, k], k * k, k * k, rng)?,
            b: store.add_zeros(format!("{name}.b"), &[channels, 1, 1])?,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward<'t, F: Element>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        x.dwconv2d(p[self.w], self.stride, self.pad)?.add(p[self.b])
    }
}

/// Two 3×3 convolutions with a ReLU between and an identity or 1×1
/// projection skip.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    pub fn new<F: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let skip = if c_in != c_out || stride != 1 {
            Some(Conv::new(store, &format!("{name}.skip"), c_in, c_out, 1, stride, rng)?)
        } else {
            None
        };
        Ok(Self {
            conv1: Conv::new(store, &format!("{name}.conv1"), c_in, c_out, 3, stride, rng)?,
            conv2: Conv::new(store, &format!("{name}.conv2"), c_out, c_out, 3, 1, rng)?,
            skip,
        })
    }

    pub fn forward<'t, F: Element>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let h = self.conv1.forward(p, x)?.relu();
        let h = self.conv2.forward(p, h)?;
        let s = match &self.skip {
            Some(c) => c.forward(p, x)?,
            None => x,
        };
        Ok(h.add(s)?.relu())
    }
}

/// `[B, H, W, C]` to `[B, C, H, W]`.
pub fn to_nchw<'t, F: Element>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    x.permute(&[0, 3, 1, 2])
}

/// `[B, C, H, W]` to `[B, H, W, C]`.
pub fn to_nhwc<'t, F: Element>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    x.permute(&[0, 2, 3, 1])
}

/// Concatenates each 2×2 neighbourhood of a `[B, H, W, C]` map into
/// `[B, H/2, W/2, 4C]`.
pub fn space_to_depth<'t, F: Element>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let s = x.shape();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    x.reshape(&[b, h / 2, 2, w / 2, 2, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, h / 2, w / 2, 4 * c])
}

/// Inverse of [`space_to_depth`]: `[B, H, W, 4C]` to `[B, 2H, 2W, C]`.
pub fn depth_to_space<'t, F: Element>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let s = x.shape();
    let (b, h, w, c) = (s[0], s[1], s[2], s[3] / 4);
    x.reshape(&[b, h, w, 2, 2, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, 2 * h, 2 * w, c])
}
