//! Dynamic matching attention transformer.
//!
//! Tokens are channels-last `[N, H, W, C]` and the two views travel stacked
//! along the batch axis (`left` first, `right` second), so every projection
//! runs once for both images. Attention is row-wise: each token attends to
//! the tokens of its own row (self) or of the same row in the other view
//! (cross).

use rand::Rng;
use serde::{Deserialize, Serialize};
use sfas_autograd::{Bound, Element, ParamId, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{depth_to_space, space_to_depth, to_nchw, to_nhwc, DwConv, Linear};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmaConfig {
    pub blocks: usize,
    pub heads: usize,
    /// Halve the token grid and double the channels after this block (1-based).
    pub down_after: Option<usize>,
    /// Undo the down-sampling after this block (1-based).
    pub up_after: Option<usize>,
    /// Half the heads do self-attention, half cross-attention. When off,
    /// whole blocks alternate between self- and cross-attention.
    pub split_heads: bool,
    /// Largest disparity, in tokens, the matching volume may assign weight
    /// to. `None` allows the whole row left of the query.
    pub max_offset: Option<usize>,
}

impl Default for DmaConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            heads: 8,
            down_after: Some(1),
            up_after: Some(3),
            split_heads: true,
            max_offset: Some(3),
        }
    }
}

impl DmaConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.blocks == 0 {
            return fail("at least one attention block is required".into());
        }
        if self.heads < 2 || self.heads % 2 != 0 {
            return fail(format!("head count {} must be even", self.heads));
        }
        if channels % (2 * self.heads) != 0 {
            return fail(format!("channels {channels} must split evenly over {} heads", self.heads));
        }
        match (self.down_after, self.up_after) {
            (None, None) => {}
            (Some(d), Some(u)) if d >= 1 && d < u && u < self.blocks => {}
            _ => {
                return fail(format!(
                    "schedule down {:?} / up {:?} must return to the input resolution before the last of {} blocks",
                    self.down_after, self.up_after, self.blocks
                ))
            }
        }
        if !self.split_heads && self.blocks % 2 != 0 {
            return fail("alternating self/cross blocks need an even block count".into());
        }
        Ok(())
    }

    /// Channel width of each block under the down/up schedule.
    fn widths(&self, channels: usize) -> Vec<usize> {
        (1..=self.blocks)
            .map(|b| match (self.down_after, self.up_after) {
                (Some(d), Some(u)) if b > d && b <= u => 2 * channels,
                _ => channels,
            })
            .collect()
    }
}

/// Which key positions a query may attend to along its row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowMask {
    /// `key <= query` (left-view queries).
    KeyNotRight,
    /// `key >= query` (right-view queries).
    KeyNotLeft,
}

/// Additive `[W, W]` mask: 0 where allowed, `-inf` elsewhere.
pub fn row_mask<F: Element>(width: usize, kind: RowMask) -> Tensor<F> {
    Tensor::from_fn(&[width, width], |i| {
        let (q, k) = (i / width, i % width);
        let ok = match kind {
            RowMask::KeyNotRight => k <= q,
            RowMask::KeyNotLeft => k >= q,
        };
        if ok {
            F::zero()
        } else {
            F::neg_infinity()
        }
    })
}

/// Matching mask: `q - max <= k <= q`, or [`RowMask::KeyNotRight`] when
/// unbounded.
pub fn band_mask<F: Element>(width: usize, max: Option<usize>) -> Tensor<F> {
    let max = max.unwrap_or(width);
    Tensor::from_fn(&[width, width], |i| {
        let (q, k) = (i / width, i % width);
        if k <= q && q - k <= max {
            F::zero()
        } else {
            F::neg_infinity()
        }
    })
}

/// Mask for a stacked `[left; right]` batch of `2n` rows-of-heads: left
/// queries may not look right of themselves, right queries not left.
fn stacked_mask<F: Element>(n: usize, width: usize) -> Tensor<F> {
    let l = row_mask::<F>(width, RowMask::KeyNotRight);
    let r = row_mask::<F>(width, RowMask::KeyNotLeft);
    let mut data = Vec::with_capacity(2 * n * width * width);
    for _ in 0..n {
        data.extend_from_slice(l.data());
    }
    for _ in 0..n {
        data.extend_from_slice(r.data());
    }
    Tensor::new(&[2 * n, 1, 1, width, width], data).expect("mask shape")
}

/// Scaled dot-product attention along rows.
///
/// `q`, `k`, `v` are `[N, heads, H, W, C_h]`; `residual` (already resized)
/// and `mask` are added to the logits before the softmax. Returns the output
/// `[N, heads, H, W, C_h]` and the weights `[N, heads, H, W, W]`.
pub fn attend<'t, F: Element>(
    q: Var<'t, F>,
    k: Var<'t, F>,
    v: Var<'t, F>,
    residual: Option<Var<'t, F>>,
    mask: Option<Var<'t, F>>,
) -> Result<(Var<'t, F>, Var<'t, F>)> {
    let ch = *q.shape().last().unwrap();
    let mut logits = q
        .matmul(k.permute(&[0, 1, 2, 4, 3])?)?
        .mul_scalar(F::one() / F::from_usize(ch).sqrt());
    if let Some(r) = residual {
        logits = logits.add(r)?;
    }
    if let Some(m) = mask {
        logits = logits.add(m)?;
    }
    let alpha = logits.softmax_lastdim()?;
    Ok((alpha.matmul(v)?, alpha))
}

/// Resizes attention weights `[N, h, H, W, W]` to `[N, h, H', W', W']`:
/// bilinear over the (query, key) axes, then over rows.
pub fn resize_attention<'t, F: Element>(a: Var<'t, F>, rows: usize, width: usize) -> Result<Var<'t, F>> {
    let s = a.shape();
    if s[2] == rows && s[3] == width {
        return Ok(a);
    }
    let (n, h) = (s[0], s[1]);
    let a = a.bilinear_resize(width, width)?;
    let a = a.reshape(&[n, h, s[2], width * width])?;
    Ok(a.bilinear_resize(rows, width * width)?.reshape(&[n, h, rows, width, width])?)
}

/// Multi-scale attention with per-head projections and the feed-forward
/// update, over `channels` input channels split into `heads` heads.
#[derive(Clone, Debug)]
pub struct AttnUnit {
    pub heads: usize,
    pub channels: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub bq: ParamId,
    pub bk: ParamId,
    pub bv: ParamId,
    dw: [DwConv; 6],
    wo: Linear,
    ff_in: Linear,
    ff_dw: DwConv,
    ff_out: Linear,
}

/// Attention weights of one unit at full and half scale.
pub type Residuals<'t, F> = [Option<Var<'t, F>>; 2];

impl AttnUnit {
    pub fn new<F: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let ch = channels / heads;
        let mut proj = |s: &str, rng: &mut R| -> Result<(ParamId, ParamId)> {
            Ok((
                store.add_xavier(format!("{name}.w{s}"), &[heads, ch, ch], ch, ch, rng)?,
                store.add_zeros(format!("{name}.b{s}"), &[heads, 1, ch])?,
            ))
        };
        let (wq, bq) = proj("q", rng)?;
        let (wk, bk) = proj("k", rng)?;
        let (wv, bv) = proj("v", rng)?;
        let mut dw = Vec::with_capacity(6);
        for s in ["q", "k", "v"] {
            for (scale, stride) in [(1, 1), (2, 2)] {
                dw.push(DwConv::new(store, &format!("{name}.dw_{s}{scale}"), channels, 3, stride, rng)?);
            }
        }
        Ok(Self {
            heads,
            channels,
            wq,
            wk,
            wv,
            bq,
            bk,
            bv,
            dw: dw.try_into().expect("six depthwise convs"),
            wo: Linear::new(store, &format!("{name}.wo"), 2 * channels, channels, rng)?,
            ff_in: Linear::new(store, &format!("{name}.ff_in"), channels, 2 * channels, rng)?,
            ff_dw: DwConv::new(store, &format!("{name}.ff_dw"), 2 * channels, 3, 1, rng)?,
            ff_out: Linear::new(store, &format!("{name}.ff_out"), 2 * channels, channels, rng)?,
        })
    }

    fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Per-head affine projection of `[N, H, W, c]` tokens, returned as an
    /// image `[N, c]` channels × `[H, W]` with head-major channels.
    pub fn project<'t, F: Element>(
        &self,
        p: &Bound<'t, F>,
        x: Var<'t, F>,
        w: ParamId,
        b: ParamId,
    ) -> Result<Var<'t, F>> {
        let s = x.shape();
        let (n, h, wd) = (s[0], s[1], s[2]);
        if s[3] != self.channels {
            return Err(Error::Config(format!("unit expects {} channels, got {s:?}", self.channels)));
        }
        let ch = self.head_dim();
        let y = x
            .reshape(&[n * h * wd, self.heads, ch])?
            .permute(&[1, 0, 2])?
            .matmul(p[w])?
            .add(p[b])?;
        Ok(y.reshape(&[self.heads, n, h, wd, ch])?
            .permute(&[1, 0, 4, 2, 3])?
            .reshape(&[n, self.channels, h, wd])?)
    }

    /// `[N, c, H, W]` to `[N, heads, H, W, C_h]`.
    fn split_heads<'t, F: Element>(&self, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let s = x.shape();
        Ok(x.reshape(&[s[0], self.heads, self.head_dim(), s[2], s[3]])?
            .permute(&[0, 1, 3, 4, 2])?)
    }

    /// One attention update of stacked `[left; right]` tokens.
    ///
    /// With `cross` the keys and values of each view come from the other
    /// view. `masked` applies the epipolar ordering mask to cross attention.
    pub fn forward<'t, F: Element>(
        &self,
        p: &Bound<'t, F>,
        x: Var<'t, F>,
        cross: bool,
        residual: &Residuals<'t, F>,
        masked: bool,
    ) -> Result<(Var<'t, F>, Residuals<'t, F>)> {
        let s = x.shape();
        let (n2, h, w) = (s[0], s[1], s[2]);
        if n2 % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!("attention needs a stacked pair and an even token grid, got {s:?}")));
        }
        let tape = x.tape();
        let q = self.project(p, x, self.wq, self.bq)?;
        let k = self.project(p, x, self.wk, self.bk)?;
        let v = self.project(p, x, self.wv, self.bv)?;
        let swap = |t: Var<'t, F>| -> Result<Var<'t, F>> {
            if !cross {
                return Ok(t);
            }
            let half = n2 / 2;
            Ok(Var::concat(&[t.narrow(0, half, half)?, t.narrow(0, 0, half)?], 0)?)
        };
        let mut outs = Vec::with_capacity(2);
        let mut alphas: Residuals<'t, F> = [None, None];
        for scale in 0..2 {
            let q_s = self.split_heads(self.dw[scale].forward(p, q)?)?;
            let k_s = swap(self.split_heads(self.dw[2 + scale].forward(p, k)?)?)?;
            let v_s = swap(self.split_heads(self.dw[4 + scale].forward(p, v)?)?)?;
            let qs = q_s.shape();
            let (rows, width) = (qs[2], qs[3]);
            let res = residual[scale].map(|r| resize_attention(r, rows, width)).transpose()?;
            let mask = (cross && masked).then(|| tape.constant(stacked_mask(n2 / 2, width)));
            let (o, a) = attend(q_s, k_s, v_s, res, mask)?;
            let o = if scale == 1 {
                // back to the full token grid
                let ch = self.head_dim();
                let img = o.permute(&[0, 1, 4, 2, 3])?.reshape(&[n2, self.channels, rows, width])?;
                img.bilinear_resize(h, w)?
                    .reshape(&[n2, self.heads, ch, h, w])?
                    .permute(&[0, 1, 3, 4, 2])?
            } else {
                o
            };
            outs.push(o);
            alphas[scale] = Some(a);
        }
        let cat = Var::concat(&outs, 4)?
            .permute(&[0, 2, 3, 1, 4])?
            .reshape(&[n2, h, w, 2 * self.channels])?;
        let vo = self.wo.forward(p, cat)?;
        let ff = self.ff_in.forward(p, x.add(vo)?)?;
        let ff = to_nhwc(self.ff_dw.forward(p, to_nchw(ff)?)?)?.gelu();
        let out = x.add(self.ff_out.forward(p, ff)?)?;
        Ok((out, alphas))
    }
}

#[derive(Clone, Debug)]
enum BlockKind {
    /// Channels split: first half cross, second half self.
    Split { cross: AttnUnit, selfa: AttnUnit },
    Cross(AttnUnit),
    SelfOnly(AttnUnit),
}

#[derive(Clone, Debug)]
struct Block {
    kind: BlockKind,
    channels: usize,
}

/// Attention weights threaded from block to block.
#[derive(Clone, Copy, Default)]
pub struct BlockResiduals<'t, F: Element> {
    pub cross: Residuals<'t, F>,
    pub selfa: Residuals<'t, F>,
}

impl Block {
    fn forward<'t, F: Element>(
        &self,
        p: &Bound<'t, F>,
        x: Var<'t, F>,
        res: &mut BlockResiduals<'t, F>,
        masked: bool,
    ) -> Result<Var<'t, F>> {
        match &self.kind {
            BlockKind::Split { cross, selfa } => {
                let half = self.channels / 2;
                let (xc, a_c) = cross.forward(p, x.narrow(3, 0, half)?, true, &res.cross, masked)?;
                let (xs, a_s) = selfa.forward(p, x.narrow(3, half, half)?, false, &res.selfa, false)?;
                res.cross = a_c;
                res.selfa = a_s;
                Ok(Var::concat(&[xc, xs], 3)?)
            }
            BlockKind::Cross(u) => {
                let (y, a) = u.forward(p, x, true, &res.cross, masked)?;
                res.cross = a;
                Ok(y)
            }
            BlockKind::SelfOnly(u) => {
                let (y, a) = u.forward(p, x, false, &res.selfa, false)?;
                res.selfa = a;
                Ok(y)
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Resample {
    None,
    Down(Linear),
    Up(Linear),
}

#[derive(Clone, Debug)]
pub struct Transformer {
    pub config: DmaConfig,
    pub channels: usize,
    blocks: Vec<Block>,
    between: Vec<Resample>,
    match_q: Linear,
    match_k: Linear,
}

/// Transformer outputs for a batch of `n` stereo pairs.
pub struct TransformerOutput<'t, F: Element> {
    /// Left-query matching volume `[n, H/4, W/4, W/4]`, masked to
    /// `x_l - max_offset <= x_r <= x_l`.
    pub volume: Var<'t, F>,
    /// Final stacked tokens `[2n, H/4, W/4, C]`.
    pub tokens: Var<'t, F>,
    /// Cross-attention weights of the last block, stacked views.
    pub last_cross: Var<'t, F>,
}

impl Transformer {
    pub fn new<F: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        config: &DmaConfig,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(channels)?;
        let widths = config.widths(channels);
        let mut blocks = Vec::with_capacity(config.blocks);
        for (i, &c) in widths.iter().enumerate() {
            let name = format!("dma.b{i}");
            let kind = if config.split_heads {
                BlockKind::Split {
                    cross: AttnUnit::new(store, &format!("{name}.cross"), c / 2, config.heads / 2, rng)?,
                    selfa: AttnUnit::new(store, &format!("{name}.self"), c / 2, config.heads / 2, rng)?,
                }
            } else if i % 2 == 1 {
                BlockKind::Cross(AttnUnit::new(store, &format!("{name}.cross"), c, config.heads, rng)?)
            } else {
                BlockKind::SelfOnly(AttnUnit::new(store, &format!("{name}.self"), c, config.heads, rng)?)
            };
            blocks.push(Block { kind, channels: c });
        }
        let mut between = Vec::with_capacity(config.blocks);
        for b in 1..=config.blocks {
            let c = widths[b - 1];
            between.push(if Some(b) == config.down_after {
                Resample::Down(Linear::new(store, &format!("dma.down{b}"), 4 * c, 2 * c, rng)?)
            } else if Some(b) == config.up_after {
                Resample::Up(Linear::new(store, &format!("dma.up{b}"), c, 2 * c, rng)?)
            } else {
                Resample::None
            });
        }
        Ok(Self {
            config: config.clone(),
            channels,
            blocks,
            between,
            match_q: Linear::new(store, "dma.match_q", channels, channels, rng)?,
            match_k: Linear::new(store, "dma.match_k", channels, channels, rng)?,
        })
    }

    /// Runs all blocks on left/right tokens `[n, H, W, C]` and emits the
    /// left-query matching volume.
    pub fn forward<'t, F: Element>(
        &self,
        p: &Bound<'t, F>,
        left: Var<'t, F>,
        right: Var<'t, F>,
    ) -> Result<TransformerOutput<'t, F>> {
        let n = left.shape()[0];
        let mut x = Var::concat(&[left, right], 0)?;
        let mut res = BlockResiduals::default();
        let last = self.blocks.len() - 1;
        // fine tokens skip over the coarse blocks, otherwise the matcher
        // only sees what survived the 4C -> 2C squeeze
        let mut skip = None;
        for (i, (block, step)) in self.blocks.iter().zip(&self.between).enumerate() {
            x = block.forward(p, x, &mut res, i == last)?;
            x = match step {
                Resample::None => x,
                Resample::Down(l) => {
                    skip = Some(x);
                    l.forward(p, space_to_depth(x)?)?
                }
                Resample::Up(l) => {
                    let up = depth_to_space(l.forward(p, x)?)?;
                    match skip.take() {
                        Some(s) => up.add(s)?,
                        None => up,
                    }
                }
            };
        }
        let last_cross = res.cross[0].expect("last block is a cross block");
        let s = x.shape();
        let w = s[2];
        let q = self.match_q.forward(p, x.narrow(0, 0, n)?)?;
        let k = self.match_k.forward(p, x.narrow(0, n, n)?)?;
        let prior = last_cross.narrow(0, 0, n)?.mean_axis(1, false)?;
        let logits = q
            .matmul(k.permute(&[0, 1, 3, 2])?)?
            .mul_scalar(F::one() / F::from_usize(self.channels).sqrt())
            .add(prior)?
            .add(x.tape().constant(band_mask(w, self.config.max_offset)))?;
        Ok(TransformerOutput {
            volume: logits.softmax_lastdim()?,
            tokens: x,
            last_cross,
        })
    }
}
