//! Confidence-map generator: a disparity branch and an image branch, fused
//! by a multiplicative gate, producing a two-channel confidence map
//! (channel 0 real, channel 1 attack) and class logits.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sfas_autograd::{Bound, Element, ParamStore, Var};

use crate::error::{Error, Result};
use crate::nn::{space_to_depth, to_nchw, to_nhwc, Conv, Linear, ResBlock};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmgMode {
    #[default]
    Gated,
    /// Branches stay separate until the output layers.
    NonGated,
    /// Residual conv classifier on the disparity map alone.
    DisparityOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmgConfig {
    pub mode: CmgMode,
    pub channels: usize,
    pub window: usize,
}

impl Default for CmgConfig {
    fn default() -> Self {
        Self { mode: CmgMode::Gated, channels: 32, window: 4 }
    }
}

/// Token-mixing MLP inside non-overlapping square windows followed by a
/// per-token channel MLP, both residual.
#[derive(Clone, Debug)]
pub struct WindowMlp {
    window: usize,
    mix: Linear,
    fc1: Linear,
    fc2: Linear,
}

impl WindowMlp {
    pub fn new<F: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        window: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let t = window * window;
        Ok(Self {
            window,
            mix: Linear::new(store, &format!("{name}.mix"), t, t, rng)?,
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, 2 * channels, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), 2 * channels, channels, rng)?,
        })
    }

    /// `[N, h, w, C]` tokens; the grid must be a multiple of the window, or
    /// smaller than it (then the whole grid is one window).
    pub fn forward<'t, F: Element>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let s = x.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let ws = self.window;
        if h % ws != 0 || w % ws != 0 {
            return Err(Error::Config(format!("token grid {h}x{w} is not a multiple of window {ws}")));
        }
        let win = x
            .reshape(&[n, h / ws, ws, w / ws, ws, c])?
            .permute(&[0, 1, 3, 5, 2, 4])?
            .reshape(&[n, h / ws, w / ws, c, ws * ws])?;
        let mixed = win.add(self.mix.forward(p, win)?.gelu())?;
        let x = mixed
            .reshape(&[n, h / ws, w / ws, c, ws, ws])?
            .permute(&[0, 1, 4, 2, 5, 3])?
            .reshape(&[n, h, w, c])?;
        let y = self.fc2.forward(p, self.fc1.forward(p, x)?.gelu())?;
        Ok(x.add(y)?)
    }
}

/// Two stride-2 conv blocks and two (patch-merge + windowed MLP) stages:
/// `[N, 1, H, W]` to tokens `[N, H/16, W/16, C]`.
#[derive(Clone, Debug)]
struct Branch {
    conv1: Conv,
    conv2: Conv,
    merge: [Linear; 2],
    mlp: [WindowMlp; 2],
}

impl Branch {
    fn new<F: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        c: usize,
        window: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(store, &format!("{name}.conv1"), 1, 8, 3, 2, rng)?,
            conv2: Conv::new(store, &format!("{name}.conv2"), 8, 16, 3, 2, rng)?,
            merge: [
                Linear::new(store, &format!("{name}.merge0"), 64, c, rng)?,
                Linear::new(store, &format!("{name}.merge1"), 4 * c, c, rng)?,
            ],
            mlp: [
                WindowMlp::new(store, &format!("{name}.mlp0"), c, window, rng)?,
                WindowMlp::new(store, &format!("{name}.mlp1"), c, window, rng)?,
            ],
        })
    }

    fn forward<'t, F: Element>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let h = self.conv1.forward(p, x)?.relu();
        let mut t = to_nhwc(self.conv2.forward(p, h)?.relu())?;
        for (merge, mlp) in self.merge.iter().zip(&self.mlp) {
            t = mlp.forward(p, merge.forward(p, space_to_depth(t)?)?)?;
        }
        Ok(t)
    }
}

#[derive(Clone, Debug)]
enum Body {
    Gated {
        disp: Branch,
        image: Branch,
        post: [WindowMlp; 2],
    },
    NonGated {
        disp: Branch,
        image: Branch,
        post_disp: [WindowMlp; 2],
        post_image: [WindowMlp; 2],
    },
    DisparityOnly {
        stem: Conv,
        blocks: [ResBlock; 2],
    },
}

#[derive(Clone, Debug)]
pub struct ConfidenceGenerator {
    pub config: CmgConfig,
    body: Body,
    to_map: Linear,
    to_logits: Linear,
}

pub struct CmgOutput<'t, F: Element> {
    /// `[N, 2, H, W]` in (0, 1); channel 0 real, channel 1 attack.
    pub map: Var<'t, F>,
    /// `[N, 2]`, channel 0 real.
    pub logits: Var<'t, F>,
    /// Pooled features `[N, D]` the logits are read from.
    pub features: Var<'t, F>,
}

impl<F: Element> CmgOutput<'_, F> {
    /// Probability of the real class, `sigmoid(l_real - l_attack)`.
    pub fn scores(&self) -> Vec<f64> {
        self.logits
            .value()
            .data()
            .chunks(2)
            .map(|l| sfas_autograd::sigmoid((l[0] - l[1]).as_f64()))
            .collect()
    }
}

/// Multiplicative gate of the two branch outputs.
pub fn gate<'t, F: Element>(disp: Var<'t, F>, image: Var<'t, F>) -> Result<Var<'t, F>> {
    Ok(disp.mul(image)?)
}

fn run_blocks<'t, F: Element>(blocks: &[WindowMlp], p: &Bound<'t, F>, mut x: Var<'t, F>) -> Result<Var<'t, F>> {
    for b in blocks {
        x = b.forward(p, x)?;
    }
    Ok(x)
}

impl ConfidenceGenerator {
    pub fn new<F: Element, R: Rng + ?Sized>(store: &mut ParamStore<F>, config: &CmgConfig, rng: &mut R) -> Result<Self> {
        let c = config.channels;
        if c == 0 || config.window == 0 {
            return Err(Error::Config("confidence generator needs channels and window > 0".into()));
        }
        let ws = config.window;
        let mut post = |name: &str, rng: &mut R| -> Result<[WindowMlp; 2]> {
            Ok([
                WindowMlp::new(store, &format!("{name}0"), c, ws, rng)?,
                WindowMlp::new(store, &format!("{name}1"), c, ws, rng)?,
            ])
        };
        let (body, feat) = match config.mode {
            CmgMode::Gated => {
                let p = post("cmg.post", rng)?;
                (
                    Body::Gated {
                        disp: Branch::new(store, "cmg.disp", c, ws, rng)?,
                        image: Branch::new(store, "cmg.image", c, ws, rng)?,
                        post: p,
                    },
                    c,
                )
            }
            CmgMode::NonGated => {
                let pd = post("cmg.post_disp", rng)?;
                let pi = post("cmg.post_image", rng)?;
                (
                    Body::NonGated {
                        disp: Branch::new(store, "cmg.disp", c, ws, rng)?,
                        image: Branch::new(store, "cmg.image", c, ws, rng)?,
                        post_disp: pd,
                        post_image: pi,
                    },
                    2 * c,
                )
            }
            CmgMode::DisparityOnly => (
                Body::DisparityOnly {
                    stem: Conv::new(store, "cmg.stem", 1, 8, 3, 2, rng)?,
                    blocks: [
                        ResBlock::new(store, "cmg.res0", 8, 16, 2, rng)?,
                        ResBlock::new(store, "cmg.res1", 16, c, 2, rng)?,
                    ],
                },
                c,
            ),
        };
        Ok(Self {
            config: config.clone(),
            body,
            to_map: Linear::new(store, "cmg.to_map", feat, 2, rng)?,
            to_logits: Linear::new(store, "cmg.to_logits", feat, 2, rng)?,
        })
    }

    /// Down-sampling factor of the feature grid.
    pub fn stride(&self) -> usize {
        match self.body {
            Body::DisparityOnly { .. } => 8,
            _ => 16,
        }
    }

    /// Validates input sizes for the configured window.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let s = self.stride();
        let ws = if matches!(self.body, Body::DisparityOnly { .. }) { 1 } else { self.config.window };
        if height % (s * ws) != 0 || width % (s * ws) != 0 {
            return Err(Error::Config(format!(
                "confidence generator needs sides divisible by {}, got {height}x{width}",
                s * ws
            )));
        }
        Ok(())
    }

    /// `disparity` and `left` are `[N, 1, H, W]`.
    pub fn forward<'t, F: Element>(
        &self,
        p: &Bound<'t, F>,
        disparity: Var<'t, F>,
        left: Var<'t, F>,
    ) -> Result<CmgOutput<'t, F>> {
        let s = disparity.shape();
        if s != left.shape() || s.len() != 4 || s[1] != 1 {
            return Err(Error::Config(format!(
                "disparity {s:?} and image {:?} must both be [N, 1, H, W]",
                left.shape()
            )));
        }
        let (n, h, w) = (s[0], s[2], s[3]);
        self.check_input(h, w)?;
        let f = match &self.body {
            Body::Gated { disp, image, post } => {
                let g = gate(disp.forward(p, disparity)?, image.forward(p, left)?)?;
                run_blocks(post, p, g)?
            }
            Body::NonGated { disp, image, post_disp, post_image } => {
                let fd = run_blocks(post_disp, p, disp.forward(p, disparity)?)?;
                let fi = run_blocks(post_image, p, image.forward(p, left)?)?;
                Var::concat(&[fd, fi], 3)?
            }
            Body::DisparityOnly { stem, blocks } => {
                let mut x = stem.forward(p, disparity)?.relu();
                for b in blocks {
                    x = b.forward(p, x)?;
                }
                to_nhwc(x)?
            }
        };
        let fs = f.shape();
        let map = to_nchw(self.to_map.forward(p, f)?)?.bilinear_resize(h, w)?.sigmoid();
        let features = f.reshape(&[n, fs[1] * fs[2], fs[3]])?.mean_axis(1, false)?;
        let logits = self.to_logits.forward(p, features)?;
        Ok(CmgOutput { map, logits, features })
    }
}

/// Real iff `score >= threshold`.
pub fn classify(score: f64, threshold: f64) -> bool {
    score >= threshold
}
