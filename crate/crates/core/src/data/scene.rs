//! Procedural binocular scenes: a textured curved surface (real face) or a
//! textured tilted plane (print attack), rendered with exact disparity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pairs::{sample_rel_pairs, RelPair};
use super::teacher::make_teacher_depth;
use crate::error::DataError;
use crate::map::Map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Attack,
    Real,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Attack => 0,
            Label::Real => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Attack),
            1 => Some(Label::Real),
            _ => None,
        }
    }
}

/// Texture contrast level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    Low,
    Mid,
    High,
}

impl Illumination {
    pub const ALL: [Illumination; 3] = [Illumination::Low, Illumination::Mid, Illumination::High];

    pub fn contrast(self) -> f64 {
        match self {
            Illumination::Low => 0.15,
            Illumination::Mid => 0.3,
            Illumination::High => 0.45,
        }
    }
}

/// Global disparity offset level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Near,
    Far,
}

impl Distance {
    pub const ALL: [Distance; 2] = [Distance::Near, Distance::Far];

    /// Base disparity in pixels at 64 px width.
    fn base(self) -> f64 {
        match self {
            Distance::Near => 2.5,
            Distance::Far => 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub label: Label,
    pub illumination: Illumination,
    pub distance: Distance,
    /// Peak height of the face bump in pixels; defaults to `width / 16`.
    pub bump_amplitude: Option<f64>,
    /// Relative-depth pairs drawn per sample.
    pub pairs: usize,
    pub tau: f64,
}

impl SceneParams {
    pub fn new(height: usize, width: usize, label: Label) -> Self {
        Self {
            height,
            width,
            label,
            illumination: Illumination::Mid,
            distance: Distance::Near,
            bump_amplitude: None,
            pairs: 256,
            tau: 0.02,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        let (h, w) = (self.height, self.width);
        if h < 32 || w < 32 || h % 8 != 0 || w % 8 != 0 {
            return Err(DataError::Scene(format!(
                "size {h}x{w} must be at least 32x32 and a multiple of 8"
            )));
        }
        if self.pairs == 0 || !(self.tau > 0.0) {
            return Err(DataError::Scene("pairs must be >= 1 and tau > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StereoSample {
    pub left: Map,
    pub right: Map,
    /// Left-referenced disparity: `left(x, y)` sees `right(x - d, y)`.
    pub disparity: Map,
    /// 1 inside the foreground surface, 0 elsewhere.
    pub foreground: Map,
    pub teacher: Map,
    pub pairs: Vec<RelPair>,
    pub label: Label,
    pub illumination: Illumination,
    pub distance: Distance,
}

/// Per-sample seed: content depends only on `(global, index)`.
pub fn sample_seed(global: u64, index: u64) -> u64 {
    let mut z = global ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Wave {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

/// Sum of random sinusoids with spatial periods between 6 and 20 pixels.
fn texture(rng: &mut ChaCha8Rng, contrast: f64) -> impl Fn(f64, f64) -> f64 {
    let mut waves: Vec<Wave> = (0..12)
        .map(|_| {
            let period = rng.gen_range(6.0..20.0);
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            Wave {
                amp: rng.gen_range(0.3..1.0),
                fx: theta.cos() / period,
                fy: theta.sin() / period,
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.amp).sum();
    for w in &mut waves {
        w.amp /= total;
    }
    move |u, y| {
        let s: f64 = waves
            .iter()
            .map(|w| w.amp * (std::f64::consts::TAU * (w.fx * u + w.fy * y) + w.phase).sin())
            .sum();
        0.5 + contrast * s
    }
}

/// Disparity field and foreground mask for one scene.
fn geometry(rng: &mut ChaCha8Rng, p: &SceneParams) -> (Map, Map) {
    let (h, w) = (p.height, p.width);
    let s = w as f64 / 64.0;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    match p.label {
        Label::Real => {
            let base = s * (p.distance.base() + rng.gen_range(0.0..0.5));
            let gx = rng.gen_range(-0.005..0.005);
            let gy = rng.gen_range(-0.005..0.005);
            let amp = p.bump_amplitude.unwrap_or(4.0 * s) * rng.gen_range(0.9..1.1);
            let ex = cx + rng.gen_range(-1.0..1.0) * w as f64 / 16.0;
            let ey = cy + rng.gen_range(-1.0..1.0) * h as f64 / 16.0;
            let ax = rng.gen_range(0.25..0.35) * w as f64;
            let ay = rng.gen_range(0.3..0.4) * h as f64;
            let r2 = |x: usize, y: usize| {
                let u = (x as f64 - ex) / ax;
                let v = (y as f64 - ey) / ay;
                u * u + v * v
            };
            let disp = Map::from_fn(h, w, |x, y| {
                let plane = base + gx * (x as f64 - cx) + gy * (y as f64 - cy);
                let bump = (1.0 - r2(x, y)).max(0.0).powf(1.5);
                (plane + amp * bump) as f32
            });
            let fg = Map::from_fn(h, w, |x, y| if r2(x, y) < 1.0 { 1.0 } else { 0.0 });
            (disp, fg)
        }
        Label::Attack => {
            let base = s * (p.distance.base() + 1.5 + rng.gen_range(0.0..0.5));
            let gx = rng.gen_range(-1.5..1.5) * s / cx;
            let gy = rng.gen_range(-1.5..1.5) * s / cy;
            let disp = Map::from_fn(h, w, |x, y| {
                (base + gx * (x as f64 - cx) + gy * (y as f64 - cy)) as f32
            });
            (disp, Map::from_fn(h, w, |_, _| 1.0))
        }
    }
}

/// Linear sample of `row` at `u`, clamped to the row, using exactly the
/// arithmetic of the differentiable horizontal warp.
pub fn sample_row(row: &[f32], u: f32) -> f32 {
    let w = row.len();
    let u = u.max(0.0).min((w - 1) as f32);
    let i0 = (u.floor() as usize).min(w.saturating_sub(2));
    let t = u - i0 as f32;
    let i1 = (i0 + 1).min(w - 1);
    row[i0] + t * (row[i1] - row[i0])
}

/// Renders one scene.
///
/// The right view is the texture on the integer pixel grid. Each left pixel
/// is the linear sample of its right row at `x - d`. Surface points left of
/// the right camera's field of view carry the texture of its first column,
/// so the border band is consistent with clamp-to-border warping.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<StereoSample, DataError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (params.height, params.width);
    let (disparity, foreground) = geometry(&mut rng, params);
    let (dmin, dmax) = disparity.min_max();
    if dmin < 0.0 || dmax as f64 >= w as f64 / 4.0 {
        return Err(DataError::Scene(format!(
            "disparity range [{dmin}, {dmax}] outside [0, {})",
            w / 4
        )));
    }
    let tex = texture(&mut rng, params.illumination.contrast());
    let right = Map::from_fn(h, w, |x, y| tex(x as f64, y as f64).clamp(0.0, 1.0) as f32);
    let mut left = Map::zeros(h, w);
    for y in 0..h {
        let row = &right.data[y * w..(y + 1) * w];
        for x in 0..w {
            left.set(x, y, sample_row(row, x as f32 - disparity.get(x, y)));
        }
    }
    let teacher = make_teacher_depth(&disparity, &foreground)?;
    let pairs = sample_rel_pairs(&teacher, params.pairs, params.tau, rng.gen());
    Ok(StereoSample {
        left,
        right,
        disparity,
        foreground,
        teacher,
        pairs,
        label: params.label,
        illumination: params.illumination,
        distance: params.distance,
    })
}

/// Rounds image values to the 8-bit grid used on disk.
pub fn quantize(m: &Map) -> Map {
    Map::new(
        m.height,
        m.width,
        m.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::plane_fit_residual;

    fn scene(label: Label, seed: u64) -> StereoSample {
        generate_scene(seed, &SceneParams::new(64, 64, label)).unwrap()
    }

    #[test]
    fn attack_disparity_is_planar() {
        for seed in 0..10 {
            let s = scene(Label::Attack, seed);
            assert!(plane_fit_residual(&s.disparity, None) < 1e-3);
        }
    }

    #[test]
    fn real_disparity_is_curved() {
        for seed in 0..10 {
            let s = scene(Label::Real, seed);
            assert!(plane_fit_residual(&s.disparity, None) > 1.0);
        }
    }

    #[test]
    fn left_is_linear_sample_of_right() {
        let s = scene(Label::Real, 3);
        for y in 0..64 {
            let row = &s.right.data[y * 64..(y + 1) * 64];
            for x in 0..64 {
                let u = x as f32 - s.disparity.get(x, y);
                assert_eq!(s.left.get(x, y), sample_row(row, u));
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = scene(Label::Real, 11);
        let b = scene(Label::Real, 11);
        assert_eq!(a.left, b.left);
        assert_eq!(a.pairs, b.pairs);
        assert_ne!(a.left, scene(Label::Real, 12).left);
    }

    #[test]
    fn bad_sizes_rejected() {
        assert!(generate_scene(0, &SceneParams::new(60, 64, Label::Real)).is_err());
        assert!(generate_scene(0, &SceneParams::new(16, 16, Label::Real)).is_err());
    }

    #[test]
    fn oversized_disparity_rejected() {
        let mut p = SceneParams::new(64, 64, Label::Real);
        p.bump_amplitude = Some(20.0);
        assert!(matches!(generate_scene(0, &p), Err(DataError::Scene(_))));
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(sample_seed(0, 0), sample_seed(0, 1));
        assert_ne!(sample_seed(0, 1), sample_seed(1, 0));
    }
}
