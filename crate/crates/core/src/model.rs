//! The full network: shared feature extractor, matching transformer,
//! disparity head and confidence generator in one parameter store.
//! Parameter names are prefixed `fe.`, `dma.`, `disp.` (disparity stage) and
//! `cmg.` (classification stage).

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sfas_autograd::{Bound, ParamStore, Var};

use crate::checkpoint;
use crate::cmg::{CmgConfig, CmgOutput, ConfidenceGenerator};
use crate::disparity::{DisparityOutput, Refiner};
use crate::dma::{DmaConfig, Transformer};
use crate::error::{CheckpointError, Error, Result};
use crate::features::FeatureExtractor;

/// Prefixes of the parameters trained in the disparity stage.
pub const DISPARITY_PREFIXES: [&str; 3] = ["fe.", "dma.", "disp."];
pub const CLASSIFIER_PREFIX: &str = "cmg.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Token channels.
    pub channels: usize,
    pub dma: DmaConfig,
    pub refine_blocks: usize,
    pub cmg: CmgConfig,
    /// Image size the model is trained for.
    pub height: usize,
    pub width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            dma: DmaConfig::default(),
            refine_blocks: 2,
            cmg: CmgConfig::default(),
            height: 64,
            width: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height % 16 != 0 || self.width % 16 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be a positive multiple of 16",
                self.height, self.width
            )));
        }
        if self.channels == 0 || self.channels % 2 != 0 {
            return Err(Error::Config(format!("channels {} must be even", self.channels)));
        }
        self.dma.validate(self.channels)
    }
}

pub struct StereoModel {
    pub config: ModelConfig,
    pub store: ParamStore<f32>,
    pub features: FeatureExtractor,
    pub transformer: Transformer,
    pub refiner: Refiner,
    pub cmg: ConfidenceGenerator,
}

pub struct DisparityPass<'t> {
    pub disparity: DisparityOutput<'t, f32>,
    /// Left-query matching volume `[N, H/4, W/4, W/4]`.
    pub volume: Var<'t, f32>,
}

impl StereoModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let features = FeatureExtractor::new(&mut store, config.channels, &mut rng)?;
        let transformer = Transformer::new(&mut store, &config.dma, config.channels, &mut rng)?;
        let refiner = Refiner::new(&mut store, config.refine_blocks, &mut rng)?;
        let cmg = ConfidenceGenerator::new(&mut store, &config.cmg, &mut rng)?;
        cmg.check_input(config.height, config.width)?;
        Ok(Self { config: config.clone(), store, features, transformer, refiner, cmg })
    }

    /// `left`, `right` are `[N, 1, H, W]`.
    pub fn disparity<'t>(&self, p: &Bound<'t, f32>, left: Var<'t, f32>, right: Var<'t, f32>) -> Result<DisparityPass<'t>> {
        let s = left.shape();
        if s != right.shape() || s.len() != 4 || s[2] != self.config.height || s[3] != self.config.width {
            return Err(Error::Config(format!(
                "model expects two [N, 1, {}, {}] views, got {s:?} and {:?}",
                self.config.height,
                self.config.width,
                right.shape()
            )));
        }
        let (fl, fr) = self.features.extract(p, left, right)?;
        let out = self.transformer.forward(p, fl, fr)?;
        let disparity = self.refiner.forward(p, out.volume, s[2], s[3])?;
        Ok(DisparityPass { disparity, volume: out.volume })
    }

    pub fn classify<'t>(&self, p: &Bound<'t, f32>, refined: Var<'t, f32>, left: Var<'t, f32>) -> Result<CmgOutput<'t, f32>> {
        self.cmg.forward(p, refined, left)
    }

    /// Freezes everything except the parameters under `prefixes`.
    pub fn train_only(&mut self, prefixes: &[&str]) {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            let on = prefixes.iter().any(|p| self.store.name(id).starts_with(p));
            self.store.set_trainable(id, on);
        }
    }

    /// Writes the weights and a `<path>.json` sidecar with the config.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store)?;
        let side = sidecar(path);
        let json = serde_json::to_string_pretty(&self.config).expect("config serialises");
        std::fs::write(&side, json).map_err(|source| CheckpointError::Io { path: side, source })?;
        Ok(())
    }

    /// Rebuilds the model from its sidecar config and loads the weights.
    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar(path);
        let text = std::fs::read_to_string(&side).map_err(|source| CheckpointError::Io { path: side.clone(), source })?;
        let config: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| CheckpointError::Config(format!("{}: {e}", side.display())))?;
        let mut model = Self::new(&config, 0).map_err(|e| CheckpointError::Config(e.to_string()))?;
        checkpoint::load_params(&mut model.store, checkpoint::read(path)?)?;
        Ok(model)
    }

    /// Copies the stage-1 weights (feature extractor, transformer, refiner)
    /// from a checkpoint; the classifier keeps its current values.
    pub fn load_disparity(&mut self, path: &Path) -> Result<()> {
        checkpoint::load_prefixed(&mut self.store, checkpoint::read(path)?, &DISPARITY_PREFIXES)?;
        Ok(())
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfas_autograd::{Tape, Tensor};

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ifw");
        let m = StereoModel::new(&ModelConfig::default(), 3).unwrap();
        m.save(&path).unwrap();
        let back = StereoModel::load(&path).unwrap();
        assert_eq!(checkpoint::encode(&back.store), checkpoint::encode(&m.store));
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn forward_shapes() {
        let m = StereoModel::new(&ModelConfig::default(), 1).unwrap();
        let tape = Tape::new();
        let p = m.store.bind(&tape);
        let l = tape.constant(Tensor::from_fn(&[1, 1, 64, 64], |i| ((i * 7) % 13) as f32 / 13.0));
        let pass = m.disparity(&p, l, l).unwrap();
        assert_eq!(pass.volume.shape(), vec![1, 16, 16, 16]);
        assert_eq!(pass.disparity.refined.shape(), vec![1, 1, 64, 64]);
        let c = m.classify(&p, pass.disparity.refined, l).unwrap();
        assert_eq!(c.map.shape(), vec![1, 2, 64, 64]);
    }

    #[test]
    fn bad_sizes_rejected() {
        let cfg = ModelConfig { height: 48, ..Default::default() };
        assert!(StereoModel::new(&cfg, 0).is_err());
    }
}
