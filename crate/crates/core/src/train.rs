//! Two-stage training, evaluation and inference.
//!
//! Stage 1 fits the disparity network (features, transformer, disparity
//! head) with the relative-order, reconstruction and smoothness losses.
//! Stage 2 freezes it and fits the confidence generator on the refined
//! disparity maps with the focal map, triplet and focal classification
//! losses.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sfas_autograd::{Adam, AdamConfig, Tape, Var};

use crate::data::{sample_rel_pairs, Label, LoadedSample};
use crate::error::{Error, Result};
use crate::losses::{self, LossBundle, LossWeights};
use crate::map::{stack, Map};
use crate::metrics::{self, Scored};
use crate::model::{ModelConfig, StereoModel, CLASSIFIER_PREFIX, DISPARITY_PREFIXES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    /// Longer schedules (about 1600 steps) are closer to the original
    /// recipe; 400 fits the desk-scale budget.
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Point pairs drawn per sample and step.
    pub pairs: usize,
    /// Teacher difference below which a pair is labelled "equal".
    pub tau: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { steps: 400, lr: 1e-4, batch: 8, pairs: 256, tau: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    /// About 3000 steps with batch 50 at full scale.
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub margin: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self { steps: 600, lr: 1e-4, batch: 8, margin: 0.3, gamma: 2.0, alpha: 0.5 }
    }
}

/// Switches for the ablation experiments. Each one removes exactly one
/// component.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub no_relative_loss: bool,
    pub no_dma_split: bool,
    pub no_updown: bool,
    pub cmg_non_gated: bool,
    pub cmg_disparity_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: PathBuf,
    /// Checkpoints and logs go here.
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            manifest: PathBuf::from("data/manifest.jsonl"),
            out_dir: PathBuf::from("runs"),
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The model config and loss weights with the ablation switches applied.
    pub fn effective(&self) -> Result<(ModelConfig, LossWeights)> {
        let a = &self.ablation;
        if a.cmg_non_gated && a.cmg_disparity_only {
            return Err(Error::Config("cmg_non_gated and cmg_disparity_only are exclusive".into()));
        }
        let mut m = self.model.clone();
        let mut w = self.weights.clone();
        if a.no_relative_loss {
            w.relative = 0.0;
        }
        if a.no_dma_split {
            m.dma.split_heads = false;
        }
        if a.no_updown {
            m.dma.down_after = None;
            m.dma.up_after = None;
        }
        if a.cmg_non_gated {
            m.cmg.mode = crate::cmg::CmgMode::NonGated;
        }
        if a.cmg_disparity_only {
            m.cmg.mode = crate::cmg::CmgMode::DisparityOnly;
        }
        let ws = [w.relative, w.reconstruction, w.smoothness, w.focal_map, w.triplet, w.classification];
        if ws.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {ws:?}")));
        }
        for (name, s) in [("stage1", (self.stage1.steps, self.stage1.batch, self.stage1.lr)), ("stage2", (self.stage2.steps, self.stage2.batch, self.stage2.lr))] {
            if s.1 == 0 || !(s.2 > 0.0) {
                return Err(Error::Config(format!("{name}: batch and lr must be positive")));
            }
        }
        m.validate()?;
        Ok((m, w))
    }
}

/// Epoch-wise shuffled batches of sample indices.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl Batches {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), order: (0..n).collect(), pos: n, batch: batch.min(n) }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

fn images<'t>(tape: &'t Tape<f32>, maps: &[&Map]) -> Var<'t, f32> {
    tape.constant(stack(maps))
}

fn check_samples(samples: &[LoadedSample], cfg: &ModelConfig) -> Result<()> {
    if samples.is_empty() {
        return Err(crate::error::DataError::Scene("no training samples".into()).into());
    }
    for s in samples {
        if s.left.dims() != (cfg.height, cfg.width) {
            return Err(Error::Config(format!(
                "sample {} is {}x{}, model expects {}x{}",
                s.id, s.left.height, s.left.width, cfg.height, cfg.width
            )));
        }
    }
    Ok(())
}

fn weighted<'t>(terms: &[(&'static str, f64, Option<Var<'t, f32>>)]) -> Result<(LossBundle, Var<'t, f32>)> {
    let mut total: Option<Var<'t, f32>> = None;
    let mut bundle = LossBundle::default();
    for (name, w, v) in terms {
        let value = v.map_or(0.0, |v| f64::from(v.item()));
        bundle.terms.push((name, value));
        if let Some(v) = v {
            let t = v.mul_scalar(*w as f32);
            bundle.total += w * value;
            total = Some(match total {
                Some(acc) => acc.add(t)?,
                None => t,
            });
        }
    }
    let total = total.ok_or_else(|| Error::Config("every loss term of the stage is disabled".into()))?;
    if !bundle.total.is_finite() {
        return Err(Error::Config(format!("non-finite loss {:?}", bundle.terms)));
    }
    Ok((bundle, total))
}

fn log_row(log: &mut dyn Write, step: usize, b: &LossBundle) -> Result<()> {
    let mut line = step.to_string();
    for (_, v) in &b.terms {
        line.push_str(&format!(",{v}"));
    }
    writeln!(log, "{line},{}", b.total).map_err(|source| Error::Io { path: "<log>".into(), source })
}

fn log_header(log: &mut dyn Write, names: &[&str]) -> Result<()> {
    writeln!(log, "step,{},total", names.join(",")).map_err(|source| Error::Io { path: "<log>".into(), source })
}

/// Stage-1 losses of one batch.
pub fn disparity_losses<'t>(
    model: &StereoModel,
    p: &sfas_autograd::Bound<'t, f32>,
    batch: &[&LoadedSample],
    weights: &LossWeights,
    cfg: &Stage1Config,
    pair_seed: u64,
) -> Result<(LossBundle, Var<'t, f32>)> {
    let tape = p.var(model.store.ids().next().expect("parameters")).tape();
    let lefts: Vec<&Map> = batch.iter().map(|s| &s.left).collect();
    let rights: Vec<&Map> = batch.iter().map(|s| &s.right).collect();
    let (left, right) = (images(tape, &lefts), images(tape, &rights));
    let pass = model.disparity(p, left, right)?;
    let d = &pass.disparity;
    let (n, h, w) = (batch.len(), model.config.height, model.config.width);
    let rel = if weights.relative > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
        let pairs: Vec<_> = batch
            .iter()
            .map(|s| sample_rel_pairs(&s.teacher, cfg.pairs, cfg.tau, rng.gen()))
            .collect();
        let teachers: Vec<&Map> = batch.iter().map(|s| &s.teacher).collect();
        let l = losses::relative_disparity_loss(d.refined, &pairs, &teachers)?;
        Some(l.mul_scalar(1.0 / (n * cfg.pairs) as f32))
    } else {
        None
    };
    let rec = if weights.reconstruction > 0.0 {
        Some(losses::reconstruction_loss(left, losses::reconstruct_left(right, d.pixels)?)?)
    } else {
        None
    };
    let smooth = if weights.smoothness > 0.0 {
        Some(losses::smoothness_loss(d.refined, left)?.mul_scalar(1.0 / (n * h * w) as f32))
    } else {
        None
    };
    weighted(&[
        ("relative", weights.relative, rel),
        ("reconstruction", weights.reconstruction, rec),
        ("smoothness", weights.smoothness, smooth),
    ])
}

/// Builds the model and runs stage 1. Per-step losses go to `log` as CSV.
pub fn train_disparity(cfg: &TrainConfig, samples: &[LoadedSample], log: &mut dyn Write) -> Result<StereoModel> {
    let (mcfg, weights) = cfg.effective()?;
    check_samples(samples, &mcfg)?;
    let mut model = StereoModel::new(&mcfg, cfg.seed)?;
    model.train_only(&DISPARITY_PREFIXES);
    let mut adam = Adam::new(AdamConfig { lr: cfg.stage1.lr, ..Default::default() }, &model.store);
    let mut batches = Batches::new(samples.len(), cfg.stage1.batch, cfg.seed ^ 0x5151);
    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa1a1);
    log_header(log, &["relative", "reconstruction", "smoothness"])?;
    for step in 0..cfg.stage1.steps {
        let batch: Vec<&LoadedSample> = batches.next().into_iter().map(|i| &samples[i]).collect();
        let tape = Tape::new();
        let p = model.store.bind(&tape);
        let (bundle, total) = disparity_losses(&model, &p, &batch, &weights, &cfg.stage1, pair_rng.gen())?;
        let grads = p.collect_grads(&model.store, &tape.backward(total)?);
        drop(p);
        drop(tape);
        adam.step(&mut model.store, &grads)?;
        log_row(log, step, &bundle)?;
    }
    Ok(model)
}

/// Frozen stage-1 outputs for a set of samples.
#[derive(Clone, Debug)]
pub struct DisparityMaps {
    /// Refined relative disparity in (0, 1).
    pub refined: Vec<Map>,
    /// Raw disparity up-sampled to pixels.
    pub pixels: Vec<Map>,
}

const INFER_BATCH: usize = 8;

pub fn predict_disparity(model: &StereoModel, samples: &[(&Map, &Map)]) -> Result<DisparityMaps> {
    let mut out = DisparityMaps { refined: Vec::new(), pixels: Vec::new() };
    for chunk in samples.chunks(INFER_BATCH) {
        let tape = Tape::new();
        let p = model.store.bind(&tape);
        let l: Vec<&Map> = chunk.iter().map(|s| s.0).collect();
        let r: Vec<&Map> = chunk.iter().map(|s| s.1).collect();
        let pass = model.disparity(&p, images(&tape, &l), images(&tape, &r))?;
        let (rv, pv) = (pass.disparity.refined.value(), pass.disparity.pixels.value());
        for i in 0..chunk.len() {
            out.refined.push(Map::from_tensor(&rv, i));
            out.pixels.push(Map::from_tensor(&pv, i));
        }
    }
    Ok(out)
}

fn pairs_of(samples: &[LoadedSample]) -> Vec<(&Map, &Map)> {
    samples.iter().map(|s| (&s.left, &s.right)).collect()
}

/// Stage-2 losses of one batch given precomputed refined maps.
pub fn classifier_losses<'t>(
    model: &StereoModel,
    p: &sfas_autograd::Bound<'t, f32>,
    refined: &[&Map],
    batch: &[&LoadedSample],
    weights: &LossWeights,
    cfg: &Stage2Config,
) -> Result<(LossBundle, Var<'t, f32>)> {
    let tape = p.var(model.store.ids().next().expect("parameters")).tape();
    let lefts: Vec<&Map> = batch.iter().map(|s| &s.left).collect();
    let real: Vec<bool> = batch.iter().map(|s| s.label == Label::Real).collect();
    let out = model.classify(p, images(tape, refined), images(tape, &lefts))?;
    let (n, h, w) = (batch.len(), model.config.height, model.config.width);
    let focal = if weights.focal_map > 0.0 {
        let p_true = losses::true_class_margin(out.logits, &real)?.sigmoid();
        let plane = h * w;
        let pick = |true_channel: bool| -> Vec<usize> {
            (0..n)
                .flat_map(|i| {
                    let ch = usize::from(real[i] != true_channel);
                    let base = (i * 2 + ch) * plane;
                    base..base + plane
                })
                .collect()
        };
        let c_true = out.map.gather_flat(&pick(true))?.reshape(&[n, h, w])?;
        let c_other = out.map.gather_flat(&pick(false))?.reshape(&[n, h, w])?;
        let teachers: Vec<&Map> = batch.iter().map(|s| &s.teacher).collect();
        let t = stack::<f32>(&teachers).reshape(&[n, h, w])?;
        let t_c = t.map(|v| 1.0 - v);
        let a = losses::focal_map_loss(c_true, tape.constant(t), p_true)?;
        let b = losses::focal_map_loss(c_other, tape.constant(t_c), p_true)?;
        Some(a.add(b)?.mul_scalar(1.0 / (n * plane) as f32))
    } else {
        None
    };
    let triplet = if weights.triplet > 0.0 {
        Some(losses::triplet_loss(out.features, &real, cfg.margin)?.mul_scalar(1.0 / n as f32))
    } else {
        None
    };
    let cls = if weights.classification > 0.0 {
        Some(losses::focal_classification_loss(out.logits, &real, cfg.gamma, cfg.alpha)?)
    } else {
        None
    };
    weighted(&[
        ("focal_map", weights.focal_map, focal),
        ("triplet", weights.triplet, triplet),
        ("classification", weights.classification, cls),
    ])
}

/// Stage 2 on top of a trained disparity network, whose weights stay
/// frozen.
pub fn train_classifier(
    cfg: &TrainConfig,
    model: &mut StereoModel,
    samples: &[LoadedSample],
    log: &mut dyn Write,
) -> Result<()> {
    let (_, weights) = cfg.effective()?;
    check_samples(samples, &model.config)?;
    let maps = predict_disparity(model, &pairs_of(samples))?;
    model.train_only(&[CLASSIFIER_PREFIX]);
    let mut adam = Adam::new(AdamConfig { lr: cfg.stage2.lr, ..Default::default() }, &model.store);
    let mut batches = Batches::new(samples.len(), cfg.stage2.batch, cfg.seed ^ 0x5252);
    log_header(log, &["focal_map", "triplet", "classification"])?;
    for step in 0..cfg.stage2.steps {
        let idx = batches.next();
        let batch: Vec<&LoadedSample> = idx.iter().map(|&i| &samples[i]).collect();
        let refined: Vec<&Map> = idx.iter().map(|&i| &maps.refined[i]).collect();
        let tape = Tape::new();
        let p = model.store.bind(&tape);
        let (bundle, total) = classifier_losses(model, &p, &refined, &batch, &weights, &cfg.stage2)?;
        let grads = p.collect_grads(&model.store, &tape.backward(total)?);
        drop(p);
        drop(tape);
        adam.step(&mut model.store, &grads)?;
        log_row(log, step, &bundle)?;
    }
    Ok(())
}

/// Per-sample inference output.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub score: f64,
    pub refined: Map,
    pub pixels: Map,
    /// Real and attack confidence channels.
    pub confidence: [Map; 2],
}

pub fn predict(model: &StereoModel, samples: &[(&Map, &Map)]) -> Result<Vec<Prediction>> {
    let maps = predict_disparity(model, samples)?;
    let mut out = Vec::with_capacity(samples.len());
    for (c, chunk) in samples.chunks(INFER_BATCH).enumerate() {
        let tape = Tape::new();
        let p = model.store.bind(&tape);
        let idx: Vec<usize> = (c * INFER_BATCH..c * INFER_BATCH + chunk.len()).collect();
        let refined: Vec<&Map> = idx.iter().map(|&i| &maps.refined[i]).collect();
        let lefts: Vec<&Map> = chunk.iter().map(|s| s.0).collect();
        let o = model.classify(&p, images(&tape, &refined), images(&tape, &lefts))?;
        let (scores, m) = (o.scores(), o.map.value());
        let (h, w) = (model.config.height, model.config.width);
        for (k, &i) in idx.iter().enumerate() {
            let plane = |ch: usize| {
                let base = (k * 2 + ch) * h * w;
                Map::new(h, w, m.data()[base..base + h * w].to_vec())
            };
            out.push(Prediction {
                score: scores[k],
                refined: maps.refined[i].clone(),
                pixels: maps.pixels[i].clone(),
                confidence: [plane(0), plane(1)],
            });
        }
    }
    Ok(out)
}

/// Columns dropped on the left edge before the planarity fit: there the
/// left view sees past the right image border.
pub fn probe_margin(width: usize) -> usize {
    width / 8
}

/// Planarity-probe residual of a predicted pixel-scale disparity map.
pub fn disparity_planarity(pixels: &Map) -> f64 {
    let m = probe_margin(pixels.width);
    let mask = Map::from_fn(pixels.height, pixels.width, |x, _| if x >= m { 1.0 } else { 0.0 });
    metrics::planarity_probe(pixels, Some(&mask))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub auc: f64,
    pub eer: f64,
    /// True-positive rate keyed by the FPR target.
    pub tpr: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleResult {
    pub id: String,
    pub label: u8,
    pub score: f64,
    pub planarity: f64,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub samples: Vec<SampleResult>,
    pub predictions: Vec<Prediction>,
    pub scored: Vec<Scored>,
}

pub fn evaluate(model: &StereoModel, samples: &[LoadedSample], fpr: &[f64], threshold: f64) -> Result<Evaluation> {
    check_samples(samples, &model.config)?;
    let predictions = predict(model, &pairs_of(samples))?;
    let scored: Vec<Scored> = predictions
        .iter()
        .zip(samples)
        .map(|(p, s)| (p.score, s.label == Label::Real))
        .collect();
    let metric = |e: metrics::MetricError| Error::Config(format!("metrics: {e}"));
    let tprs = metrics::tpr_at_fpr(&scored, fpr).map_err(metric)?;
    let report = EvalReport {
        acc: metrics::acc(&scored, threshold).map_err(metric)?,
        auc: metrics::auc(&scored).map_err(metric)?,
        eer: metrics::eer(&scored).map_err(metric)?,
        tpr: fpr.iter().zip(tprs).map(|(f, t)| (f.to_string(), t)).collect(),
    };
    let results = predictions
        .iter()
        .zip(samples)
        .map(|(p, s)| SampleResult {
            id: s.id.clone(),
            label: s.label.as_u8(),
            score: p.score,
            planarity: disparity_planarity(&p.pixels),
        })
        .collect();
    Ok(Evaluation { report, samples: results, predictions, scored })
}
