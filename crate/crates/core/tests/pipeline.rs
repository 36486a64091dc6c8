use sfas_autograd::Tape;
use sfas_core::data::{generate_dataset, LoadedSample, Split};
use sfas_core::map::Map;
use sfas_core::model::StereoModel;
use sfas_core::train::*;
use sfas_core::{checkpoint, Error};

fn config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = 11;
    cfg.model.channels = 16;
    cfg.model.height = 32;
    cfg.model.width = 32;
    cfg.model.cmg.channels = 16;
    cfg.model.cmg.window = 2;
    // one fixed batch, so the loss curve is not batch noise
    cfg.stage1.batch = 8;
    cfg.stage1.pairs = 64;
    cfg.stage2.batch = 8;
    cfg
}

fn samples() -> (Vec<LoadedSample>, Vec<LoadedSample>) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(dir.path(), 8, 6, 32, 32, 2).unwrap();
    (m.load_split(Split::Train).unwrap(), m.load_split(Split::Test).unwrap())
}

fn stage1_total(model: &StereoModel, cfg: &TrainConfig, batch: &[LoadedSample]) -> f64 {
    let (_, w) = cfg.effective().unwrap();
    let refs: Vec<&LoadedSample> = batch.iter().collect();
    let tape = Tape::new();
    let p = model.store.bind(&tape);
    disparity_losses(model, &p, &refs, &w, &cfg.stage1, 99).unwrap().0.total
}

fn stage2_total(model: &StereoModel, cfg: &TrainConfig, batch: &[LoadedSample]) -> f64 {
    let (_, w) = cfg.effective().unwrap();
    let pairs: Vec<(&Map, &Map)> = batch.iter().map(|s| (&s.left, &s.right)).collect();
    let maps = predict_disparity(model, &pairs).unwrap();
    let refined: Vec<&Map> = maps.refined.iter().collect();
    let refs: Vec<&LoadedSample> = batch.iter().collect();
    let tape = Tape::new();
    let p = model.store.bind(&tape);
    classifier_losses(model, &p, &refined, &refs, &w, &cfg.stage2).unwrap().0.total
}

fn disparity_bytes(model: &StereoModel) -> Vec<(String, Vec<f32>)> {
    model
        .store
        .ids()
        .filter(|&id| !model.store.name(id).starts_with("cmg."))
        .map(|id| (model.store.name(id).to_string(), model.store.get(id).data().to_vec()))
        .collect()
}

#[test]
fn stage_one_smoke_run_lowers_the_loss() {
    let (train, _) = samples();
    let mut cfg = config();
    cfg.stage1.steps = 0;
    let init = train_disparity(&cfg, &train, &mut Vec::new()).unwrap();
    cfg.stage1.steps = 20;
    let mut log = Vec::new();
    let trained = train_disparity(&cfg, &train, &mut log).unwrap();
    let log = String::from_utf8(log).unwrap();
    assert_eq!(log.lines().count(), 21);
    for row in log.lines().skip(1) {
        assert!(row.split(',').skip(1).all(|v| v.parse::<f64>().unwrap().is_finite()), "{row}");
    }
    let before = stage1_total(&init, &cfg, &train);
    let after = stage1_total(&trained, &cfg, &train);
    assert!(before.is_finite());
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn stage_two_trains_only_the_classifier() {
    let (train, _) = samples();
    let mut cfg = config();
    cfg.stage1.steps = 5;
    let mut model = train_disparity(&cfg, &train, &mut Vec::new()).unwrap();
    let frozen = disparity_bytes(&model);
    let before = stage2_total(&model, &cfg, &train);
    cfg.stage2.steps = 20;
    let mut log = Vec::new();
    train_classifier(&cfg, &mut model, &train, &mut log).unwrap();
    assert!(String::from_utf8(log).unwrap().starts_with("step,focal_map,triplet,classification,total\n"));
    assert_eq!(disparity_bytes(&model), frozen);
    let after = stage2_total(&model, &cfg, &train);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn reloaded_checkpoint_evaluates_identically() {
    let (train, test) = samples();
    let mut cfg = config();
    cfg.stage1.steps = 3;
    cfg.stage2.steps = 3;
    let mut model = train_disparity(&cfg, &train, &mut Vec::new()).unwrap();
    train_classifier(&cfg, &mut model, &train, &mut Vec::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let loaded = StereoModel::load(&path).unwrap();
    assert_eq!(checkpoint::encode(&loaded.store), checkpoint::encode(&model.store));

    let a = evaluate(&model, &test, &[0.1], 0.5).unwrap();
    let b = evaluate(&loaded, &test, &[0.1], 0.5).unwrap();
    assert_eq!(a.report, b.report);
    for (x, y) in a.predictions.iter().zip(&b.predictions) {
        assert_eq!(x.score.to_bits(), y.score.to_bits());
        assert_eq!(x.refined, y.refined);
        assert_eq!(x.confidence, y.confidence);
    }
    for p in &a.predictions {
        assert!(p.score > 0.0 && p.score < 1.0);
        assert_eq!(p.confidence[0].dims(), (32, 32));
    }

    // zero further steps from the stage-1 weights reproduce the same scores
    let mut again = StereoModel::new(&loaded.config, cfg.seed).unwrap();
    again.load_disparity(&path).unwrap();
    checkpoint::load_params(&mut again.store, checkpoint::read(&path).unwrap()).unwrap();
    let c = evaluate(&again, &test, &[0.1], 0.5).unwrap();
    assert_eq!(c.report, a.report);
}

#[test]
fn bad_inputs_fail_before_training() {
    let (train, _) = samples();
    let mut log = Vec::new();
    assert!(train_disparity(&config(), &[], &mut log).is_err());
    assert!(log.is_empty());

    let mut cfg = config();
    cfg.model.width = 64;
    assert!(matches!(train_disparity(&cfg, &train, &mut log), Err(Error::Config(_))));
    assert!(log.is_empty());

    let mut cfg = config();
    cfg.weights.relative = 0.0;
    cfg.weights.reconstruction = 0.0;
    cfg.weights.smoothness = 0.0;
    cfg.stage1.steps = 1;
    assert!(train_disparity(&cfg, &train, &mut Vec::new()).is_err());
}

#[test]
fn disparity_only_stage_two_loads_stage_one_weights() {
    let (train, _) = samples();
    let mut cfg = config();
    cfg.stage1.steps = 2;
    let model = train_disparity(&cfg, &train, &mut Vec::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s1.ckpt");
    model.save(&path).unwrap();

    cfg.ablation.cmg_disparity_only = true;
    let (mcfg, _) = cfg.effective().unwrap();
    let mut other = StereoModel::new(&mcfg, cfg.seed).unwrap();
    other.load_disparity(&path).unwrap();
    assert_eq!(disparity_bytes(&other), disparity_bytes(&model));
    assert!(other.store.names().any(|n| n.starts_with("cmg.res0")));
    assert!(!model.store.names().any(|n| n.starts_with("cmg.res0")));
}
