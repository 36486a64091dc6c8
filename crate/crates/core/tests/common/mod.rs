//! Finite-difference checks shared by the gradient tests and the acceptance
//! suite. Every check runs in f64 over `INSTANCES` seeded random inputs.
#![allow(dead_code)]

pub mod anchors;
pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfas_autograd::gradcheck::{check_gradients, GradCheckOptions};
use sfas_autograd::{Bound, ParamStore, Tape, Tensor, TensorError, Var};
use sfas_core::cmg::WindowMlp;
use sfas_core::data::RelPair;
use sfas_core::disparity::{attention_to_raw, normalize_per_image};
use sfas_core::dma::{attend, resize_attention, row_mask, AttnUnit, RowMask};
use sfas_core::losses;
use sfas_core::Map;

pub const INSTANCES: u64 = 20;
pub const TOL: f64 = 1e-4;

pub type Check = (&'static str, fn() -> Result<(), String>);

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn te(e: sfas_core::Error) -> TensorError {
    TensorError::InvalidArgument { op: "core", reason: e.to_string() }
}

/// Random-weight projection to a scalar, so upstream gradients differ per
/// element.
pub fn project<'t>(y: Var<'t, f64>, seed: u64) -> sfas_autograd::Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
    let w = y.tape().constant(rand_tensor(&mut rng, &y.shape(), -1.0, 1.0));
    Ok(y.mul(w)?.sum())
}

fn run<M, Func>(make: M, f: Func) -> Result<(), String>
where
    M: Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    Func: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>], u64) -> sfas_autograd::Result<Var<'t, f64>>,
{
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        let report = check_gradients(&inputs, |t, v| f(t, v, seed), GradCheckOptions::default())
            .map_err(|e| format!("instance {seed}: {e}"))?;
        if !report.passes(TOL) {
            return Err(format!(
                "instance {seed}: max rel error {:.3e} at {:?}",
                report.max_rel_error, report.worst
            ));
        }
    }
    Ok(())
}

fn unit_store(cross_channels: usize, heads: usize) -> (ParamStore<f64>, AttnUnit) {
    let mut store = ParamStore::new();
    let u = AttnUnit::new(&mut store, "u", cross_channels, heads, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    (store, u)
}

fn store_values(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.ids().map(|id| store.get(id).clone()).collect()
}

pub fn projections() -> Result<(), String> {
    let (store, u) = unit_store(4, 2);
    let params = store_values(&store);
    run(
        |r| {
            let mut v = vec![rand_tensor(r, &[2, 2, 4, 4], -1.0, 1.0)];
            v.extend(params.iter().map(|p| rand_tensor(r, p.shape(), -0.5, 0.5)));
            v
        },
        |_, v, seed| {
            let p = Bound::from_vars(v[1..].to_vec());
            let q = u.project(&p, v[0], u.wq, u.bq).map_err(te)?;
            project(q, seed)
        },
    )
}

pub fn attention() -> Result<(), String> {
    run(
        |r| {
            vec![
                rand_tensor(r, &[2, 2, 2, 5, 3], -1.0, 1.0),
                rand_tensor(r, &[2, 2, 2, 5, 3], -1.0, 1.0),
                rand_tensor(r, &[2, 2, 2, 5, 3], -1.0, 1.0),
                rand_tensor(r, &[2, 2, 2, 5, 5], -1.0, 1.0),
            ]
        },
        |t, v, seed| {
            let mask = t.constant(row_mask(5, RowMask::KeyNotRight));
            let (o, a) = attend(v[0], v[1], v[2], Some(v[3]), Some(mask)).map_err(te)?;
            let (o2, _) = attend(v[0], v[1], v[2], None, None).map_err(te)?;
            project(o, seed)?.add(project(a, seed + 1)?)?.add(project(o2, seed + 2)?)
        },
    )
}

pub fn attention_resize() -> Result<(), String> {
    run(
        |r| vec![rand_tensor(r, &[1, 2, 4, 6, 6], 0.0, 1.0)],
        |_, v, seed| project(resize_attention(v[0], 2, 3).map_err(te)?, seed),
    )
}

pub fn attention_unit() -> Result<(), String> {
    let (store, u) = unit_store(4, 2);
    let params = store_values(&store);
    run(
        |r| {
            let mut v = vec![rand_tensor(r, &[2, 2, 4, 4], -1.0, 1.0)];
            v.extend(params.iter().map(|p| rand_tensor(r, p.shape(), -0.5, 0.5)));
            v.push(rand_tensor(r, &[2, 2, 2, 4, 4], 0.0, 0.5));
            v
        },
        |_, v, seed| {
            let n = v.len();
            let p = Bound::from_vars(v[1..n - 1].to_vec());
            let (y, a) = u.forward(&p, v[0], true, &[Some(v[n - 1]), None], true).map_err(te)?;
            project(y, seed)?.add(project(a[1].unwrap(), seed + 1)?)
        },
    )
}

pub fn window_mlp() -> Result<(), String> {
    let mut store = ParamStore::<f64>::new();
    let m = WindowMlp::new(&mut store, "m", 3, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let params = store_values(&store);
    run(
        |r| {
            let mut v = vec![rand_tensor(r, &[1, 4, 4, 3], -1.0, 1.0)];
            v.extend(params.iter().map(|p| rand_tensor(r, p.shape(), -0.5, 0.5)));
            v
        },
        |_, v, seed| {
            let p = Bound::from_vars(v[1..].to_vec());
            project(m.forward(&p, v[0]).map_err(te)?, seed)
        },
    )
}

pub fn disparity_regression() -> Result<(), String> {
    run(
        |r| vec![rand_tensor(r, &[2, 3, 6, 6], -2.0, 2.0)],
        |t, v, _| {
            let mask = t.constant(row_mask(6, RowMask::KeyNotRight));
            let a = v[0].add(mask)?.softmax_lastdim()?;
            Ok(attention_to_raw(a).map_err(te)?.mean())
        },
    )
}

pub fn normalisation() -> Result<(), String> {
    run(
        |r| vec![rand_tensor(r, &[2, 1, 4, 5], -1.0, 1.0)],
        |_, v, seed| project(normalize_per_image(v[0]).map_err(te)?, seed),
    )
}

pub fn warp() -> Result<(), String> {
    run(
        |r| {
            let right = rand_tensor(r, &[1, 1, 3, 12], 0.0, 1.0);
            // sample positions strictly inside the row and away from knots
            let d = Tensor::from_fn(&[1, 1, 3, 12], |i| {
                let x = (i % 12) as f64;
                let u = r.gen_range(0..10) as f64 + r.gen_range(0.1..0.9);
                x - u
            });
            vec![right, d]
        },
        |_, v, seed| project(losses::reconstruct_left(v[0], v[1]).map_err(te)?, seed),
    )
}

fn teacher(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Map {
    Map::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
}

pub fn relative_loss() -> Result<(), String> {
    run(
        |r| vec![rand_tensor(r, &[2, 1, 4, 5], -2.0, 2.0)],
        |_, v, seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let ts: Vec<Map> = (0..2).map(|_| teacher(&mut rng, 4, 5)).collect();
            let pairs: Vec<Vec<RelPair>> = (0..2)
                .map(|_| {
                    (0..6)
                        .map(|_| RelPair {
                            i: (rng.gen_range(0..5), rng.gen_range(0..4)),
                            j: (rng.gen_range(0..5), rng.gen_range(0..4)),
                            r: [-1, 0, 1][rng.gen_range(0..3)],
                        })
                        .collect()
                })
                .collect();
            let refs: Vec<&Map> = ts.iter().collect();
            losses::relative_disparity_loss(v[0], &pairs, &refs).map_err(te)
        },
    )
}

pub fn reconstruction_loss() -> Result<(), String> {
    run(
        |r| vec![rand_tensor(r, &[2, 1, 8, 9], 0.0, 1.0), rand_tensor(r, &[2, 1, 8, 9], 0.0, 1.0)],
        |_, v, _| losses::reconstruction_loss(v[0], v[1]).map_err(te),
    )
}

pub fn smoothness_loss() -> Result<(), String> {
    run(
        |r| vec![rand_tensor(r, &[2, 1, 5, 6], 0.0, 1.0), rand_tensor(r, &[2, 1, 5, 6], 0.0, 1.0)],
        |_, v, _| losses::smoothness_loss(v[0], v[1]).map_err(te),
    )
}

pub fn focal_map_loss() -> Result<(), String> {
    run(
        |r| {
            vec![
                rand_tensor(r, &[3, 4, 4], 0.0, 1.0),
                rand_tensor(r, &[3, 4, 4], 0.0, 1.0),
                rand_tensor(r, &[3], 0.0, 1.0),
            ]
        },
        |_, v, _| losses::focal_map_loss(v[0], v[1], v[2]).map_err(te),
    )
}

pub fn triplet_loss() -> Result<(), String> {
    run(
        |r| vec![rand_tensor(r, &[6, 4], -1.0, 1.0)],
        |_, v, _| losses::triplet_loss(v[0], &[true, false, true, true, false, false], 2.0).map_err(te),
    )
}

pub fn focal_classification_loss() -> Result<(), String> {
    run(
        |r| vec![rand_tensor(r, &[5, 2], -3.0, 3.0)],
        |_, v, _| losses::focal_classification_loss(v[0], &[true, false, false, true, true], 2.0, 0.5).map_err(te),
    )
}

pub const ALL: [Check; 14] = [
    ("per-head projections", projections),
    ("attention with residual and mask", attention),
    ("attention residual resize", attention_resize),
    ("two-scale attention unit", attention_unit),
    ("windowed MLP block", window_mlp),
    ("window disparity regression", disparity_regression),
    ("per-image normalisation", normalisation),
    ("horizontal warp", warp),
    ("relative disparity loss", relative_loss),
    ("reconstruction loss", reconstruction_loss),
    ("smoothness loss", smoothness_loss),
    ("focal confidence-map loss", focal_map_loss),
    ("triplet loss", triplet_loss),
    ("focal classification loss", focal_classification_loss),
];
