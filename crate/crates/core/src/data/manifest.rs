use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{check_dims, read_dsp, read_pgm, write_dsp, write_pgm};
use super::scene::{generate_scene, quantize, sample_seed, Distance, Illumination, Label, SceneParams};
use crate::error::DataError;
use crate::map::Map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One JSON Lines record. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub left: PathBuf,
    pub right: PathBuf,
    pub disp: PathBuf,
    pub teacher: PathBuf,
    pub label: u8,
    pub split: Split,
    pub illum: Illumination,
    pub dist: Distance,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
}

/// Sample as loaded for training or evaluation.
#[derive(Clone, Debug)]
pub struct LoadedSample {
    pub id: String,
    pub left: Map,
    pub right: Map,
    pub disparity: Map,
    pub teacher: Map,
    pub label: Label,
}

impl Manifest {
    /// Parses and validates: unique ids, known labels, every file present.
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                DataError::MissingFile(path.to_path_buf())
            } else {
                DataError::Io { path: path.to_path_buf(), source }
            }
        })?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| DataError::Manifest { line: n + 1, reason: e.to_string() })?;
            if Label::from_u8(rec.label).is_none() {
                return Err(DataError::Manifest { line: n + 1, reason: format!("label {} is not 0 or 1", rec.label) });
            }
            if !ids.insert(rec.id.clone()) {
                return Err(DataError::Manifest { line: n + 1, reason: format!("duplicate id {:?}", rec.id) });
            }
            for p in [&rec.left, &rec.right, &rec.disp, &rec.teacher] {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(DataError::MissingFile(full));
                }
            }
            records.push(rec);
        }
        Ok(Self { root, records })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let io = |source| DataError::Io { path: path.to_path_buf(), source };
        let mut f = fs::File::create(path).map_err(io)?;
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(f, "{line}").map_err(io)?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load(&self, rec: &Record) -> Result<LoadedSample, DataError> {
        let lp = self.root.join(&rec.left);
        let left = read_pgm(&lp)?;
        let dims = left.dims();
        let rp = self.root.join(&rec.right);
        let right = read_pgm(&rp)?;
        check_dims(&rp, &right, dims)?;
        let dp = self.root.join(&rec.disp);
        let disparity = read_dsp(&dp)?;
        check_dims(&dp, &disparity, dims)?;
        let tp = self.root.join(&rec.teacher);
        let teacher = read_dsp(&tp)?;
        check_dims(&tp, &teacher, dims)?;
        Ok(LoadedSample {
            id: rec.id.clone(),
            left,
            right,
            disparity,
            teacher,
            label: Label::from_u8(rec.label).expect("validated on read"),
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<LoadedSample>, DataError> {
        self.split(split).map(|r| self.load(r)).collect()
    }
}

/// Renders `n_train + n_test` samples into `out` and writes `manifest.jsonl`.
///
/// Labels alternate so both splits are balanced; illumination and distance
/// tags are drawn from the per-sample seed.
pub fn generate_dataset(
    out: &Path,
    n_train: usize,
    n_test: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Manifest, DataError> {
    let io = |source| DataError::Io { path: out.to_path_buf(), source };
    fs::create_dir_all(out.join("train")).map_err(io)?;
    fs::create_dir_all(out.join("test")).map_err(io)?;
    let mut records = Vec::with_capacity(n_train + n_test);
    for index in 0..n_train + n_test {
        let split = if index < n_train { Split::Train } else { Split::Test };
        let local = if index < n_train { index } else { index - n_train };
        let label = if local % 2 == 0 { Label::Real } else { Label::Attack };
        let s = sample_seed(seed, index as u64);
        let mut params = SceneParams::new(height, width, label);
        params.illumination = Illumination::ALL[(s % 3) as usize];
        params.distance = Distance::ALL[((s >> 8) % 2) as usize];
        let sample = generate_scene(s, &params)?;
        let dir = if split == Split::Train { "train" } else { "test" };
        let id = format!("{dir}-{local:05}");
        let rel = |suffix: &str| PathBuf::from(dir).join(format!("{id}_{suffix}"));
        let rec = Record {
            id: id.clone(),
            left: rel("left.pgm"),
            right: rel("right.pgm"),
            disp: rel("disp.dsp"),
            teacher: rel("teacher.dsp"),
            label: label.as_u8(),
            split,
            illum: params.illumination,
            dist: params.distance,
        };
        write_pgm(&out.join(&rec.left), &quantize(&sample.left))?;
        write_pgm(&out.join(&rec.right), &quantize(&sample.right))?;
        write_dsp(&out.join(&rec.disp), &sample.disparity)?;
        write_dsp(&out.join(&rec.teacher), &sample.teacher)?;
        records.push(rec);
    }
    let manifest = Manifest { root: out.to_path_buf(), records };
    manifest.write(&out.join("manifest.jsonl"))?;
    Ok(manifest)
}
