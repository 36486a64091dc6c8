//! Synthetic stereo scenes, teacher labels, relative-depth pairs and file IO.

pub mod io;
mod manifest;
mod pairs;
mod scene;
mod teacher;

pub use manifest::{generate_dataset, LoadedSample, Manifest, Record, Split};
pub use pairs::{order_label, sample_rel_pairs, RelPair};
pub use scene::{
    generate_scene, quantize, sample_row, sample_seed, Distance, Illumination, Label, SceneParams, StereoSample,
};
pub use teacher::{make_teacher_depth, BODY_LEVEL};
