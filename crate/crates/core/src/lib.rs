//! Weakly supervised stereo face anti-spoofing on synthetic binocular scenes.

pub mod checkpoint;
pub mod cmg;
pub mod data;
pub mod disparity;
pub mod dma;
pub mod error;
pub mod features;
pub mod losses;
pub mod map;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{CheckpointError, DataError, Error, Result};
pub use map::Map;
