//! Texture-aware enhancement operators and evaluation tools for
//! low-contrast defects on periodic wafer surfaces.

pub mod detection;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod imageio;
pub mod mask;
pub mod metrics;
pub mod mptce;
pub mod params;
pub mod records;
pub mod report;
pub mod muse;
pub mod rle;
pub mod rng;
pub mod synthgen;
pub mod tensor;
pub mod tensorfile;

pub use error::{Error, Result, Shape};
pub use tensor::{ConvSpec, Tensor};
