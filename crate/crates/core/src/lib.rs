//! Melnyk-Net engine: the offline handwritten-Chinese-character-recognition
//! CNNs (Models A/B/C) implemented from scratch — tensors, layer forward and
//! backward passes, model assembly, the SGD training recipe, MAC/parameter
//! cost analysis, GNT data ingestion, and class-activation-map rendering.
//!
//! Everything runs on the CPU in plain Rust; the only numeric dependency is
//! `ndarray`'s matrix multiply, which backs the im2col convolution path.

pub mod analysis;
pub mod cam;
pub mod checkpoint;
pub mod data;
pub mod interp;
pub mod layers;
pub mod model;
pub mod pgm;
pub mod tensor;
pub mod train;

pub use model::{build, ModelConfig, Network, Variant};
pub use tensor::{Scalar, Tensor};
