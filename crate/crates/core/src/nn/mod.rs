//! Layers with named parameters, built on the autodiff primitives.

pub mod layers;

pub use layers::{he_normal, AdaptiveBatchNorm, BatchNorm, Conv2d, Linear};
