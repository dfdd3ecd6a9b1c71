//! Reverse-mode differentiation, layer primitives, optimizers and checkpoints.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod linear;
pub mod norm;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use checkpoint::{file_sha256, Checkpoint, CheckpointHeader};
pub use conv::Conv2dSpec;
pub use graph::{Graph, Var};
pub use norm::Mode;
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::{ParamId, ParamStore, Parameter};
pub use schedule::LrSchedule;
pub use tensor::Tensor;
