pub mod audio;
pub mod autodiff;
pub mod corpus;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod featfile;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod speaker;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Element type used for training and inference.
pub type Real = f32;
/// Element type used for gradient and oracle checks.
pub type CheckReal = f64;
