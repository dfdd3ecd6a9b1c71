//! Auxiliary speaker network: residual trunk, LDE pooling, angular-margin
//! head. Its hidden activations drive the deep feature loss and its
//! embeddings serve verification scoring.

pub mod angular;
pub mod aux;
pub mod lde;

pub use angular::{anneal_lambda, psi, AngularMargin};
pub use aux::{AuxModel, AuxNetConfig, AuxOutput, N_TAPS};
pub use lde::{Lde, LDE_EPS};
