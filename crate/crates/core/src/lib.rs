//! Mean-field theory of deep dropout networks and a finite-width Monte-Carlo
//! simulator to check it against.

pub mod activation;
pub mod error;
pub mod fixed_point;
pub mod linear_theory;
pub mod meanfield;
pub mod phase;
pub mod quadrature;
pub mod simulator;
pub mod universality;

pub use activation::Activation;

pub type ActivationKind = Activation;
pub use error::{Error, Result};
pub use meanfield::{DepthScales, LengthState, MeanField, MeanFieldParams};
pub use quadrature::QuadratureRule;
