//! Continual-learning engine: a momentum (slow/fast weight) wrapper composable
//! with three baseline methods (plain SGD fine-tuning, online EWC, DER-style
//! replay), class-disjoint task streams, Class-IL / Task-IL evaluation, and a
//! reproducible experiment harness.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod methods;
pub mod nn;
pub mod optim;
pub mod persist;
pub mod pretrain;
pub mod report;
pub mod rngstream;
pub mod stream;
pub mod scalar;

pub use error::{Error, Result};

/// Scalar type used by the experiment harness and CLI.
pub type Real = f64;
/// Parameter vector over [`Real`].
pub type Params = nn::ParamVector<Real>;
/// Gradient over [`Real`].
pub type Grad = nn::Gradient<Real>;
