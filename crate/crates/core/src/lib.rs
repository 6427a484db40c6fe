//! Adversarial attacks on image fingerprinting models and robust contrastive
//! training against them.

pub mod attacks;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod retrieval;
pub mod tensor;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
