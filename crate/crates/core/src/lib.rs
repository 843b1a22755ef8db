pub mod adversary;
pub mod analyzer;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod optim;
pub mod par;
pub mod protocol;
pub mod quantum;
pub mod setting;
pub mod spacetime;
pub mod tomography;

pub use error::{Error, Result};
