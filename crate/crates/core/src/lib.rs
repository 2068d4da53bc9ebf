pub mod admm;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod evaluation;
pub mod kernel;
pub mod linalg;
mod parallel;
pub mod rate;
pub mod system;
pub mod trust_region;

pub use error::{Error, Result};
