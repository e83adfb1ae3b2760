pub mod calibrate;
pub mod error;
pub mod estimation;
pub mod exec;
pub mod mtp;
pub mod normal;
pub mod quadrature;
pub mod rankprob;
pub mod simharness;
pub mod weights;

pub use error::{CrwError, Result};
