pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use rng::SplitMix64;
