pub mod autodiff;
pub mod cli;
pub mod datasets;
pub mod distillation;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod networks;
pub mod optim;
pub mod recommender;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
