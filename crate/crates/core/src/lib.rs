pub mod autodiff;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod gradcheck_suite;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train_eval;

pub use error::{Error, Result};
pub use tensor::Tensor;
