pub mod autodiff;
pub mod cli;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod inference;
pub mod latent;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
