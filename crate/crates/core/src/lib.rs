pub mod analysis;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod lcontext;
pub mod predictor;
pub mod preprocess;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
