pub mod assessor;
pub mod cli;
pub mod dialogue;
pub mod error;
pub mod metrics;
pub mod seq2seq;
pub mod synthesis;
pub mod system;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
