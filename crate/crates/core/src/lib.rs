//! Paint-by-word editing engine.

pub mod assets;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod generators;
pub mod harness;
pub mod io;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod realism;
pub mod scorers;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
