pub mod algorithms;
pub mod analyzer;
pub mod error;
pub mod harness;
pub mod json;
pub mod matrix;
pub mod mdp;
pub mod systems;
pub mod tolerance;

pub use error::{Error, Result};
