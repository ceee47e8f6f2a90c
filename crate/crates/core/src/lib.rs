pub mod agent;
pub mod checkpoint;
pub mod envsuite;
pub mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod sale;

pub use error::{Error, Result};
