//! Differentiable 0-dimensional topological characterization of small dense
//! networks, and the estimators built on top of it.

pub mod autonet;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod metalearn;
pub mod persistence;
pub mod rng;
pub mod synthdata;
pub mod topofeat;

pub use error::{Error, Result};
