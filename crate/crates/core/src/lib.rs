//! Path-augmented message passing networks.

pub mod chem;
pub mod citation;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod model;
pub mod paths;
pub mod run;
pub mod synth;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
