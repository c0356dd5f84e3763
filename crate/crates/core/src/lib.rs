pub mod cli;
pub mod config;
pub mod dewarp;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod raster;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
