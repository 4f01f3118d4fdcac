pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod moe;
pub mod objectives;
pub mod sim;
pub mod train;
pub mod tune;

pub use error::{Error, Result};
