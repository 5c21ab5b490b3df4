//! Command-line driver and HTTP labeling service for structuring autoencoders.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use config::RunConfig;
pub use error::{CliError, Result};
