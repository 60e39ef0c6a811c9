//! Command-line front end: image and mask ingestion, configuration and
//! dispatch of the inpainting experiments.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod image_io;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
