//! File formats, run-directory pipeline and experiment harness on top of
//! `cgt-core`.
//!
//! Every CLI subcommand is a function in [`pipeline`] or [`experiment`]
//! operating on a [`run::RunDir`], so the binary is a thin argument parser.

pub mod config;
pub mod error;
pub mod experiment;
pub mod image_io;
pub mod journal;
pub mod manifest;
pub mod model_file;
pub mod pipeline;
pub mod profile_file;
pub mod report;
pub mod run;

pub use error::{Error, Result};
