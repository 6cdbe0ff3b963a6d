//! File formats, experiment plumbing and the command-line front end of
//! `kaflab`. The numerical work lives in `kaflab-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod parallel;

pub use error::{Error, Result};
