//! Experiment tooling around [`vfl_incentive_core`]: dataset preparation,
//! coalition training, payout reports, JSON document formats and the
//! `vfl-incentive` command-line interface.

pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result, Stage};
pub use vfl_incentive_core as core;
