//! Experiment harness: configuration, multi-seed execution, metrics
//! persistence and report generation for the learned data-manipulation
//! trainers in `manip-core`.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] manip_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}
