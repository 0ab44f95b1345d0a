//! Experiment driver for multifidelity CDF estimation: single runs, budget
//! sweeps with repeated trials, oracle statistics, and risk reports.

pub mod commands;
pub mod config;
pub mod experiment;

use thiserror::Error;

pub use config::{EstimatorKind, ExperimentConfig, LoadedConfig, OracleSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("budget infeasible: {0}")]
    Budget(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Other(_) => 1,
        }
    }

    /// Library errors raised while interpreting configuration.
    pub fn from_config(e: mfcdf::Error) -> Self {
        match e {
            mfcdf::Error::InsufficientBudget { .. } => CliError::Budget(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<mfcdf::Error> for CliError {
    fn from(e: mfcdf::Error) -> Self {
        match e {
            mfcdf::Error::InsufficientBudget { .. } => CliError::Budget(e.to_string()),
            mfcdf::Error::InvalidConfig(_) | mfcdf::Error::WeightMismatch { .. } => CliError::Config(e.to_string()),
            e => CliError::Other(e.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.into())
    }
}
