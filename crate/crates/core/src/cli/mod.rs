//! Config-driven commands behind the `scaloforge` binary.

mod commands;
mod config;
mod eval;

use std::path::PathBuf;

use thiserror::Error;

use crate::augmentation::AugmentError;
use crate::features::FeatureError;
use crate::nn::NnError;
use crate::signal_io::SignalError;

pub use commands::{
    cmd_augment, cmd_evaluate, cmd_extract, cmd_fuse, cmd_train, run_command, Command, CommandArgs, CommandReport,
    RunManifest,
};
pub use config::{AugmentationConfig, ClassifierConfig, ExperimentConfig, PathsConfig};
pub use eval::{evaluate, fuse_average_voting, segment_log_probability, CityAccuracy, EvalReport, ScoreTable};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}
