//! Splitting, metrics, configuration and the end-to-end commands behind the CLI.

mod cli;
mod config;
mod metrics;
mod pipeline;
mod split;

use std::path::PathBuf;

use thiserror::Error;

pub use cli::run;
pub use config::{ClassWeightSpec, Options, Settings};
pub use metrics::{evaluate, Metrics};
pub use pipeline::*;
pub use split::{split, split_indices};

use crate::encode::EncodeError;
use crate::midi_io::MidiError;
use crate::model::ModelError;
use crate::preprocess::PreprocessError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("too few items: {0}")]
    TooFewItems(String),
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl HarnessError {
    /// 1 for usage errors, 3 for training divergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Model(ModelError::Diverged { .. }) => 3,
            _ => 2,
        }
    }
}
