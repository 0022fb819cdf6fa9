//! Experiment presets, reference graphs and reproduction drivers.

pub mod config;
pub mod experiments;
pub mod graphs;
pub mod ingest;
pub mod presets;
pub mod run;

pub use config::{ExperimentConfig, Mode, Target};
pub use presets::{preset, Preset, PRESETS};
pub use run::{rerun, run, Manifest, RunSummary};

use crate::basis::BasisError;
use crate::eval::EvalError;
use crate::io::IoError;
use crate::scm::ScmError;
use crate::search::SearchError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config at {pointer:?}: {message}")]
    Config { pointer: String, message: String },
    #[error("ingest: {0}")]
    Ingest(String),
    #[error("experiment: {0}")]
    Experiment(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl HarnessError {
    /// Short machine-readable category used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } => "config",
            HarnessError::Ingest(_) => "ingest",
            HarnessError::Experiment(_) => "experiment",
            HarnessError::Basis(_) => "basis",
            HarnessError::Scm(_) => "scm",
            HarnessError::Eval(_) => "eval",
            HarnessError::Search(_) => "search",
            HarnessError::Io(_) => "io",
        }
    }
}
