//! Simulated experiment suites: IPE runs, threshold and scene ablations and
//! the needle-tip path test, with CSV output and markdown reports.

pub mod config;
pub mod experiment;
pub mod report;
pub mod stats;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ExperimentConfig, SceneArm, Suite};
pub use experiment::{run_experiment, write_outputs, ExperimentOutput};
pub use stats::{ExperimentStats, TrialRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] mmpa_core::sim::SimError),
    #[error(transparent)]
    Ipe(#[from] mmpa_core::ipe::IpeError),
    #[error(transparent)]
    Task(#[from] mmpa_core::taskstore::TaskError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}
