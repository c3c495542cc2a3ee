//! Data ingestion, configuration, experiment runs and result files.

pub mod config;
pub mod evaluate;
pub mod experiment;
pub mod files;
pub mod sliding;
pub mod synthetic;
pub mod wav;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{DataSource, ExperimentConfig, ValidationDomain};
pub use experiment::{
    legal_grid, prepare, run_config, run_experiment, run_prepared, run_sweep, ExperimentOutput, PreparedData,
    ResultsRecord, RoundRow, SweepEntry,
};
pub use sliding::{max_over_windows, sliding_window_predict};
pub use synthetic::{gen_synthetic, SyntheticCorpus, SyntheticSpec};
pub use wav::{load_wav, write_wav, WavError};

use crate::dsp::DspError;
use crate::engine::EngineError;
use crate::ensemble::EnsembleError;
use crate::learner::LearnerError;
use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
