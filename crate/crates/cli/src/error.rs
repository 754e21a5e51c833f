use dioptra_core::data::DataError;
use dioptra_core::model::ModelError;
use dioptra_core::stats::StatsError;
use dioptra_core::train::TrainError;
use thiserror::Error;

/// Stable exit-code contract: 0 success, 2 usage, 3 I/O, 4 training
/// failure, 5 evaluation failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("training failed: {0}")]
    Train(String),
    #[error("evaluation failed: {0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Train(_) => 4,
            CliError::Eval(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        // Every data problem is a broken or unreadable input file.
        CliError::Io(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadConfig(_) | ModelError::ResolutionMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Aborted { .. } | TrainError::Tensor(_) | TrainError::Model(_) => {
                CliError::Train(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Eval(e.to_string())
    }
}

impl From<dioptra_core::atlas::AtlasError> for CliError {
    fn from(e: dioptra_core::atlas::AtlasError) -> Self {
        CliError::Io(e.to_string())
    }
}
