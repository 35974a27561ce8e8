//! Exit-code discipline: 0 success, 1 internal error, 2 bad input,
//! 3 incompatible checkpoint. Library errors are folded into those three
//! buckets here so every subcommand reports failures the same way.

use speakergraph::checkpoint::CheckpointError;
use speakergraph::metrics::MetricsError;
use speakergraph::model::ModelError;
use speakergraph::records::IngestError;
use speakergraph::synth::SynthError;
use speakergraph::train::TrainError;
use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// The user's inputs (paths, flags, config file, data contents) are at
    /// fault. Exit 2.
    BadInput(String),
    /// A checkpoint cannot be used with this build or this data. Exit 3.
    Incompatible(String),
    /// Everything else. Exit 1.
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::BadInput(_) => 2,
            CliError::Incompatible(_) => 3,
        }
    }

    pub fn bad_input(msg: impl Into<String>) -> Self {
        CliError::BadInput(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::BadInput(m) => write!(f, "{m}"),
            CliError::Incompatible(m) => write!(f, "incompatible checkpoint: {m}"),
            CliError::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::BadInput(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::BadInput(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::BadInput(e.to_string()),
            other => CliError::Internal(other.into()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            other => CliError::BadInput(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } | CheckpointError::Json(_) => {
                CliError::BadInput(e.to_string())
            }
            CheckpointError::Model(m) => m.into(),
            incompatible => CliError::Incompatible(incompatible.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::BadInput(e.to_string())
    }
}
