use std::path::Path;

use smcnn_core::hsi::HsiError;
use smcnn_core::{MetricsError, ModelError, NoiseError, TrainError};
use thiserror::Error;

/// Failure of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or incompatible inputs (exit 2).
    #[error("{0}")]
    Config(String),
    /// Unreadable or unwritable files (exit 3).
    #[error("{0}")]
    Io(String),
    /// NaN or infinite values (exit 4).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Prefixes the message with the file it concerns.
    pub fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Config(m) => CliError::Config(format!("{p}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{p}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{p}: {m}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<HsiError> for CliError {
    fn from(e: HsiError) -> Self {
        let m = e.to_string();
        match e {
            HsiError::Io(_)
            | HsiError::BadMagic
            | HsiError::TruncatedHeader
            | HsiError::TruncatedPayload(_)
            | HsiError::UnsupportedDtype(_)
            | HsiError::DimensionOverflow(..)
            | HsiError::DimensionMismatch { .. } => CliError::Io(m),
            HsiError::NonFinite(_) => CliError::Numeric(m),
            _ => CliError::Config(m),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let m = e.to_string();
        match e {
            ModelError::Io(_) | ModelError::Checkpoint(_) => CliError::Io(m),
            _ => CliError::Config(m),
        }
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Hsi(e) => e.into(),
            TrainError::Model(e) => e.into(),
            TrainError::Noise(e) => e.into(),
            TrainError::Metrics(e) => e.into(),
            TrainError::Io(e) => e.into(),
            e @ TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}
