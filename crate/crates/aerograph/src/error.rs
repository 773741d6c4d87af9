use aerograph_core::analysis::AnalysisError;
use aerograph_core::dataio::DataError;
use aerograph_core::forecast::ForecastError;
use aerograph_core::model::ModelError;
use aerograph_core::training::TrainError;
use serde::{Deserialize, Serialize};

/// How a failure is reported: exit code on the command line, status over HTTP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad flag, request field or value.
    Invalid,
    /// Input files, artifacts or manifests that fail validation.
    Data,
    NotFound,
    /// An artifact the operation needs has not been produced yet.
    NotProvisioned,
    /// Numeric or I/O failure while computing.
    Runtime,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct Error {
    pub kind: ErrorKind,
    pub message: String,
    /// Offending input, e.g. `reductions.WE` or `--models`.
    pub field: Option<String>,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            field: None,
        }
    }

    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Invalid,
            message: message.into(),
            field: Some(field.into()),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Runtime, message)
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    /// 1 usage, 2 data or validation, 3 runtime or numeric.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Invalid => 1,
            ErrorKind::Data | ErrorKind::NotFound | ErrorKind::NotProvisioned => 2,
            ErrorKind::Runtime => 3,
        }
    }

    pub fn code(&self) -> &'static str {
        match self.kind {
            ErrorKind::Invalid => "invalid_argument",
            ErrorKind::Data => "invalid_data",
            ErrorKind::NotFound => "not_found",
            ErrorKind::NotProvisioned => "not_provisioned",
            ErrorKind::Runtime => "runtime_failure",
        }
    }
}

impl From<DataError> for Error {
    fn from(e: DataError) -> Self {
        Error::data(e.to_string())
    }
}

impl From<ModelError> for Error {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Checkpoint(_) => Error::data(e.to_string()),
            _ => Error::runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => Error::new(ErrorKind::Invalid, e.to_string()),
            TrainError::EmptySplit(_) | TrainError::ZeroTargets => Error::data(e.to_string()),
            _ => Error::runtime(e.to_string()),
        }
    }
}

impl From<ForecastError> for Error {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::BadFactor { .. } => Error::data(e.to_string()),
            ForecastError::ZeroHorizon => Error::invalid("days", e.to_string()),
            _ => Error::runtime(e.to_string()),
        }
    }
}

impl From<AnalysisError> for Error {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Forecast(f) => f.into(),
            AnalysisError::BadFraction { .. } | AnalysisError::UnknownRegion(_) | AnalysisError::EmptyNodeSet => {
                Error::new(ErrorKind::Invalid, e.to_string())
            }
            AnalysisError::TooManyPolicies => Error::invalid("nodes", e.to_string()),
            _ => Error::runtime(e.to_string()),
        }
    }
}
