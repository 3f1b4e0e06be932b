use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scenario infeasible: {0}")]
    Infeasible(String),

    #[error("dimension mismatch: {0}")]
    Contract(String),

    #[error("path set is empty")]
    EmptyPathSet,

    #[error("residual Doppler unmeasurable: strongest tap magnitude {0:e}")]
    Unmeasurable(f64),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("search space of {configs} configurations exceeds the cap of {cap}")]
    SearchSpaceTooLarge { configs: u128, cap: u128 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidScenario(_) => "invalid_scenario",
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Infeasible(_) => "infeasible",
            Error::Contract(_) => "contract",
            Error::EmptyPathSet => "empty_path_set",
            Error::Unmeasurable(_) => "unmeasurable",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::NonFinite(_) => "non_finite",
            Error::SearchSpaceTooLarge { .. } => "search_space_too_large",
            Error::EmptyDataset => "empty_dataset",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
        }
    }
}
