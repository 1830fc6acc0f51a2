use std::path::{Path, PathBuf};

use osod_core::assign::AssignError;
use osod_core::metrics::MetricError;
use osod_core::split::SplitError;
use osod_core::taxonomy::TaxonomyError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error("self-check failed: {0}")]
    Selfcheck(String),
}

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    exit_code: u8,
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: ErrorBody<'a>,
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn schema(path: &Path, message: impl Into<String>) -> Self {
        Self::Schema {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Parse { .. } => "parse",
            Self::Schema { .. } => "schema",
            Self::Usage(_) => "usage",
            Self::Taxonomy(_) => "validation",
            Self::Metric(_) => "metric",
            Self::Split(SplitError::Parameter(_)) => "usage",
            Self::Split(_) => "split",
            Self::Assign(_) => "assign",
            Self::Selfcheck(_) => "selfcheck",
        }
    }

    /// 1 for metric or invariant failures, 2 for IO, schema and usage
    /// problems.
    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "metric" | "split" | "assign" | "selfcheck" => 1,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> String {
        let path = match self {
            Self::Io { path, .. } | Self::Parse { path, .. } | Self::Schema { path, .. } => {
                Some(path.display().to_string())
            }
            _ => None,
        };
        let body = ErrorJson {
            error: ErrorBody {
                kind: self.kind(),
                message: self.to_string(),
                path,
                exit_code: self.exit_code(),
            },
        };
        serde_json::to_string(&body).expect("error body serializes")
    }
}
