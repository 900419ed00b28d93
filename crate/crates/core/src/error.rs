use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate head box (w={w}, h={h})")]
    DegenerateHeadBox { w: i32, h: i32 },

    #[error("shape model fitting failed: {reason} (residual rmse {residual_rmse:.4})")]
    FittingFailure { reason: String, residual_rmse: f64 },

    #[error("training diverged at iteration {iteration}: {what}")]
    Diverged { iteration: u64, what: String },

    #[error("missing required artifact `{name}`: {hint}")]
    MissingArtifact { name: String, hint: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("archive error: {0}")]
    Archive(#[from] headgen_nn::archive::ArchiveError),

    #[error("provenance violation: {0}")]
    Provenance(String),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        CoreError::Json {
            path: path.into(),
            source,
        }
    }
}
