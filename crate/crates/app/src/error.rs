use canopy_geo::{GeoError, TileAddress};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, AppError>;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{0}")]
    Conflict(String),
    #[error("no model loaded")]
    ModelNotLoaded,
    #[error("{} tile(s) could not be fetched: {}", missing.len(), missing.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", "))]
    MissingTiles { missing: Vec<TileAddress> },
    #[error("no runs for `{area}` in the requested interval")]
    EmptyReport { area: String },
    #[error("job cancelled")]
    Cancelled,
    #[error("chunk {index} of {total} failed: {reason}")]
    ChunkFailed {
        index: usize,
        total: usize,
        reason: String,
    },
    #[error("storage error on {path}: {reason}")]
    Store { path: String, reason: String },
    #[error(transparent)]
    Geo(GeoError),
    #[error(transparent)]
    Core(#[from] canopy_core::Error),
}

impl From<GeoError> for AppError {
    fn from(e: GeoError) -> Self {
        match e {
            GeoError::NotFound { kind, id } => AppError::NotFound { kind, id },
            GeoError::MissingTiles { missing } => AppError::MissingTiles { missing },
            other => AppError::Geo(other),
        }
    }
}

impl AppError {
    pub(crate) fn store(path: &std::path::Path, reason: impl ToString) -> Self {
        AppError::Store {
            path: path.display().to_string(),
            reason: reason.to_string(),
        }
    }
}
