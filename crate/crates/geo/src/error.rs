use thiserror::Error;

use crate::mercator::TileAddress;

pub type Result<T> = std::result::Result<T, GeoError>;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("invalid polygon{}: {reason}", feature.as_ref().map(|f| format!(" in feature `{f}`")).unwrap_or_default())]
    InvalidPolygon {
        feature: Option<String>,
        reason: String,
    },
    #[error("invalid viewport: {0}")]
    InvalidViewport(String),
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("tile {addr} unavailable: {reason}")]
    Tile { addr: TileAddress, reason: String },
    #[error("{} tile(s) could not be fetched: {}", missing.len(), missing.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", "))]
    MissingTiles { missing: Vec<TileAddress> },
    #[error("malformed document: {0}")]
    Document(String),
    #[error("remote provider: {0}")]
    Remote(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] canopy_core::Error),
}

impl GeoError {
    pub(crate) fn invalid_polygon(feature: Option<&str>, reason: impl Into<String>) -> Self {
        GeoError::InvalidPolygon {
            feature: feature.map(str::to_string),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        GeoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
