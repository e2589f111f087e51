use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point coincides with the origin; spherical coordinates are undefined")]
    DegeneratePoint,

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("voxel key ({azimuth_index}, {elevation_index}) is outside the {azimuth_bins}x{elevation_bins} grid")]
    InvalidVoxelKey {
        azimuth_index: usize,
        elevation_index: usize,
        azimuth_bins: usize,
        elevation_bins: usize,
    },

    #[error("iteration {0} does not exist")]
    NoSuchIteration(usize),

    #[error("stale cloud reference: {path} has sha256 {actual}, session expects {expected}")]
    StaleCloudReference {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("session has no backing cloud files to reference")]
    UnbackedSession,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
