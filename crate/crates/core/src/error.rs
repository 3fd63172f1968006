use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the mesh, coordinate, fitting and discovery routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("mesh has no {0}")]
    EmptyMesh(&'static str),

    #[error("face {face} is degenerate (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: component {component} ({vertices} vertices) contains no control point")]
    RankDeficient { component: usize, vertices: usize },

    #[error("optimization diverged at iteration {iteration} (objective {value})")]
    Diverged {
        iteration: usize,
        value: f64,
        trace: Vec<f64>,
    },

    #[error("{dropped} of {total} target fits diverged, more than the 20% allowed")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("{available} usable targets, at least {required} needed")]
    InsufficientTargets { available: usize, required: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
