use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("element {element} is inverted or degenerate (signed volume {volume:e})")]
    InvertedElement { element: usize, volume: f64 },
    #[error("node {node} is not referenced by any element")]
    DanglingNode { node: usize },
    #[error("element {element} references node {node}, but the mesh has {count} nodes")]
    BadNodeIndex {
        element: usize,
        node: usize,
        count: usize,
    },
    #[error("field has {got} values, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point ({0}, {1}, {2}) lies outside the mesh")]
    PointOutside(f64, f64, f64),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("segment {segment}: {msg}")]
    InvalidSegment { segment: usize, msg: String },
    #[error("junction {junction}: {msg}")]
    InvalidJunction { junction: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("linear solve of size {size} left relative residual {residual:e} (tolerance {tolerance:e})")]
    Residual {
        residual: f64,
        tolerance: f64,
        size: usize,
    },
}

#[derive(Debug, Error)]
pub enum TissueError {
    #[error("Newton iteration did not converge after {substeps} substep halvings (last residual {residual:e})")]
    NotConverged { substeps: u32, residual: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("parameter `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("infeasible Morris design: {0}")]
    Infeasible(String),
    #[error("invalid parameter space: {0}")]
    Space(String),
    #[error("model evaluation failed: {0}")]
    Model(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Top-level error with a process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Tissue(#[from] TissueError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("plot: {0}")]
    Plot(String),
    #[error("restart file: {0}")]
    Restart(String),
    #[error("step {step} (t = {time} h): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad input, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Mesh(_) | Error::Network(_) | Error::Plot(_) => 2,
            Error::Solver(_) | Error::Tissue(_) => 3,
            Error::Sensitivity(SensitivityError::Infeasible(_) | SensitivityError::Space(_)) => 2,
            Error::Sensitivity(SensitivityError::Model(_)) => 3,
            Error::Step { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
