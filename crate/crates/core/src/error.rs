use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate element {element}: area {area:e}")]
    DegenerateElement { element: usize, area: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("zero vector at node {node} cannot be projected onto the sphere")]
    ZeroVector { node: usize },

    #[error("nodal modulus {modulus} at node {node} is not unit")]
    NotUnit { node: usize, modulus: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    SolverFailed { iterations: usize, residual: f64 },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("path {path_index} (seed {seed}) failed: {source}")]
    Path {
        path_index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Innermost error, with step/path context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } | Error::Path { source, .. } => source.root(),
            other => other,
        }
    }
}
