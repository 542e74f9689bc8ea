use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid: {0}")]
    Grid(String),

    #[error("degenerate drift (b = 0) at ({x}, {y}) away from the attractor")]
    DegenerateDrift { x: f64, y: f64 },

    #[error("singular normalization: |b| vanishes at a quadrature node")]
    SingularNormalization,

    #[error("linearized initialization failed: {0}")]
    Initialization(String),

    #[error("stencil refinement did not terminate after {depth} refinements (last pair {u:?}, {v:?})")]
    StencilRefinement {
        depth: usize,
        u: [i64; 2],
        v: [i64; 2],
    },

    #[error("the march exhausted the considered set before reaching its stopping condition")]
    DomainExhausted,

    #[error("MAP trace left the accepted region at ({x}, {y})")]
    TruncatedTrace { x: f64, y: f64 },

    #[error("not enough valid neighbours to difference at ({x}, {y})")]
    InsufficientPatch { x: f64, y: f64 },

    #[error("saddle is not hyperbolic: {0}")]
    NotHyperbolic(String),

    #[error("iterative solver did not converge: {method} stopped after {iterations} iterations with relative residual {residual:e}")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
