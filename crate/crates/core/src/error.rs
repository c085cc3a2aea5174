use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{routine} did not converge within {iterations} iterations")]
    NoConvergence { routine: &'static str, iterations: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |S - S^T| = {asymmetry:e} for |S| = {norm:e}")]
    NotSymmetric { asymmetry: f64, norm: f64 },
    #[error("{what}: {left:?} vs {right:?}")]
    DimensionMismatch {
        what: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is singular")]
    Singular,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("invalid descriptor system: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("rolling-disc parameter `{0}` must be strictly positive")]
    NonPositiveParameter(&'static str),
    #[error("could not draw a pair with distinct points after {0} retries")]
    DegenerateSampling(usize),
    #[error("domain box has dimension {got}, expected {expected}")]
    BoxDimension { expected: usize, got: usize },
    #[error("unknown nonlinearity `{0}`")]
    UnknownNonlinearity(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error(
        "rank condition fails: rank of the 5-block matrix is {rank_big}, rank of the 4-block matrix is {rank_small}"
    )]
    RankCondition { rank_big: usize, rank_small: usize },
    #[error("parameter matrix has shape {got:?}, expected {expected:?}")]
    ParameterShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmiError {
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("block `{block}` has shape {got:?}, expected {expected:?}")]
    Shape {
        block: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("upper gamma bound {gamma} is infeasible")]
    UpperBoundInfeasible { gamma: f64 },
    #[error("barrier iteration failed: {0}")]
    Barrier(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("nonlinearity left its domain at t = {t}")]
    DomainExit { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("initial state violates the constraint: residual {residual:e}")]
    InconsistentInitialState { residual: f64 },
    #[error("algebraic equations could not be solved at t = {t} (residual {residual:e})")]
    AlgebraicSolve { t: f64, residual: f64 },
    #[error("unsupported system for simulation: {0}")]
    Unsupported(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: field `{field}`: {message}")]
    Field {
        path: String,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    System(#[from] SystemError),
}
