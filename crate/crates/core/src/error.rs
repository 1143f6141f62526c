use thiserror::Error;

pub type Result<T, E = SpcaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SpcaError {
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("smoothing parameter mu must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPositiveSemidefinite { min_eig: f64, max_eig: f64 },
    #[error("primal point infeasible: {0}")]
    InfeasiblePrimal(String),
    #[error("dual point infeasible: max |U_ij| = {max_abs} exceeds rho = {rho}")]
    InfeasibleDual { max_abs: f64, rho: f64 },
    #[error("solver produced a non-finite iterate at iteration {0}")]
    NonFiniteIterate(usize),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("cardinality {k} out of range 1..={n}")]
    BadCardinality { k: usize, n: usize },
    #[error("sparsity pattern is empty")]
    EmptyPattern,
    #[error("invalid sparsity pattern: {0}")]
    InvalidPattern(String),
    #[error("vector is not unit norm (norm {0})")]
    NotUnitNorm(f64),
    #[error("degenerate certificate denominator x'B_i x = {value:e} for variable {index}")]
    DegenerateDenominator { index: usize, value: f64 },
    #[error("penalty grid is empty")]
    EmptyGrid,
    #[error("exhaustive search over {count} subsets exceeds the cap of {cap}")]
    TooLarge { count: u128, cap: u128 },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("cannot deflate by a zero component")]
    ZeroComponent,
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("truth pattern must be non-empty and not cover every variable")]
    DegenerateTruth,
    #[error("parse error at row {row}, column {col}: {msg}")]
    ParseError { row: usize, col: usize, msg: String },
    #[error("covariance input is asymmetric: |M[{row}][{col}] - M[{col}][{row}]| = {diff:e}")]
    AsymmetricInput { row: usize, col: usize, diff: f64 },
    #[error("ragged rows: row {row} has {got} fields, expected {expected}")]
    RaggedRows { row: usize, expected: usize, got: usize },
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("non-positive price {value} at row {row}, column {col}")]
    NonPositivePrice { row: usize, col: usize, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
