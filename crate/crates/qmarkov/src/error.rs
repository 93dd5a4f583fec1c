//! Error type shared across the crate.
//!
//! Every fallible operation returns [`QmError`]. Numerical failures carry the
//! measured residual or eigenvalue so callers can report how far an input was
//! from satisfying a contract, not just that it failed.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, QmError>;

#[derive(Debug, Error)]
pub enum QmError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not Hermitian: asymmetry {asymmetry:.3e} exceeds tolerance {tol:.3e}")]
    NotHermitian { asymmetry: f64, tol: f64 },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:.3e}")]
    NotPsd { min_eig: f64 },

    #[error("{label}: element outside span, residual {residual:.3e} (tolerance {tol:.3e})")]
    OutsideSpan {
        label: String,
        residual: f64,
        tol: f64,
    },

    #[error("{label}: basis is numerically dependent (rank {rank} of {size})")]
    DependentBasis {
        label: String,
        rank: usize,
        size: usize,
    },

    #[error("dimension mismatch for {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("ambient dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("invalid tolerance configuration: {0}")]
    InvalidTolerance(String),

    #[error("empty input for {0}")]
    EmptyInput(&'static str),

    #[error("operation requires a fermion lattice")]
    FermiOnly,

    #[error("structural invariant '{relation}' fails at construction: residual {residual:.3e}")]
    StructuralInvariant { relation: String, residual: f64 },

    #[error("lattice has {available} sites but the operation needs {needed}")]
    HorizonExceeded { needed: usize, available: usize },

    #[error(
        "operation needs a full matrix algebra domain (span dimension {span_dim}, ambient {ambient_dim})"
    )]
    NoMatrixUnits { span_dim: usize, ambient_dim: usize },

    #[error("map is not completely positive: min Choi eigenvalue {min_eig:.3e}")]
    NotCompletelyPositive { min_eig: f64 },

    #[error("conditional expectation axiom {axiom} fails: residual {residual:.3e}")]
    ConditionalExpectationAxiom { axiom: &'static str, residual: f64 },

    #[error("amplitude normalization fails: ||E0(K*K) - 1|| = {residual:.3e}")]
    AmplitudeNotNormalized { residual: f64 },

    #[error("element does not commute with the reference algebra: residual {residual:.3e}")]
    CommutantMembership { residual: f64 },

    #[error(
        "transition expectation violates the Markov range condition at basis element {index}: residual {residual:.3e}"
    )]
    MarkovViolation { index: usize, residual: f64 },

    #[error("kernel is incompatible with the local conditional expectation: residual {residual:.3e}")]
    KernelCompatibility { residual: f64 },

    #[error("no positive fixed point at eigenvalue 1: leading eigenvalue modulus {leading:.6e}")]
    NoBoundaryFixedPoint { leading: f64 },

    #[error("boundary factor is outside the admissible commutant: residual {residual:.3e}")]
    BoundaryFactor { residual: f64 },

    #[error("initial functional is degenerate: phi(b0) = {value:.3e}")]
    DegenerateInitialState { value: f64 },

    #[error("chain spec is inconsistent: {0}")]
    ChainSpec(String),

    #[error("query is malformed: {0}")]
    Query(String),

    #[error("matrix literal is malformed: {0}")]
    Literal(String),
}
