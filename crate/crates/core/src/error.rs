use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state vector has zero norm")]
    ZeroVector,

    #[error("Hilbert-space dimension must be at least 2 (got {0})")]
    DimensionTooSmall(usize),

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (max |M - M^dagger| = {0:e})")]
    NotHermitian(f64),

    #[error("expectation has imaginary residue {residue:e} above tolerance {tolerance:e}")]
    ImaginaryResidue { residue: f64, tolerance: f64 },

    #[error("eigensolver failed to converge")]
    EigenNonConvergence,

    #[error("composite dimension {product} exceeds configured maximum {max}")]
    DimensionOverflow { product: usize, max: usize },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("collapse operators {first} and {second} do not commute (|[A,B]| = {norm:e})")]
    NonCommuting {
        first: usize,
        second: usize,
        norm: f64,
    },

    #[error("operator does not commute with the Hamiltonian (|[G,H]| = {0:e})")]
    NotConserved(f64),

    #[error("integrator aborted at step {step} (t = {time}): {reason}")]
    IntegratorAbort {
        step: usize,
        time: f64,
        reason: String,
        last_state: Vec<crate::C64>,
    },

    #[error("{failed} of {total} trajectories failed; first failure: {first}")]
    EnsembleFailure {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("only {classified} of {total} trajectories classified ({required:.1}% required)")]
    InsufficientClassification {
        classified: usize,
        total: usize,
        required: f64,
    },

    #[error("matrix source: {0}")]
    Source(String),
}

pub type Result<T> = std::result::Result<T, Error>;
