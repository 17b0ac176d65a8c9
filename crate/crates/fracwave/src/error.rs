//! Error type shared by all solver stages.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument lies outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Array lengths or matrix dimensions do not match.
    #[error("shape error: {0}")]
    Shape(String),

    /// Spatial resolution too coarse for the requested mode count.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// A model invariant is violated (non-degeneracy, parameter constraints).
    #[error("model error: {0}")]
    Model(String),

    /// Linear algebra failure (singular matrix, failed factorization).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Non-finite values appeared during time stepping.
    #[error("divergence error: {0}")]
    Divergence(String),

    /// The coefficient 1 - 2*kappa*u dropped below the safety margin.
    #[error("blow-up error: {0}")]
    BlowUp(String),

    /// Fixed-point iteration exhausted its budget without contracting.
    #[error("non-contraction error: fixed point did not converge in {iterations} iterations (last relative update {last_update:.3e})")]
    NonContraction { iterations: usize, last_update: f64 },

    /// The argument-principle count disagrees with the refined pole list.
    #[error("certification error: {0}")]
    Certification(String),

    /// A root is (numerically) multiple where a simple one is required.
    #[error("multiple-root error: {0}")]
    MultipleRoot(String),

    /// Both δ-sensitivity denominators vanish.
    #[error("degenerate error: {0}")]
    Degenerate(String),

    /// The excitation lacks an analytic fractional derivative and no sampled
    /// profile was supplied.
    #[error("specification error: {0}")]
    Specification(String),

    /// A hypothesis of the injectivity theorem fails at the given data.
    #[error("assumption violation: {hypothesis}: {detail}")]
    AssumptionViolation { hypothesis: String, detail: String },

    /// Invalid experiment configuration.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 2 for validation-class failures, 1 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Shape(_)
            | Error::Resolution(_)
            | Error::Validation(_)
            | Error::Specification(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
