use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of a function (non-finite, negative width...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration or constructor argument.
    #[error("config error: {0}")]
    Config(String),

    /// Array shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Structural(String),

    /// A computed quantity became NaN or infinite.
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },

    /// The a priori bound certificate was violated during integration.
    #[error("integrator step error at t={t}: {what} observed {observed} exceeds bound {bound} (step size too large?)")]
    IntegratorStep {
        t: f64,
        what: &'static str,
        observed: f64,
        bound: f64,
    },

    /// Picard iteration ran out of iterations.
    #[error("Picard iteration did not converge in {iterations} iterations (last distance {last_distance:e}, last contraction ratio {last_ratio})")]
    NonConvergence {
        iterations: usize,
        last_distance: f64,
        last_ratio: f64,
    },

    /// A stored history would exceed the configured memory limit.
    #[error("memory guard: history needs {needed} bytes, limit is {limit}")]
    MemoryGuard { needed: usize, limit: usize },

    /// A model or data specification failed regularity validation.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A check of an experiment outcome failed.
    #[error("assertion failed: {0}")]
    Assertion(String),

    /// Broken internal invariant.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
