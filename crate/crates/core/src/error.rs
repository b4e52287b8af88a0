use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants fall into two classes: input/domain problems (bad arguments,
/// rational rotation numbers, violated preconditions) and numerical
/// failures (non-convergence, escapes, degenerate charts). The CLI maps the
/// first class to exit code 2 and the second to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("rational rotation number: {0}")]
    Rational(String),

    #[error("continued fraction too shallow: {0}")]
    Shallow(String),

    #[error("mean of vector field is {mean:e}, expected zero")]
    NonzeroMean { mean: f64 },

    #[error("small divisor |e^(2 pi i k alpha) - 1| = {magnitude:e} below floor at k = {k}")]
    DivisorUnderflow { k: i64, magnitude: f64 },

    #[error("{what} did not converge after {iterations} iterations (last error {last_error:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_error: f64,
    },

    #[error("Beltrami iteration diverged: |mu|_inf = {norm}")]
    Ellipticity { norm: f64 },

    #[error("point {0} left the strip")]
    Escape(String),

    #[error("univalence check failed: {0}")]
    Univalence(String),

    #[error("degenerate fundamental domain: {0}")]
    Degenerate(String),

    #[error("map is outside the admissible neighbourhood: {0}")]
    Admissibility(String),

    #[error("Fourier fit rejected: tail energy {tail:e} exceeds {tolerance:e}")]
    Fit { tail: f64, tolerance: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Ellipticity { .. }
                | Error::Escape(_)
                | Error::Univalence(_)
                | Error::Degenerate(_)
                | Error::Admissibility(_)
                | Error::Fit { .. }
                | Error::DivisorUnderflow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
