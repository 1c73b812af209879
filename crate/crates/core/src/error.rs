use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid samples at {sample_rate:.4e} Hz but the signal needs at least {required:.4e} Hz to avoid aliasing")]
    Aliasing { sample_rate: f64, required: f64 },

    #[error("time grid too short: {outside:.3e} of the envelope mass lies outside it")]
    GridTooShort { outside: f64 },

    #[error("coincidence model left the few-photon regime ({detail}); lower mu")]
    ModelOverflow { detail: String },

    #[error("fit failed after {iterations} iterations (residual sum of squares {rss:.4e}): {reason}")]
    FitFailure {
        reason: String,
        iterations: usize,
        rss: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("ambiguity unresolved: beat moved by {observed:.4e} Hz, expected {expected:.4e} Hz")]
    AmbiguityUnresolved { observed: f64, expected: f64 },

    #[error("beat frequency {beat:.4e} Hz lies outside the analyzer span {span:.4e} Hz")]
    OutOfSpan { beat: f64, span: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
