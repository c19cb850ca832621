use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("quadrature order {0} is outside the supported range 2..=512")]
    InvalidOrder(usize),

    #[error("integrand evaluated to a non-finite value at z = {at}")]
    NonFinite { at: f64 },

    #[error("correlation {0} lies outside [-1, 1]")]
    CorrelationOutOfRange(f64),

    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),

    #[error("length quantity must be non-negative, got {0}")]
    NegativeLength(f64),

    #[error("degenerate state: zero length makes the correlation undefined")]
    DegenerateState,

    #[error("fixed-point iteration did not converge after {iterations} iterations (last iterate {last})")]
    NoConvergence { last: f64, iterations: usize },

    #[error("layer {layer} is outside 1..={depth}")]
    LayerOutOfRange { layer: usize, depth: usize },

    #[error("layerwise expressions exist only for offsets 0, 1 and 2 (got {0})")]
    UnsupportedOffset(usize),

    #[error("bracket [{lo}, {hi}] does not straddle chi1 = 1 (chi1 = {chi_lo} .. {chi_hi})")]
    BracketNotStraddling {
        lo: f64,
        hi: f64,
        chi_lo: f64,
        chi_hi: f64,
    },

    #[error("trajectory does not decay exponentially: {0}")]
    NotExponential(String),

    #[error("invalid fit input: {0}")]
    InvalidFitInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures caused by an iteration that never settled.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NoConvergence { .. } | Error::NotExponential(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
