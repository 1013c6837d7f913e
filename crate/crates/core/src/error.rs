use thiserror::Error;

/// Errors raised by the library. The CLI maps the variants to exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("service rates must be pairwise distinct: mu_{i} = mu_{j}")]
    EqualRates { i: usize, j: usize },
    #[error("division by zero: {0}")]
    DivisionByZero(String),
    #[error("value overflows the linear domain: {0}")]
    Overflow(String),
    #[error("degenerate quadratic: {0}")]
    Degenerate(String),
    #[error("complex roots: discriminant {0:e} < 0")]
    ComplexRoots(f64),
    #[error("graph is not regular: {0}")]
    NotRegular(String),
    #[error("not a simple extension: {0}")]
    NotExtension(String),
    #[error("state space of {states} states exceeds budget {budget}")]
    Budget { states: u128, budget: u128 },
    #[error("no convergence after {iterations} sweeps (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Numerical failures as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DivisionByZero(_)
                | Error::Overflow(_)
                | Error::Degenerate(_)
                | Error::ComplexRoots(_)
                | Error::NoConvergence { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
