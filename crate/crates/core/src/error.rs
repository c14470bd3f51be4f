use thiserror::Error;

use crate::hypergrad::GradientReport;
use crate::Scalar;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("coordinate {index} = {value} lies outside the {domain}")]
    Domain {
        domain: &'static str,
        index: usize,
        value: f64,
    },
    #[error("group {group} is off the unit simplex (sum = {sum})")]
    OffSimplex { group: usize, sum: f64 },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unsupported function: {0}")]
    Unsupported(String),
    #[error("iterate {iteration} left the interior of the domain")]
    Divergence { iteration: usize },
    #[error("rejected configuration: {0}")]
    Config(String),
    #[error("rejected input: {0}")]
    Input(String),
    #[error("linear solve did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("outer iteration {iteration}: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { what, expected, got }
    }

    pub(crate) fn at_outer(self, iteration: usize) -> Self {
        Error::Outer {
            iteration,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(what, expected, got))
    }
}

/// An iterative linear solve stopped above tolerance. The best iterate is kept so that
/// callers can still use the estimate.
#[derive(Debug, Clone)]
pub struct NotConverged<T: Scalar> {
    pub best: GradientReport<T>,
    pub residual: T,
    pub iterations: usize,
}

impl<T: Scalar> std::fmt::Display for NotConverged<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "linear solve did not converge: residual {:e} after {} iterations",
            self.residual, self.iterations
        )
    }
}

impl<T: Scalar> std::error::Error for NotConverged<T> {}

impl<T: Scalar> From<NotConverged<T>> for Error {
    fn from(e: NotConverged<T>) -> Self {
        Error::NotConverged {
            residual: e.residual.as_f64(),
            iterations: e.iterations,
        }
    }
}
