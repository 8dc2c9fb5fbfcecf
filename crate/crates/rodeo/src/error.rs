//! Error types shared across the library.

use thiserror::Error;

/// Library-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments or configuration (dimension mismatches, bad flags).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Numerical-domain failure (non-PSD matrix, singular system, non-finite value).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A numerical failure annotated with the recursion step at which it occurred.
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the filter/smoother step index it occurred at.
    pub fn at_step(self, step: usize) -> Error {
        match self {
            // Keep the innermost step; re-wrapping would obscure the origin.
            Error::Step { .. } => self,
            other => Error::Step { step, source: Box::new(other) },
        }
    }

    /// The step index attached via [`Error::at_step`], if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::Step { step, .. } => Some(*step),
            _ => None,
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

pub(crate) fn numerical<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numerical(msg.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_step_keeps_innermost_index() {
        let e = Error::Numerical("bad".into()).at_step(3).at_step(7);
        assert_eq!(e.step(), Some(3));
        assert!(e.to_string().contains("step 3"));
    }
}
