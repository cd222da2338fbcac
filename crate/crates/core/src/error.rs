use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A constraint only carries a path map, so it cannot enter the grid DP.
    #[error("constraint {index} is path-dependent and not DP-compatible")]
    PathDependentConstraint { index: usize },

    /// A transition probability left `[0, 1]`.
    #[error("CFL violation at (t={t}, x={x}, a={a}): {which} = {value}")]
    CflViolation {
        t: f64,
        x: f64,
        a: f64,
        which: &'static str,
        value: f64,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown example id {0}")]
    UnknownExample(u32),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
