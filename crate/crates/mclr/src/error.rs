use std::fmt;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// A matrix that must have full column rank does not.
    RankDeficient(String),
    /// A matrix that must be positive definite is not.
    NotPositiveDefinite(String),
    /// Quadratic solve asked for with leading coefficient `a <= 0`.
    NonPositiveLeadingCoefficient(f64),
    /// Degrees of freedom below the admissible minimum.
    InvalidDf { df: usize, min: usize },
    /// Dimension mismatch or out-of-range dimension.
    InvalidDim(String),
    /// Simulation design parameters out of range.
    InvalidDesign(String),
    /// A numeric precondition on user input is violated.
    InvalidInput(String),
    /// Input file could not be parsed; `line` is 1-based.
    Parse { line: u64, message: String },
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 = input/parse error,
    /// 3 = precondition violation, 4 = internal numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Io(_) => 2,
            Error::RankDeficient(_)
            | Error::InvalidDf { .. }
            | Error::InvalidDim(_)
            | Error::InvalidDesign(_)
            | Error::InvalidInput(_) => 3,
            Error::NotPositiveDefinite(_) | Error::NonPositiveLeadingCoefficient(_) => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::RankDeficient(what) => write!(f, "rank deficient: {what}"),
            Error::NotPositiveDefinite(what) => write!(f, "not positive definite: {what}"),
            Error::NonPositiveLeadingCoefficient(a) => {
                write!(f, "leading quadratic coefficient must be positive, got {a}")
            }
            Error::InvalidDf { df, min } => {
                write!(f, "degrees of freedom {df} below minimum {min}")
            }
            Error::InvalidDim(msg) => write!(f, "invalid dimension: {msg}"),
            Error::InvalidDesign(msg) => write!(f, "invalid design: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
