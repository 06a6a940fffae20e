use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A denominator vanished or changed sign.
    #[error("singular: {0}")]
    Singular(String),

    /// A root finder could not bracket a solution.
    #[error("no root: {0}")]
    NoRoot(String),

    /// The data cannot support the requested estimate.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// The input does not satisfy a structural precondition of the method.
    #[error("incompatible input: {0}")]
    Incompatible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("histogram has no bins")]
    EmptyHistogram,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    ///
    /// Usage, configuration and I/O problems map to 1; numerical and
    /// degenerate-data failures map to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::EmptyHistogram
            | Error::Incompatible(_)
            | Error::Io(_) => 1,
            Error::Domain(_) | Error::Singular(_) | Error::NoRoot(_) | Error::Degenerate(_) => 2,
        }
    }
}
