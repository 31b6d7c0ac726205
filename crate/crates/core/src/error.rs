use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("solver diverged: {0}")]
    Diverged(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("timed out waiting for workers {missing:?}")]
    Timeout { missing: Vec<u32> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Process exit code reported by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension { .. }
            | Error::Config(_)
            | Error::Input(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::NonFinite(_) | Error::Diverged(_) | Error::NotConverged(_) => 3,
            Error::Transport(_) | Error::Protocol(_) | Error::Timeout { .. } => 4,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}
