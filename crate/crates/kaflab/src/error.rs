use std::path::PathBuf;

use crate::config::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Config { path: PathBuf, source: ConfigError },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] kaflab_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    /// The analysis ran but the requested step size is outside a stability
    /// region. Outputs are still written.
    #[error("unstable: {0}")]
    Unstable(String),
    /// A self-check completed and reported failures.
    #[error("{0}")]
    CheckFailed(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 2 configuration, 3 numerical, 4 IO.
    pub fn exit_code(&self) -> i32 {
        use kaflab_core::Error as E;
        match self {
            Error::Config { .. } | Error::Usage(_) => 2,
            Error::Core(e) => match e {
                E::InvalidParameter(_)
                | E::DimensionMismatch { .. }
                | E::DuplicateCenters { .. }
                | E::IllConditionedDictionary { .. }
                | E::SizeCap { .. } => 2,
                _ => 3,
            },
            Error::Unstable(_) => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
            Error::CheckFailed(_) => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cfg = Error::Config {
            path: "a.cfg".into(),
            source: ConfigError { line: 3, message: "x".into() },
        };
        assert_eq!(cfg.exit_code(), 2);
        assert_eq!(cfg.to_string(), "a.cfg: line 3: x");
        assert_eq!(Error::Core(kaflab_core::Error::Unstable { radius: 1.2 }).exit_code(), 3);
        assert_eq!(Error::Core(kaflab_core::Error::InvalidParameter("eta".into())).exit_code(), 2);
        assert_eq!(Error::io("x", std::io::Error::other("boom")).exit_code(), 4);
        assert_eq!(Error::format("x.csv", 2, "bad").exit_code(), 4);
    }
}
