//! Error type shared across the crate.
//!
//! Variants split along the line the command-line tool cares about:
//! everything that means "the inputs or configuration were wrong" maps to
//! exit code 1, everything that means "the run itself failed" maps to 2.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value or inconsistent experiment setup.
    #[error("config error: {0}")]
    Config(String),

    /// A function argument violated its documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor or batch shapes do not line up.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// A text input (CSV, TOML) could not be parsed.
    #[error("parse error in {origin} at line {line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    /// Parsed fine but the data violates its contract (label range, pixel range).
    #[error("data error: {0}")]
    Data(String),

    /// A checkpoint file is malformed or truncated.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// An operation was called in a state that cannot serve it.
    #[error("state error: {0}")]
    State(String),

    /// Cross-network coordination broke (barrier misuse, mismatched cohorts).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI reports for this error.
    ///
    /// 1 = bad inputs/config, 2 = runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Argument(_)
            | Error::Shape { .. }
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Format(_) => 1,
            Error::State(_) | Error::Protocol(_) | Error::Io { .. } => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_config_from_runtime() {
        assert_eq!(Error::Config("bad".into()).exit_code(), 1);
        assert_eq!(Error::Argument("bad".into()).exit_code(), 1);
        assert_eq!(
            Error::Parse {
                origin: "x.csv".into(),
                line: 1,
                message: "not a number".into()
            }
            .exit_code(),
            1
        );
        assert_eq!(Error::Format("truncated".into()).exit_code(), 1);
        assert_eq!(Error::State("no forward cache".into()).exit_code(), 2);
        assert_eq!(Error::Protocol("barrier".into()).exit_code(), 2);
        assert_eq!(
            Error::io("/nope", std::io::Error::from(std::io::ErrorKind::NotFound)).exit_code(),
            2
        );
    }

    #[test]
    fn messages_carry_context() {
        let e = Error::Shape {
            context: "conv forward".into(),
            expected: "[N, 3, 8, 8]".into(),
            actual: "[N, 1, 8, 8]".into(),
        };
        let msg = e.to_string();
        assert!(msg.contains("conv forward"), "message was: {msg}");
        assert!(msg.contains("[N, 3, 8, 8]"), "message was: {msg}");
    }
}
