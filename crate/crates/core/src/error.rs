use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Caller handed in something outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Input file is well-formed but uses an unsupported or mismatched layout.
    #[error("format error: {0}")]
    Format(String),
    /// Input could not be parsed.
    #[error("parse error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, msg: String },
    /// Tensor or layer shape disagrees with the network description.
    #[error("shape error in layer `{layer}`: {msg}")]
    Shape { layer: String, msg: String },
    /// A pipeline stage ran before the stage that produces its inputs.
    #[error("missing prerequisite {path:?}: run `{stage}` first")]
    MissingPrerequisite { stage: &'static str, path: PathBuf },
    #[error("config error in {path:?}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn parse(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::parse(e.position().map(|p| p.line() as usize), e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::parse(Some(e.line()), e.to_string())
    }
}
