use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: timestamp {timestamp} does not increase past {previous}")]
    Ordering {
        line: usize,
        timestamp: f64,
        previous: f64,
    },

    /// A PCD document violates the named header key.
    #[error("PCD header {key}: {message}")]
    PcdHeader { key: &'static str, message: String },

    #[error("PGM: {0}")]
    Pgm(String),

    #[error("no timestamp overlap within {max_dt} s between trajectories")]
    NoOverlap { max_dt: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{} point(s) have no resolvable frame: {}", .0.len(), preview(.0))]
    UnresolvedFrames(Vec<usize>),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub fn pcd(key: &'static str, msg: impl Into<String>) -> Self {
        Error::PcdHeader {
            key,
            message: msg.into(),
        }
    }

    /// Wraps the error with a description of where it came from, e.g. a file name.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

fn preview(indices: &[usize]) -> String {
    const SHOWN: usize = 16;
    let mut s = indices
        .iter()
        .take(SHOWN)
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if indices.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}
