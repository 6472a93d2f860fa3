//! Crate-wide error type.

use std::io;
use std::path::PathBuf;

/// Error raised by any operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("{op}: dimension mismatch ({left} vs {right})")]
    Dimension {
        op: &'static str,
        left: usize,
        right: usize,
    },

    /// An input is mathematically unusable (e.g. a zero-norm vector fed to
    /// cosine similarity). Raised instead of silently returning a default.
    #[error("{op}: degenerate input: {detail}")]
    Degenerate { op: &'static str, detail: String },

    /// Invalid configuration value or combination.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Filesystem failure.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Malformed record in a data file; `line` is 1-based.
    #[error("{}:{line}: {detail}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    /// A value does not fit the fixed-point encoding range.
    #[error("component {index} out of encodable range: |{value}| > {bound}")]
    Overflow { index: usize, value: f64, bound: f64 },

    /// Key generation or ciphertext manipulation failed.
    #[error("crypto failure: {0}")]
    Crypto(String),

    /// Evaluation references chunk ids that are not present in the index.
    #[error("golden ids missing from index: {0:?}")]
    MissingGolden(Vec<String>),

    /// Failure during a federated round, with round and client context.
    #[error("round {round}, client {client}: {source}")]
    Round {
        round: usize,
        client: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_round(self, round: usize, client: u64) -> Error {
        Error::Round {
            round,
            client,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
