//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A false positive rate outside the open interval (0, 1).
    #[error("false positive rate {0} outside (0, 1)")]
    FprOutOfRange(f64),

    /// A score outside [0, 1].
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),

    /// A sample with no elements where at least one is required.
    #[error("empty {0} sample")]
    EmptySample(&'static str),

    /// Invalid segment count, region count, skew, fraction, or other parameter.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Region boundaries that are not strictly increasing from 0 to N.
    #[error("boundaries must be strictly increasing from 0 to the segment count")]
    InvalidBoundaries,

    /// Serialized filter does not start with the expected magic bytes.
    #[error("bad magic bytes in serialized filter")]
    BadMagic,

    /// Serialized filter has a format version this build does not understand.
    #[error("unsupported serialization format version {0}")]
    UnsupportedVersion(u16),

    /// Serialized filter ends before its declared payload does.
    #[error("truncated serialized filter")]
    Truncated,

    /// Serialized filter payload fails its integrity checksum.
    #[error("checksum mismatch in serialized filter")]
    ChecksumMismatch,

    /// Serialized filter carries more bytes than its payload declares.
    #[error("trailing bytes after serialized filter payload")]
    TrailingBytes,

    /// A score file that parses as CSV but violates the expected schema.
    #[error("malformed score file: {0}")]
    MalformedScoreFile(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// An I/O error annotated with the path it happened on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
