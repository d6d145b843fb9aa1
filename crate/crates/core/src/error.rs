use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("annotation {annotation_id}: {message}")]
    Integrity { annotation_id: u64, message: String },

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("sample cache holds {available} samples, {needed} needed")]
    CacheUnderfill { needed: usize, available: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("trainer: {0}")]
    Trainer(String),

    #[error("search failed: none of {total} trials succeeded")]
    SearchFailed {
        total: usize,
        ledger: Box<crate::search::Ledger>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Map a serde_json error to a byte offset in `raw`.
    pub(crate) fn json(raw: &[u8], err: serde_json::Error) -> Self {
        Self::Parse {
            offset: byte_offset(raw, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

/// serde_json reports 1-based line/column; convert back to a byte offset.
fn byte_offset(raw: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut start = 0;
    for _ in 1..line {
        match raw[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start += p + 1,
            None => break,
        }
    }
    (start + column.saturating_sub(1)).min(raw.len())
}
