use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// A record that breaks one of the domain invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("clip {clip_id:?}: field `{field}` {message}")]
pub struct InvariantError {
    pub clip_id: String,
    pub field: &'static str,
    pub message: String,
}

impl InvariantError {
    pub fn new(clip_id: &str, field: &'static str, message: impl Into<String>) -> Self {
        Self {
            clip_id: clip_id.to_owned(),
            field,
            message: message.into(),
        }
    }
}

/// Failure of a call to an external ASR, teacher or scorer service.
///
/// An empty transcript is never represented here; it is a successful result.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("timed out after {attempts} attempt(s): {cause}")]
    Timeout { attempts: u32, cause: String },
    #[error("engine returned status {status}: {body}")]
    EngineError { status: u16, body: String },
    #[error("malformed response: {excerpt}")]
    MalformedResponse { excerpt: String },
}

impl ServiceError {
    pub fn malformed(payload: &str) -> Self {
        ServiceError::MalformedResponse {
            excerpt: excerpt(payload, 200),
        }
    }
}

/// First `max_chars` characters of `s`, with an ellipsis when truncated.
pub fn excerpt(s: &str, max_chars: usize) -> String {
    let mut out: String = s.chars().take(max_chars).collect();
    if s.chars().nth(max_chars).is_some() {
        out.push('…');
    }
    out
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invariant {
        line: usize,
        #[source]
        source: InvariantError,
    },
    #[error("rejected record: {0}")]
    Rejected(#[from] InvariantError),
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl ManifestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        ManifestError::Io {
            path: path.into(),
            source,
        }
    }
}
