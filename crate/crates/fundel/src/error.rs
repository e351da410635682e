//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants carry
//! enough context (paths, line numbers, document ids) that a CLI can print an
//! actionable message without re-deriving where the failure happened.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by registry/corpus ingestion, model training and
/// inference, and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path that was touched.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A JSONL record that could not be parsed. `line` is 1-based.
    #[error("{path}:{line}: malformed record: {source}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    /// Two registry records share the same entity id.
    #[error("{path}:{line}: duplicate entity id {id:?}")]
    DuplicateEntity {
        path: PathBuf,
        line: usize,
        id: String,
    },

    /// A registry record carries no names.
    #[error("{path}:{line}: entity {id:?} has an empty name list")]
    EmptyNames {
        path: PathBuf,
        line: usize,
        id: String,
    },

    /// An annotation span does not fit the document text.
    #[error("document {doc_id:?}: span {start}..{end} out of bounds (text has {len} chars)")]
    SpanOutOfBounds {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    /// The recorded surface string disagrees with the text slice it points at.
    #[error(
        "document {doc_id:?}: span {start}..{end} reads {found:?} but the annotation says {expected:?}"
    )]
    SurfaceMismatch {
        doc_id: String,
        start: usize,
        end: usize,
        expected: String,
        found: String,
    },

    /// Two annotations in one document overlap.
    #[error("document {doc_id:?}: annotations {a_start}..{a_end} and {b_start}..{b_end} overlap")]
    OverlappingSpans {
        doc_id: String,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },

    /// Disambiguation metrics were asked to compare predictions whose mention
    /// spans do not line up one-to-one with the gold spans.
    #[error(
        "prediction/gold mention sets differ: {missing_in_pred} gold spans unmatched, {extra_in_pred} predicted spans unmatched"
    )]
    MentionSetMismatch {
        missing_in_pred: usize,
        extra_in_pred: usize,
    },

    /// An entity id that should resolve against the registry does not.
    #[error("unknown entity id {id:?} ({context})")]
    UnknownEntity { id: String, context: String },

    /// A configuration value is outside its legal range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A model checkpoint is missing, incomplete, or inconsistent.
    #[error("checkpoint error at {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    /// Vocabulary construction or lookup failure.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// Tensor-level failure bubbled up from the math backend.
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    /// JSON (de)serialization failure outside line-oriented record parsing.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
