use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocab too small: need at least {min} tokens, got {got}")]
    VocabTooSmall { min: usize, got: usize },
    #[error("invalid token id {0}")]
    InvalidTokenId(u32),
    #[error("invalid merge #{index}: {reason}")]
    InvalidMerge { index: usize, reason: String },
    #[error("malformed vocab file at line {line}: {reason}")]
    VocabFormat { line: usize, reason: String },

    #[error("empty forbidden string")]
    EmptyPattern,

    #[error("non-regular or unsupported construct at offset {offset}: {what}")]
    UnsupportedRegex { offset: usize, what: String },
    #[error("regex syntax error at offset {offset}: {what}")]
    RegexSyntax { offset: usize, what: String },
    #[error("pattern accepts empty string")]
    AcceptsEmpty,
    #[error("pattern matches no string")]
    EmptyLanguage,
    #[error("repetition expands to {states} NFA states, above the limit of {limit}")]
    RepetitionTooLarge { states: usize, limit: usize },
    #[error("determinization exceeded {limit} DFA states")]
    DfaTooLarge { limit: usize },

    #[error(
        "table for {constraint} needs {cells} cells ({states} states x {tokens} tokens), \
         above the limit of {limit}; shrink the constraint or raise the cell limit"
    )]
    TableTooLarge {
        constraint: String,
        states: usize,
        tokens: usize,
        cells: usize,
        limit: usize,
    },
    #[error("tables were built for a vocabulary of {expected} tokens, got {got}")]
    VocabMismatch { expected: usize, got: usize },

    #[error("no constraints")]
    NoConstraints,
    #[error("no responses")]
    NoResponses,
    #[error("invalid decode configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {source}")]
    AtLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record: {0}")]
    Record(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
