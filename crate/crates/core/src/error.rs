//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by corpus processing, training, codecs, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// No token survived min-count filtering.
    #[error("empty vocabulary: no token occurs at least {min_count} times")]
    EmptyVocabulary { min_count: u64 },

    /// A NaN or infinite value was encountered where a finite one is required.
    #[error("non-finite value {value} in {context}")]
    NonFinite { context: String, value: f64 },

    /// Training aborted because a score or gradient went non-finite.
    #[error("training diverged: non-finite {what} at word id {word_id} (progress {progress:.1}%)")]
    Diverged {
        what: &'static str,
        word_id: u32,
        progress: f64,
    },

    /// A matrix entry is not a member of the scheme codebook.
    #[error("value {value} at row {row}, column {col} is not in the {bits}-bit codebook")]
    NotInCodebook {
        row: usize,
        col: usize,
        value: f64,
        bits: u8,
    },

    /// Packed payload length does not match rows * bytes-per-row.
    #[error("payload length {actual} is not a multiple of {bytes_per_row} bytes per row")]
    PayloadSize {
        actual: usize,
        bytes_per_row: usize,
    },

    /// Malformed packed vector file (magic, version, or truncation).
    #[error("bad packed vector file: {0}")]
    BadPackedFile(String),

    /// Text parse failure, with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Words in the text vector format must not contain whitespace.
    #[error("word {word:?} contains whitespace and cannot be saved in the text format")]
    WordWithWhitespace { word: String },

    /// Cosine similarity of a zero vector is undefined.
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    /// Rank correlation of a constant list is undefined.
    #[error("rank correlation is undefined: {which} list is constant")]
    ConstantRanks { which: &'static str },

    /// Fewer than two similarity pairs were evaluable after OOV skipping.
    #[error("only {evaluated} of {total} pairs are in vocabulary; need at least 2")]
    TooFewPairs { evaluated: usize, total: usize },

    /// No analogy question had all four words in vocabulary.
    #[error("no analogy question is fully in vocabulary ({skipped} skipped)")]
    NoEvaluableQuestions { skipped: usize },

    /// An evaluation dataset contained no rows.
    #[error("dataset {path:?} is empty")]
    EmptyDataset { path: String },

    /// Lookup of a word that is not in the vocabulary.
    #[error("word {word:?} is not in the vocabulary; closest matches: {}", suggestions.join(", "))]
    UnknownWord {
        word: String,
        suggestions: Vec<String>,
    },

    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
