//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no Item headings found in filing `{0}`")]
    NoItemsFound(String),

    #[error("duplicate Item label `{label}` in filing `{filing_id}`")]
    DuplicateItem { filing_id: String, label: String },

    #[error("unknown tokenizer rule `{0}`")]
    UnknownTokenizer(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty lexicon at `{0}`")]
    EmptyLexicon(String),

    #[error("empty item `{0}`")]
    EmptyItem(String),

    #[error("empty tree for item `{0}`")]
    EmptyTree(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedding space mismatch: `{0}` vs `{1}`")]
    SpaceMismatch(String, String),

    #[error("no index for filing `{0}`")]
    IndexMissing(String),

    #[error("invalid retrieval budget k={0}, need k >= 1")]
    InvalidBudget(usize),

    #[error("filing mismatch: result is for `{result}`, gold record is for `{gold}`")]
    FilingMismatch { result: String, gold: String },

    #[error("index format version {found} not supported (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checksum mismatch for `{0}`")]
    ChecksumMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
