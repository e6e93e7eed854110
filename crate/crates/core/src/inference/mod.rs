//! Answer-generating and embedding backends.

mod embed;
mod oracle;
mod wire;

use serde::{Deserialize, Serialize};

use crate::chunker::ChunkKind;
use crate::scalar::Scalar;

pub use embed::{
    cosine_distance, cosine_similarity, Embedder, EmbeddingVector, FallbackEmbedder,
    FALLBACK_DIMENSION,
};
pub use oracle::OracleBackend;
pub use wire::{RetryPolicy, WireBackend, WireConfig, WireEmbedder};

pub const NEGATIVE_PHRASE: &str = "does not exist";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("unknown category {0}")]
    UnknownCategory(usize),
    #[error(
        "cell {document_id}/{category_id}/{chunk_index} failed after {attempts} attempts: {last}"
    )]
    Exhausted {
        document_id: String,
        category_id: usize,
        chunk_index: usize,
        attempts: u32,
        last: Box<BackendError>,
    },
    #[error("embedding failed: {0}")]
    Embedding(String),
}

impl BackendError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub instruction: String,
    /// The chunk text.
    pub payload: String,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.instruction.trim().is_empty() || self.payload.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "instruction and payload must be non-empty".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Which (document, category, chunk) a request belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellContext {
    pub document_id: String,
    pub category_id: usize,
    pub chunk_index: usize,
    pub word_range: (usize, usize),
}

/// A model that answers one instruction over one chunk. Implementations must
/// be callable from several threads at once.
pub trait ChatBackend: Send + Sync {
    fn generate(&self, request: &ChatRequest, cell: &CellContext) -> Result<String, BackendError>;
}

/// Closure-backed backend, mostly for tests.
pub struct FnBackend<F>(F);

impl<F> FnBackend<F>
where
    F: Fn(&ChatRequest, &CellContext) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest, &CellContext) -> Result<String, BackendError> + Send + Sync,
{
    fn generate(&self, request: &ChatRequest, cell: &CellContext) -> Result<String, BackendError> {
        (self.0)(request, cell)
    }
}

/// Lowercased, trimmed of whitespace and punctuation, starts with "does not exist".
pub fn is_negative_answer(answer: &str) -> bool {
    let trimmed = answer
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || "“”‘’".contains(c))
        .to_lowercase();
    trimmed.starts_with(NEGATIVE_PHRASE)
}

/// One model response for one (chunk, question) pair, with its heuristic weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Candidate<T = f64> {
    pub document_id: String,
    pub category_id: usize,
    pub chunk_index: usize,
    pub chunk_kind: ChunkKind,
    pub chunk_word_range: (usize, usize),
    pub answer_text: String,
    pub is_negative: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector<T>>,
    #[serde(default)]
    pub icw_weight: Option<T>,
    #[serde(default)]
    pub dbl_weight: Option<T>,
    #[serde(default)]
    pub final_score: Option<T>,
}

impl<T: Scalar> Candidate<T> {
    pub fn new(cell: &CellContext, chunk_kind: ChunkKind, answer_text: impl Into<String>) -> Self {
        let answer_text = answer_text.into();
        Self {
            document_id: cell.document_id.clone(),
            category_id: cell.category_id,
            chunk_index: cell.chunk_index,
            chunk_kind,
            chunk_word_range: cell.word_range,
            is_negative: is_negative_answer(&answer_text),
            answer_text,
            embedding: None,
            icw_weight: None,
            dbl_weight: None,
            final_score: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_normalization() {
        assert!(is_negative_answer("Does not exist"));
        assert!(is_negative_answer("  \"Does not exist.\" "));
        assert!(is_negative_answer("does not exist in this excerpt"));
        assert!(is_negative_answer("“Does Not Exist”"));
        assert!(!is_negative_answer("The clause does not exist here"));
        assert!(!is_negative_answer("May 1, 2020"));
    }

    #[test]
    fn request_validation() {
        let mut r = ChatRequest {
            model_name: "m".into(),
            instruction: "i".into(),
            payload: "p".into(),
            temperature: 0.0,
        };
        assert!(r.validate().is_ok());
        r.payload = " ".into();
        assert!(r.validate().is_err());
    }

    #[test]
    fn transient_classification() {
        assert!(BackendError::Transport("x".into()).is_transient());
        assert!(BackendError::Status {
            status: 503,
            body: String::new()
        }
        .is_transient());
        assert!(!BackendError::Status {
            status: 400,
            body: String::new()
        }
        .is_transient());
    }
}
