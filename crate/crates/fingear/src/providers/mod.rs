//! Pluggable external-model capabilities: embedding, summarization,
//! sub-question generation, pair scoring, relevancy judging, and answer
//! reading.
//!
//! Every capability runs either against a deterministic offline stub
//! ([`StubProvider`]) or a remote JSON-over-HTTP endpoint
//! ([`remote::RemoteProvider`], feature `remote`). The engine itself never
//! cares which.

mod stub;

#[cfg(feature = "remote")]
pub mod remote;

pub use stub::StubProvider;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 768;

/// Which embedding space a vector lives in. Vectors from different spaces
/// must never be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceTag {
    /// Lexicon-aligned space (term clustering).
    Lexicon,
    /// QA-aligned space (chunks, summaries, sub-questions, queries).
    Qa,
}

impl SpaceTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpaceTag::Lexicon => "lexicon",
            SpaceTag::Qa => "qa",
        }
    }
}

/// A unit-normalized embedding tagged with its space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub space_tag: SpaceTag,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity. Mixing spaces or dimensions is a contract
    /// violation and returns an error rather than a number.
    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64> {
        if self.space_tag != other.space_tag {
            return Err(Error::SpaceMismatch(
                self.space_tag.as_str().to_string(),
                other.space_tag.as_str().to_string(),
            ));
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        let na = self.l2_norm();
        let nb = other.l2_norm();
        if na == 0.0 || nb == 0.0 {
            return Ok(0.0);
        }
        Ok(dot / (na * nb))
    }
}

/// Prompt templates sent to remote providers. Defaults are the filing-domain
/// prompts used for summarization, titling, and sub-question generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub summarize_template: String,
    pub title_template: String,
    pub question_template: String,
}

pub const DEFAULT_SUMMARIZE_TEMPLATE: &str = "The content provided below is a subset of a 10-K filing. The 10-K report is a comprehensive document outlining the company's financial performance, including revenue, expenses, and profits. Your task is to generate a detailed summary using only the provided content, without embellishment. Summarize main topics, key insights (5-7), and unusual observations (1-2). Use clear paragraphs and Markdown headings.";

pub const DEFAULT_TITLE_TEMPLATE: &str =
    "Generate a title for a subsection of a 10-K report based on the provided summary.";

pub const DEFAULT_QUESTION_TEMPLATE: &str = "Suppose you are a financial analyst. Generate {num_questions} questions based on the provided summary, focusing on financial aspects and factual details.";

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            summarize_template: DEFAULT_SUMMARIZE_TEMPLATE.to_string(),
            title_template: DEFAULT_TITLE_TEMPLATE.to_string(),
            question_template: DEFAULT_QUESTION_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Check the required placeholders are present.
    pub fn validate(&self) -> Result<()> {
        if !self.question_template.contains("{num_questions}") {
            return Err(Error::Config(
                "question_template must contain the {num_questions} placeholder".into(),
            ));
        }
        Ok(())
    }

    /// Load templates from plain-text files in `dir` (summarize.txt,
    /// title.txt, question.txt), falling back to defaults for missing files.
    pub fn load_dir(dir: &std::path::Path) -> Result<Self> {
        let mut t = Self::default();
        let read = |name: &str| -> Option<String> {
            std::fs::read_to_string(dir.join(name))
                .ok()
                .map(|s| s.trim_end().to_string())
        };
        if let Some(s) = read("summarize.txt") {
            t.summarize_template = s;
        }
        if let Some(s) = read("title.txt") {
            t.title_template = s;
        }
        if let Some(s) = read("question.txt") {
            t.question_template = s;
        }
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Stub,
    Remote,
}

/// Configuration for one provider instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Base URL for remote mode, e.g. `http://localhost:8800/v1`.
    pub endpoint: Option<String>,
    pub model_name: String,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    /// Idempotent retries after a failed remote call.
    pub retries: u32,
    /// Embedding dimension.
    pub dimension: usize,
    /// Seed for the deterministic stub.
    pub seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Stub,
            endpoint: None,
            model_name: "stub".to_string(),
            timeout_secs: 30,
            max_concurrency: 4,
            retries: 2,
            dimension: DEFAULT_DIM,
            seed: 0,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == ProviderMode::Remote && self.endpoint.is_none() {
            return Err(Error::Config("remote provider mode requires an endpoint".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::Config("max_concurrency must be >= 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// The six external-model capabilities behind one object-safe trait.
/// Implementations must be safe to call concurrently.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    /// One unit-normalized vector per input text.
    fn embed_texts(&self, texts: &[String], space: SpaceTag) -> Result<Vec<EmbeddingVector>>;

    fn summarize(&self, text: &str, template: &str) -> Result<String>;

    /// Exactly `n` question strings.
    fn generate_questions(&self, summary: &str, n: usize) -> Result<Vec<String>>;

    /// Cross-encoder style relevance score; higher is more relevant.
    fn score_pair(&self, query: &str, passage: &str) -> Result<f64>;

    /// Semantic alignment of a passage set with the query, in [0, 1].
    fn judge_relevancy(&self, query: &str, passages: &[String]) -> Result<f64> {
        if passages.is_empty() {
            return Err(Error::InvalidInput("judge_relevancy needs >= 1 passage".into()));
        }
        let mut sum = 0.0;
        for p in passages {
            sum += self.score_pair(query, p)?.clamp(0.0, 1.0);
        }
        Ok(sum / passages.len() as f64)
    }

    /// Read an answer string out of ranked passages.
    fn read_answer(&self, query: &str, passages: &[String]) -> Result<String>;
}

/// Capability routing: each pipeline stage can be served by a different
/// provider instance (or all by the same one).
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Provider>,
    pub summarizer: Arc<dyn Provider>,
    pub questioner: Arc<dyn Provider>,
    pub scorer: Arc<dyn Provider>,
    pub judge: Arc<dyn Provider>,
    pub reader: Arc<dyn Provider>,
    pub templates: PromptTemplates,
}

impl Providers {
    /// Every capability served by the same instance.
    pub fn uniform(provider: Arc<dyn Provider>, templates: PromptTemplates) -> Self {
        Self {
            embedder: provider.clone(),
            summarizer: provider.clone(),
            questioner: provider.clone(),
            scorer: provider.clone(),
            judge: provider.clone(),
            reader: provider,
            templates,
        }
    }

    /// Deterministic offline stubs for every capability.
    pub fn stub(seed: u64) -> Self {
        Self::uniform(
            Arc::new(StubProvider::new(seed, DEFAULT_DIM)),
            PromptTemplates::default(),
        )
    }
}
