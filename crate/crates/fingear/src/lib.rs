//! FinGEAR: a structure-aware hierarchical retrieval engine for long,
//! itemized financial filings.
//!
//! The pipeline has four stages:
//!
//! 1. **Ingest** ([`ingest`]): parse markdown filings into SEC Item sections
//!    and cut each Item into overlapping fixed-length token chunks.
//! 2. **Index** ([`flam`], [`tree`]): cluster a financial lexicon and count
//!    per-Item term frequencies (FLAM), then build a Summary Tree and a
//!    topology-identical Question Tree per Item via embedding, dimensionality
//!    reduction and Gaussian-mixture soft clustering.
//! 3. **Retrieve** ([`retrieval`]): allocate the retrieval budget across
//!    Items from FLAM weights, beam-traverse both trees (BM25 over summaries,
//!    cosine over sub-questions), pool and deduplicate leaf hits, then rerank
//!    in two stages (cross-tree, cross-Item).
//! 4. **Evaluate** ([`eval`]): precision/recall/F1/relevancy at several
//!    depths plus downstream answer accuracy with a pluggable reader.
//!
//! All external-model capabilities go through the [`providers`] abstraction,
//! which ships deterministic offline stubs and a JSON-over-HTTP remote
//! contract, so the whole engine is testable without network access.

pub mod bm25;
pub mod error;
pub mod eval;
pub mod flam;
pub mod gmm;
pub mod ingest;
pub mod pipeline;
pub mod providers;
pub mod reduce;
pub mod retrieval;
pub mod store;
pub mod text;
pub mod tree;

pub use error::{Error, Result};
