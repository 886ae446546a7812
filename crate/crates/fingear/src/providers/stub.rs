//! Deterministic offline providers.
//!
//! Every stub is a pure function of its inputs and the configured seed, so
//! full pipeline runs are byte-reproducible without any model access:
//!
//! - embeddings: feature hashing of word tokens into `dim` buckets with
//!   signed counts, L2-normalized; each space uses a different hash seed
//! - summaries: first sentence of each paragraph, up to a word budget
//! - questions: templated over the summary's most frequent content tokens
//! - pair score: cosine over binary token bags
//! - answers: first number-bearing sentence of the best query-matching passage

use crate::error::{Error, Result};
use crate::text::{self, fnv1a64};

use super::{EmbeddingVector, Provider, SpaceTag};

/// Word budget for extractive stub summaries.
const SUMMARY_WORD_BUDGET: usize = 120;

#[derive(Debug, Clone)]
pub struct StubProvider {
    seed: u64,
    dim: usize,
}

impl StubProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { seed, dim }
    }

    fn space_seed(&self, space: SpaceTag) -> u64 {
        fnv1a64(self.seed, space.as_str().as_bytes())
    }

    fn embed_one(&self, text: &str, space: SpaceTag) -> EmbeddingVector {
        let seed = self.space_seed(space);
        let mut acc = vec![0.0f64; self.dim];
        for token in text::word_tokens(text) {
            let h = fnv1a64(seed, token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if norm == 0.0 {
            // No tokens at all: fixed unit vector keeps the contract.
            let mut v = vec![0.0f32; self.dim];
            v[0] = 1.0;
            v
        } else {
            acc.iter().map(|v| (v / norm) as f32).collect()
        };
        EmbeddingVector {
            values,
            space_tag: space,
        }
    }
}

impl Provider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn embed_texts(&self, texts: &[String], space: SpaceTag) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_one(t, space)).collect())
    }

    fn summarize(&self, text: &str, _template: &str) -> Result<String> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("summarize needs non-empty text".into()));
        }
        let mut words = 0usize;
        let mut parts = Vec::new();
        for para in text::paragraphs(text) {
            let Some(first) = text::sentences(para).into_iter().next() else {
                continue;
            };
            let n = first.split_whitespace().count();
            parts.push(first);
            words += n;
            if words >= SUMMARY_WORD_BUDGET {
                break;
            }
        }
        if parts.is_empty() {
            // Whitespace-only paragraphs were filtered; fall back to a prefix.
            parts.push(
                text.split_whitespace()
                    .take(SUMMARY_WORD_BUDGET)
                    .collect::<Vec<_>>()
                    .join(" "),
            );
        }
        Ok(parts.join(" "))
    }

    fn generate_questions(&self, summary: &str, n: usize) -> Result<Vec<String>> {
        if n == 0 {
            return Err(Error::InvalidInput("need n >= 1 questions".into()));
        }
        // Rank distinct content tokens by frequency, first occurrence breaking ties.
        let tokens = text::word_tokens(summary);
        let mut order = Vec::new();
        let mut counts: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
        for t in &tokens {
            if text::is_stopword(t) {
                continue;
            }
            if !counts.contains_key(t.as_str()) {
                order.push(t.as_str());
            }
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        let mut ranked: Vec<&str> = order.clone();
        ranked.sort_by(|a, b| {
            counts[b]
                .cmp(&counts[a])
                .then_with(|| order.iter().position(|t| t == a).cmp(&order.iter().position(|t| t == b)))
        });
        if ranked.is_empty() {
            // Stopword-only or empty summary; fall back to any token.
            ranked = if tokens.is_empty() {
                vec!["the document"]
            } else {
                vec![tokens[0].as_str()]
            };
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let tok = ranked[i % ranked.len()];
            if i < ranked.len() {
                out.push(format!("What is stated about {tok}?"));
            } else {
                out.push(format!("What is stated about {tok} (detail {})?", i + 1));
            }
        }
        Ok(out)
    }

    fn score_pair(&self, query: &str, passage: &str) -> Result<f64> {
        let q: std::collections::BTreeSet<String> = text::word_tokens(query).into_iter().collect();
        let p: std::collections::BTreeSet<String> =
            text::word_tokens(passage).into_iter().collect();
        if q.is_empty() || p.is_empty() {
            return Ok(0.0);
        }
        let inter = q.intersection(&p).count() as f64;
        Ok(inter / ((q.len() as f64) * (p.len() as f64)).sqrt())
    }

    fn read_answer(&self, query: &str, passages: &[String]) -> Result<String> {
        let q_tokens: std::collections::BTreeSet<String> =
            text::word_tokens(query).into_iter().collect();
        for passage in passages {
            let p_tokens: std::collections::BTreeSet<String> =
                text::word_tokens(passage).into_iter().collect();
            if q_tokens.is_disjoint(&p_tokens) {
                continue;
            }
            for sentence in text::sentences(passage) {
                if text::contains_number(&sentence) {
                    return Ok(sentence);
                }
            }
        }
        Ok("unknown".to_string())
    }
}
