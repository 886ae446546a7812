//! Okapi BM25 scoring over a sibling document set.
//!
//! Traversal compares the children of one node at a time, so corpus
//! statistics (N, document frequencies, average length) are computed over
//! exactly the sibling set being scored rather than a global index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::text::{self, TokenizerRule};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Registered tokenizer name used for both queries and documents.
    pub tokenizer: String,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.5,
            b: 0.75,
            tokenizer: "stem-en".to_string(),
        }
    }
}

impl Bm25Params {
    pub fn rule(&self) -> Result<TokenizerRule> {
        text::tokenizer_by_name(&self.tokenizer)
    }
}

/// Statistics over the document set being scored.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avgdl: f64,
    pub df: BTreeMap<String, usize>,
}

/// Compute N, per-term document frequency, and average document length over
/// a set of tokenized documents.
pub fn corpus_stats(docs: &[Vec<String>]) -> CorpusStats {
    let n_docs = docs.len();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut total_len = 0usize;
    for doc in docs {
        total_len += doc.len();
        let mut seen = std::collections::BTreeSet::new();
        for tok in doc {
            if seen.insert(tok.as_str()) {
                *df.entry(tok.clone()).or_insert(0) += 1;
            }
        }
    }
    CorpusStats {
        n_docs,
        avgdl: if n_docs == 0 {
            0.0
        } else {
            total_len as f64 / n_docs as f64
        },
        df,
    }
}

/// Okapi BM25:
///
/// ```text
/// score = sum over query terms t of
///         IDF(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
/// IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
/// ```
///
/// Always non-negative; terms absent from the document contribute zero.
pub fn bm25_score(
    query_tokens: &[String],
    doc_tokens: &[String],
    stats: &CorpusStats,
    params: &Bm25Params,
) -> f64 {
    if doc_tokens.is_empty() || stats.n_docs == 0 {
        return 0.0;
    }
    let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
    for tok in doc_tokens {
        *tf.entry(tok.as_str()).or_insert(0.0) += 1.0;
    }
    let dl = doc_tokens.len() as f64;
    let n = stats.n_docs as f64;
    let avgdl = if stats.avgdl > 0.0 { stats.avgdl } else { dl };

    let mut score = 0.0;
    for term in query_tokens {
        let Some(&freq) = tf.get(term.as_str()) else {
            continue;
        };
        let df = stats.df.get(term).copied().unwrap_or(0) as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let norm = freq + params.k1 * (1.0 - params.b + params.b * dl / avgdl);
        score += idf * freq * (params.k1 + 1.0) / norm;
    }
    score
}

/// Tokenize and score a query against each document in a sibling set.
pub fn score_siblings(query: &str, docs: &[String], params: &Bm25Params) -> Result<Vec<f64>> {
    let rule = params.rule()?;
    let query_tokens = text::tokenize(query, rule);
    let doc_tokens: Vec<Vec<String>> = docs.iter().map(|d| text::tokenize(d, rule)).collect();
    let stats = corpus_stats(&doc_tokens);
    Ok(doc_tokens
        .iter()
        .map(|doc| bm25_score(&query_tokens, doc, &stats, params))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn absent_term_contributes_zero() {
        let docs = vec![toks("cash flow statement")];
        let stats = corpus_stats(&docs);
        let score = bm25_score(&toks("revenue"), &docs[0], &stats, &Bm25Params::default());
        assert_eq!(score, 0.0);
    }

    #[test]
    fn single_doc_hand_computation() {
        // doc "cash cash": dl = 2 = avgdl, N = 1, df = 1
        // IDF = ln(1 + 0.5/1.5) = 0.28768, tf part = 2*2.5/(2+1.5) = 1.42857
        let docs = vec![toks("cash cash")];
        let stats = corpus_stats(&docs);
        let score = bm25_score(&toks("cash"), &docs[0], &stats, &Bm25Params::default());
        let expected = (1.0 + 0.5 / 1.5_f64).ln() * 2.0 * 2.5 / 3.5;
        assert!((score - expected).abs() < 1e-12);
        assert!((score - 0.4110).abs() < 1e-4);
    }

    #[test]
    fn length_normalization_penalizes_long_docs() {
        // Two docs so avgdl sits between their lengths; the long doc's score
        // for the same tf strictly decreases when b grows from 0 to 0.75.
        let docs = vec![toks("cash seven eight nine ten eleven twelve"), toks("cash")];
        let stats = corpus_stats(&docs);
        let score = |b: f64| {
            bm25_score(
                &toks("cash"),
                &docs[0],
                &stats,
                &Bm25Params {
                    k1: 1.5,
                    b,
                    tokenizer: "stem-en".into(),
                },
            )
        };
        assert!(score(0.75) < score(0.0));
    }

    #[test]
    fn scores_are_non_negative() {
        let docs = vec![toks("a b c"), toks("a a a a a a"), toks("z")];
        let stats = corpus_stats(&docs);
        for doc in &docs {
            let s = bm25_score(&toks("a z q"), doc, &stats, &Bm25Params::default());
            assert!(s >= 0.0);
        }
    }

    #[test]
    fn sibling_scoring_stems_query_and_docs() {
        let docs = vec!["revenues increased".to_string(), "liabilities".to_string()];
        let scores = score_siblings("revenue increase", &docs, &Bm25Params::default()).unwrap();
        assert!(scores[0] > 0.0, "stemming should match revenues~revenue");
        assert_eq!(scores[1], 0.0);
    }
}
