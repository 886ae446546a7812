//! Retrieval and answer evaluation.
//!
//! Metrics per retrieval depth: precision, recall, F1 (harmonic mean per
//! query, then macro-averaged), judge-scored relevancy, and downstream
//! answer accuracy with a pluggable reader. Reports break results down by
//! question type (numerical vs categorical) and reasoning hops (simple vs
//! complex).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{RankedResult, RetrievalEngine};
use crate::store::ChunkStore;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QType {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hops {
    Simple,
    Complex,
}

/// One gold question/answer record. Exactly one of `gold_chunk_ids` /
/// `gold_text` identifies the relevant evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldRecord {
    pub qid: String,
    pub question: String,
    pub filing_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gold_chunk_ids: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gold_text: Option<String>,
    pub answer: String,
    pub qtype: QType,
    pub hops: Hops,
}

impl GoldRecord {
    pub fn validate(&self) -> Result<()> {
        match (&self.gold_chunk_ids, &self.gold_text) {
            (Some(_), Some(_)) | (None, None) => Err(Error::InvalidInput(format!(
                "gold record {}: exactly one of gold_chunk_ids / gold_text required",
                self.qid
            ))),
            _ => {
                if self.answer.trim().is_empty() {
                    Err(Error::InvalidInput(format!(
                        "gold record {}: answer must be non-empty",
                        self.qid
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn n_gold(&self) -> usize {
        match &self.gold_chunk_ids {
            Some(ids) => ids.len().max(1),
            None => 1,
        }
    }
}

/// Load gold records from JSON Lines.
pub fn load_gold(path: &Path) -> Result<Vec<GoldRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GoldRecord = serde_json::from_str(&line)?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

fn normalize_text(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Per-retrieved-chunk relevance: `Some(gold_index)` when the chunk matches
/// one of the gold chunk ids, or `Some(0)` when the normalized gold text is
/// a substring of the chunk text.
pub fn match_gold(
    result: &RankedResult,
    gold: &GoldRecord,
    chunks: &ChunkStore,
) -> Result<Vec<Option<usize>>> {
    if result.filing_id != gold.filing_id {
        return Err(Error::FilingMismatch {
            result: result.filing_id.clone(),
            gold: gold.filing_id.clone(),
        });
    }
    let needle = gold.gold_text.as_deref().map(normalize_text);
    Ok(result
        .entries
        .iter()
        .map(|entry| {
            if let Some(ids) = &gold.gold_chunk_ids {
                ids.iter().position(|g| g == &entry.chunk_id)
            } else if let Some(needle) = &needle {
                let text = chunks.text(&entry.chunk_id).unwrap_or_default();
                normalize_text(text).contains(needle.as_str()).then_some(0)
            } else {
                None
            }
        })
        .collect())
}

/// Precision over retrieved, recall over distinct gold matched, harmonic F1.
/// `matches` holds one entry per retrieved chunk at the evaluated depth.
pub fn precision_recall_f1(matches: &[Option<usize>], n_gold: usize) -> (f64, f64, f64) {
    assert!(n_gold >= 1, "need at least one gold span");
    if matches.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let relevant = matches.iter().filter(|m| m.is_some()).count() as f64;
    let distinct: BTreeSet<usize> = matches.iter().flatten().copied().collect();
    let p = relevant / matches.len() as f64;
    let r = (distinct.len() as f64 / n_gold as f64).min(1.0);
    (p, r, f1_of(p, r))
}

/// Harmonic mean with the zero guard.
pub fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Judge-scored alignment of the retrieved texts with the query; empty
/// retrievals score zero without a provider call.
pub fn relevancy(query: &str, retrieved: &[String], judge: &dyn crate::providers::Provider) -> Result<f64> {
    if retrieved.is_empty() {
        return Ok(0.0);
    }
    judge.judge_relevancy(query, retrieved)
}

/// Answer matching: numeric answers compare after percent/unit
/// normalization with 1e-2 relative tolerance; categorical answers by
/// case-insensitive equality.
pub fn answers_match(got: &str, gold: &str, qtype: QType) -> bool {
    match qtype {
        QType::Categorical => normalize_text(got) == normalize_text(gold),
        QType::Numerical => {
            match (text::extract_number(got), text::extract_number(gold)) {
                (Some(a), Some(b)) => {
                    let scale = a.value.abs().max(b.value.abs());
                    if scale == 0.0 {
                        true
                    } else {
                        (a.value - b.value).abs() <= 1e-2 * scale
                    }
                }
                _ => normalize_text(got) == normalize_text(gold),
            }
        }
    }
}

/// Fraction of gold questions whose read answer matches, at depth `k`.
pub fn answer_accuracy(gold: &[GoldRecord], engine: &RetrievalEngine, k: usize) -> Result<f64> {
    if gold.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for record in gold {
        let result = engine.retrieve(&record.question, &record.filing_id, k)?;
        let texts: Vec<String> = result
            .entries
            .iter()
            .map(|e| engine.bundle.chunks.text(&e.chunk_id).unwrap_or_default().to_string())
            .collect();
        let answer = engine.providers.reader.read_answer(&record.question, &texts)?;
        if answers_match(&answer, &record.answer, record.qtype) {
            correct += 1;
        }
    }
    Ok(correct as f64 / gold.len() as f64)
}

/// Macro-averaged metrics at one depth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub relevancy: f64,
    pub answer_accuracy: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerQueryRow {
    pub qid: String,
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub relevancy: f64,
    pub answer_correct: bool,
    pub answer: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ablation: Option<String>,
    pub weighting: String,
    pub depths: Vec<DepthMetrics>,
    /// "numerical" / "categorical" -> per-depth metrics.
    pub by_qtype: std::collections::BTreeMap<String, Vec<DepthMetrics>>,
    /// "simple" / "complex" -> per-depth metrics.
    pub by_hops: std::collections::BTreeMap<String, Vec<DepthMetrics>>,
    pub per_query: Vec<PerQueryRow>,
}

impl EvalReport {
    /// Plain-text table: one row per depth plus breakdown sections.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        if let Some(ablation) = &self.ablation {
            let _ = writeln!(out, "ablation: {ablation}");
        }
        let _ = writeln!(out, "weighting: {}", self.weighting);
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>9} {:>6} {:>6} {:>9} {:>8}",
            "slice", "k", "precision", "recall", "f1", "relevancy", "accuracy"
        );
        let mut emit = |slice: &str, rows: &[DepthMetrics]| {
            for m in rows {
                let _ = writeln!(
                    out,
                    "{:<12} {:>6} {:>9.4} {:>6.4} {:>6.4} {:>9.4} {:>8.4}",
                    slice, m.k, m.precision, m.recall, m.f1, m.relevancy, m.answer_accuracy
                );
            }
        };
        emit("all", &self.depths);
        for (name, rows) in &self.by_qtype {
            emit(name, rows);
        }
        for (name, rows) in &self.by_hops {
            emit(name, rows);
        }
        out
    }
}

struct QueryOutcome {
    precision: f64,
    recall: f64,
    f1: f64,
    relevancy: f64,
    answer_correct: bool,
}

fn summarize(k: usize, outcomes: &[&QueryOutcome]) -> DepthMetrics {
    let n = outcomes.len().max(1) as f64;
    DepthMetrics {
        k,
        precision: outcomes.iter().map(|o| o.precision).sum::<f64>() / n,
        recall: outcomes.iter().map(|o| o.recall).sum::<f64>() / n,
        f1: outcomes.iter().map(|o| o.f1).sum::<f64>() / n,
        relevancy: outcomes.iter().map(|o| o.relevancy).sum::<f64>() / n,
        answer_accuracy: outcomes.iter().filter(|o| o.answer_correct).count() as f64 / n,
        n_queries: outcomes.len(),
    }
}

/// Run the full evaluation: retrieve each gold question at every depth,
/// compute per-query metrics, macro-average, and break down by question
/// type and hops.
pub fn run_eval(gold: &[GoldRecord], engine: &RetrievalEngine, depths: &[usize]) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::InvalidInput("no gold records to evaluate".into()));
    }
    let mut per_query = Vec::new();
    let mut depth_rows = Vec::new();
    let mut by_qtype: std::collections::BTreeMap<String, Vec<DepthMetrics>> = Default::default();
    let mut by_hops: std::collections::BTreeMap<String, Vec<DepthMetrics>> = Default::default();

    for &k in depths {
        let mut outcomes: Vec<(usize, QueryOutcome)> = Vec::new();
        for (gi, record) in gold.iter().enumerate() {
            let result = engine.retrieve(&record.question, &record.filing_id, k)?;
            let matches = match_gold(&result, record, &engine.bundle.chunks)?;
            let (p, r, f1) = precision_recall_f1(&matches, record.n_gold());
            let texts: Vec<String> = result
                .entries
                .iter()
                .map(|e| {
                    engine
                        .bundle
                        .chunks
                        .text(&e.chunk_id)
                        .unwrap_or_default()
                        .to_string()
                })
                .collect();
            let rel = relevancy(&record.question, &texts, engine.providers.judge.as_ref())?;
            let answer = engine
                .providers
                .reader
                .read_answer(&record.question, &texts)?;
            let correct = answers_match(&answer, &record.answer, record.qtype);
            per_query.push(PerQueryRow {
                qid: record.qid.clone(),
                k,
                precision: p,
                recall: r,
                f1,
                relevancy: rel,
                answer_correct: correct,
                answer,
            });
            outcomes.push((
                gi,
                QueryOutcome {
                    precision: p,
                    recall: r,
                    f1,
                    relevancy: rel,
                    answer_correct: correct,
                },
            ));
        }

        let all: Vec<&QueryOutcome> = outcomes.iter().map(|(_, o)| o).collect();
        depth_rows.push(summarize(k, &all));
        for (name, qtype) in [("numerical", QType::Numerical), ("categorical", QType::Categorical)] {
            let subset: Vec<&QueryOutcome> = outcomes
                .iter()
                .filter(|(gi, _)| gold[*gi].qtype == qtype)
                .map(|(_, o)| o)
                .collect();
            if !subset.is_empty() {
                by_qtype.entry(name.to_string()).or_default().push(summarize(k, &subset));
            }
        }
        for (name, hops) in [("simple", Hops::Simple), ("complex", Hops::Complex)] {
            let subset: Vec<&QueryOutcome> = outcomes
                .iter()
                .filter(|(gi, _)| gold[*gi].hops == hops)
                .map(|(_, o)| o)
                .collect();
            if !subset.is_empty() {
                by_hops.entry(name.to_string()).or_default().push(summarize(k, &subset));
            }
        }
    }

    Ok(EvalReport {
        ablation: engine.ablation.label(),
        weighting: engine.strategy.as_str().to_string(),
        depths: depth_rows,
        by_qtype,
        by_hops,
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Chunk;
    use crate::retrieval::{CandidateSource, RankedEntry};

    fn entry(chunk_id: &str) -> RankedEntry {
        RankedEntry {
            chunk_id: chunk_id.to_string(),
            item_label: "7".into(),
            stage2_score: 0.0,
            stage1_score: 0.0,
            traversal_score: 0.0,
            source: CandidateSource::Both,
            path: vec![0],
        }
    }

    fn result(filing: &str, chunk_ids: &[&str]) -> RankedResult {
        RankedResult {
            query: "q".into(),
            filing_id: filing.into(),
            k: chunk_ids.len(),
            item_weights: Default::default(),
            budgets: Default::default(),
            stage1: Default::default(),
            entries: chunk_ids.iter().map(|c| entry(c)).collect(),
        }
    }

    fn store(texts: &[(&str, &str)]) -> ChunkStore {
        ChunkStore::new(
            texts
                .iter()
                .map(|(id, text)| Chunk {
                    chunk_id: id.to_string(),
                    item_label: "7".into(),
                    token_span: (0, 1),
                    text: text.to_string(),
                })
                .collect(),
        )
    }

    fn gold(filing: &str, ids: Option<Vec<&str>>, text: Option<&str>) -> GoldRecord {
        GoldRecord {
            qid: "q1".into(),
            question: "what was the ratio".into(),
            filing_id: filing.into(),
            gold_chunk_ids: ids.map(|v| v.into_iter().map(String::from).collect()),
            gold_text: text.map(String::from),
            answer: "7.0%".into(),
            qtype: QType::Numerical,
            hops: Hops::Simple,
        }
    }

    #[test]
    fn gold_at_rank_one_flags_first() {
        let res = result("f", &["f/7/0", "f/7/1", "f/7/2"]);
        let g = gold("f", Some(vec!["f/7/0"]), None);
        let flags = match_gold(&res, &g, &store(&[])).unwrap();
        assert_eq!(flags, vec![Some(0), None, None]);
    }

    #[test]
    fn gold_text_matches_by_substring() {
        let res = result("f", &["f/7/0", "f/7/3"]);
        let g = gold("f", None, Some("7.0%"));
        let chunks = store(&[
            ("f/7/0", "nothing numeric here"),
            ("f/7/3", "The CET1   ratio was 7.0% at year end."),
        ]);
        let flags = match_gold(&res, &g, &chunks).unwrap();
        assert_eq!(flags, vec![None, Some(0)]);
    }

    #[test]
    fn filing_mismatch_is_an_error() {
        let res = result("f-one", &["f-one/7/0"]);
        let g = gold("f-two", Some(vec!["x"]), None);
        assert!(matches!(
            match_gold(&res, &g, &store(&[])),
            Err(Error::FilingMismatch { .. })
        ));
    }

    #[test]
    fn gold_record_needs_exactly_one_evidence_form() {
        assert!(gold("f", Some(vec!["a"]), None).validate().is_ok());
        assert!(gold("f", None, Some("t")).validate().is_ok());
        assert!(gold("f", None, None).validate().is_err());
        assert!(gold("f", Some(vec!["a"]), Some("t")).validate().is_err());
    }

    #[test]
    fn rank_one_of_five_metrics() {
        let matches = vec![Some(0), None, None, None, None];
        let (p, r, f1) = precision_recall_f1(&matches, 1);
        assert!((p - 0.2).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-12);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_consistency_with_reported_aggregates() {
        // 0.79 / 0.61 must give ~0.69.
        let f1 = f1_of(0.79, 0.61);
        assert!((f1 - 0.69).abs() < 0.005);
    }

    #[test]
    fn f1_edge_cases() {
        assert_eq!(f1_of(0.5, 0.5), 0.5);
        assert_eq!(f1_of(0.0, 0.7), 0.0);
        assert_eq!(f1_of(0.0, 0.0), 0.0);
    }

    #[test]
    fn f1_bounded_by_twice_the_min_side() {
        for (p, r) in [(0.9, 0.1), (0.3, 0.8), (1.0, 1.0), (0.0, 0.5)] {
            assert!(f1_of(p, r) <= 2.0 * p.min(r) + 1e-12);
        }
    }

    #[test]
    fn recall_is_non_decreasing_in_depth() {
        let matches = vec![None, Some(0), None, Some(1), None];
        let mut last = 0.0;
        for k in 1..=matches.len() {
            let (_, r, _) = precision_recall_f1(&matches[..k], 2);
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn single_gold_precision_recall_shape() {
        // Single-gold: recall is 0 or 1; with the gold present once among k
        // retrieved and k > 1, precision is exactly 1/k.
        for k in 2..=10 {
            let mut matches = vec![None; k];
            matches[k / 2] = Some(0);
            let (p, r, _) = precision_recall_f1(&matches, 1);
            assert_eq!(r, 1.0);
            assert!((p - 1.0 / k as f64).abs() < 1e-12);
            assert!(p <= 1.0 / 2.0);
            let (_, r0, _) = precision_recall_f1(&vec![None; k], 1);
            assert_eq!(r0, 0.0);
        }
    }

    #[test]
    fn numeric_answers_normalize_percent() {
        assert!(answers_match("7.0%", "0.07", QType::Numerical));
        assert!(answers_match("The ratio was 7.0% overall.", "7%", QType::Numerical));
        assert!(!answers_match("8.4%", "7.0%", QType::Numerical));
        assert!(!answers_match("unknown", "7.0%", QType::Numerical));
    }

    #[test]
    fn categorical_answers_compare_caselessly() {
        assert!(answers_match("Yes", "yes", QType::Categorical));
        assert!(!answers_match("no", "yes", QType::Categorical));
    }

    #[test]
    fn relevancy_of_empty_retrieval_is_zero() {
        let providers = crate::providers::Providers::stub(0);
        assert_eq!(relevancy("q", &[], providers.judge.as_ref()).unwrap(), 0.0);
    }

    #[test]
    fn gold_jsonl_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gold.jsonl");
        let records = vec![
            gold("f", Some(vec!["f/7/0"]), None),
            gold("f", None, Some("7.0%")),
        ];
        let mut body = String::new();
        for r in &records {
            body.push_str(&serde_json::to_string(r).unwrap());
            body.push('\n');
        }
        std::fs::write(&path, body).unwrap();
        let loaded = load_gold(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].qid, "q1");
        assert_eq!(loaded[1].gold_text.as_deref(), Some("7.0%"));
    }
}
