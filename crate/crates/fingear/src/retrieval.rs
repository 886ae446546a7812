//! Query execution: FLAM budgeting, dual-tree beam traversal, candidate
//! pooling, and two-stage reranking.
//!
//! Per Item with a positive budget, both trees are traversed independently:
//! the Summary Tree scores children with BM25 over their text (sibling-set
//! statistics), the Question Tree with cosine between the query embedding
//! and stored sub-question embeddings. Leaf hits are pooled and deduplicated,
//! reranked cross-tree to the Item budget (stage 1), then reranked across
//! Items to the global budget `k` (stage 2). Every result carries its
//! traversal path, both rerank scores, and the weights/budgets that produced
//! it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bm25::{self, Bm25Params};
use crate::error::{Error, Result};
use crate::flam::{self, FlamScope, ItemWeights, WeightStrategy};
use crate::providers::{EmbeddingVector, Providers, SpaceTag};
use crate::store::{ChunkStore, IndexBundle};
use crate::tree::{NodeKind, TreeIndex, TreeKind};

/// How to aggregate a question node's per-question cosines into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuestionAgg {
    /// Preserves single-question hits.
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraversalConfig {
    /// Children expanded per internal node (the symbol `b`).
    pub child_budget_b: usize,
    pub question_agg: QuestionAgg,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        Self {
            child_budget_b: 3,
            question_agg: QuestionAgg::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    SummaryTree,
    QuestionTree,
    Both,
}

/// A leaf reached by traversal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub chunk_id: String,
    pub item_label: String,
    pub source: CandidateSource,
    pub traversal_score: f64,
    /// Node ids from root to leaf.
    pub path: Vec<u32>,
}

/// Beam-descend a tree: at each internal node score its children over the
/// sibling set, expand only the top `child_budget_b`, and keep descending.
/// Every reached leaf becomes a [`Candidate`] whose score is the score it
/// was selected with. All roots are entry points; a root that is itself a
/// leaf is returned regardless of score.
pub fn traverse_tree(
    tree: &TreeIndex,
    query: &str,
    query_emb: Option<&EmbeddingVector>,
    chunks: &ChunkStore,
    bm25: &Bm25Params,
    cfg: &TraversalConfig,
) -> Result<Vec<Candidate>> {
    if tree.nodes.is_empty() {
        return Err(Error::EmptyTree(tree.item_label.clone()));
    }

    let score_set = |ids: &[u32]| -> Result<Vec<f64>> {
        match tree.kind {
            TreeKind::Summary => {
                let docs: Vec<String> = ids
                    .iter()
                    .map(|id| {
                        let node = tree.node(*id);
                        match node.kind {
                            NodeKind::Internal => node.summary.clone().unwrap_or_default(),
                            NodeKind::Leaf => node
                                .chunk_id
                                .as_deref()
                                .and_then(|c| chunks.text(c))
                                .unwrap_or_default()
                                .to_string(),
                        }
                    })
                    .collect();
                bm25::score_siblings(query, &docs, bm25)
            }
            TreeKind::Question => {
                let q = query_emb.ok_or_else(|| {
                    Error::InvalidInput("question-tree traversal needs a query embedding".into())
                })?;
                ids.iter()
                    .map(|id| {
                        let node = tree.node(*id);
                        match node.kind {
                            NodeKind::Internal => {
                                let embs = tree.question_embeddings.get(id);
                                let mut best = f64::NEG_INFINITY;
                                let mut sum = 0.0;
                                let mut count = 0usize;
                                if let Some(embs) = embs {
                                    for e in embs {
                                        let c = q.cosine(e)?;
                                        best = best.max(c);
                                        sum += c;
                                        count += 1;
                                    }
                                }
                                if count == 0 {
                                    return Ok(0.0);
                                }
                                Ok(match cfg.question_agg {
                                    QuestionAgg::Max => best,
                                    QuestionAgg::Mean => sum / count as f64,
                                })
                            }
                            NodeKind::Leaf => match tree.leaf_embeddings.get(id) {
                                Some(e) => q.cosine(e),
                                None => Ok(0.0),
                            },
                        }
                    })
                    .collect()
            }
        }
    };

    let source = match tree.kind {
        TreeKind::Summary => CandidateSource::SummaryTree,
        TreeKind::Question => CandidateSource::QuestionTree,
    };

    let root_scores = score_set(&tree.root_ids)?;
    let mut stack: Vec<(u32, f64, Vec<u32>)> = tree
        .root_ids
        .iter()
        .zip(root_scores)
        .map(|(&id, s)| (id, s, vec![id]))
        .collect();

    let mut best: BTreeMap<String, Candidate> = BTreeMap::new();
    while let Some((id, score, path)) = stack.pop() {
        let node = tree.node(id);
        if node.is_leaf() {
            let chunk_id = node.chunk_id.clone().unwrap_or_default();
            let cand = Candidate {
                chunk_id: chunk_id.clone(),
                item_label: tree.item_label.clone(),
                source,
                traversal_score: score,
                path,
            };
            best.entry(chunk_id)
                .and_modify(|existing| {
                    if cand.traversal_score > existing.traversal_score {
                        *existing = cand.clone();
                    }
                })
                .or_insert(cand);
            continue;
        }
        let child_scores = score_set(&node.children)?;
        let mut ranked: Vec<(u32, f64)> =
            node.children.iter().copied().zip(child_scores).collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        for (child, cscore) in ranked.into_iter().take(cfg.child_budget_b) {
            let mut child_path = path.clone();
            child_path.push(child);
            stack.push((child, cscore, child_path));
        }
    }

    let mut out: Vec<Candidate> = best.into_values().collect();
    out.sort_by(|a, b| {
        b.traversal_score
            .partial_cmp(&a.traversal_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    Ok(out)
}

fn min_max_normalize(cands: &mut [Candidate]) {
    if cands.is_empty() {
        return;
    }
    let min = cands
        .iter()
        .map(|c| c.traversal_score)
        .fold(f64::INFINITY, f64::min);
    let max = cands
        .iter()
        .map(|c| c.traversal_score)
        .fold(f64::NEG_INFINITY, f64::max);
    for c in cands.iter_mut() {
        c.traversal_score = if max > min {
            (c.traversal_score - min) / (max - min)
        } else {
            1.0
        };
    }
}

/// Merge the two trees' candidates for one Item into a deduplicated pool.
/// Scores are min-max normalized per source first (BM25 and cosine live on
/// different scales); a chunk hit by both trees keeps the larger normalized
/// score and is marked [`CandidateSource::Both`].
pub fn collect_candidates(
    summary_cands: Vec<Candidate>,
    question_cands: Vec<Candidate>,
) -> Vec<Candidate> {
    let mut summary = summary_cands;
    let mut question = question_cands;
    min_max_normalize(&mut summary);
    min_max_normalize(&mut question);

    let mut pool: BTreeMap<String, Candidate> = BTreeMap::new();
    for cand in summary.into_iter().chain(question) {
        match pool.get_mut(&cand.chunk_id) {
            None => {
                pool.insert(cand.chunk_id.clone(), cand);
            }
            Some(existing) => {
                if cand.traversal_score > existing.traversal_score {
                    existing.traversal_score = cand.traversal_score;
                    existing.path = cand.path;
                }
                existing.source = CandidateSource::Both;
            }
        }
    }
    let mut out: Vec<Candidate> = pool.into_values().collect();
    out.sort_by(|a, b| {
        b.traversal_score
            .partial_cmp(&a.traversal_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    out
}

/// A candidate with its stage-1 (cross-tree) rerank score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub stage1_score: f64,
}

/// Stage 1 (cross-tree): score each pooled candidate's chunk text against
/// the query with the cross-encoder provider, sort, and truncate to the
/// per-Item budget.
pub fn rerank_stage1(
    query: &str,
    pool: Vec<Candidate>,
    chunks: &ChunkStore,
    providers: &Providers,
    limit: usize,
) -> Result<Vec<ScoredCandidate>> {
    let mut scored = Vec::with_capacity(pool.len());
    for candidate in pool {
        let text = chunks.text(&candidate.chunk_id).unwrap_or_default();
        let stage1_score = providers.scorer.score_pair(query, text)?;
        scored.push(ScoredCandidate {
            candidate,
            stage1_score,
        });
    }
    scored.sort_by(|a, b| {
        b.stage1_score
            .partial_cmp(&a.stage1_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.candidate.chunk_id.cmp(&b.candidate.chunk_id))
    });
    scored.truncate(limit);
    Ok(scored)
}

/// One entry of the final ranked output, with full provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedEntry {
    pub chunk_id: String,
    pub item_label: String,
    pub stage2_score: f64,
    pub stage1_score: f64,
    pub traversal_score: f64,
    pub source: CandidateSource,
    pub path: Vec<u32>,
}

/// The ranked answer to one query, including the FLAM decisions that shaped
/// it (interpretability surface).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedResult {
    pub query: String,
    pub filing_id: String,
    pub k: usize,
    pub item_weights: BTreeMap<String, f64>,
    pub budgets: BTreeMap<String, usize>,
    /// Stage-1 survivors per Item, before cross-Item reranking.
    pub stage1: BTreeMap<String, Vec<String>>,
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn chunk_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.chunk_id.as_str()).collect()
    }
}

/// Stage 2 (cross-Item): rescore all stage-1 survivors against the query,
/// sort globally, truncate to `k`. Ties break by chunk id.
pub fn rerank_stage2(
    query: &str,
    per_item: Vec<Vec<ScoredCandidate>>,
    k: usize,
    chunks: &ChunkStore,
    providers: &Providers,
) -> Result<Vec<RankedEntry>> {
    let mut entries = Vec::new();
    for list in per_item {
        for sc in list {
            let text = chunks.text(&sc.candidate.chunk_id).unwrap_or_default();
            let stage2_score = providers.scorer.score_pair(query, text)?;
            entries.push(RankedEntry {
                chunk_id: sc.candidate.chunk_id,
                item_label: sc.candidate.item_label,
                stage2_score,
                stage1_score: sc.stage1_score,
                traversal_score: sc.candidate.traversal_score,
                source: sc.candidate.source,
                path: sc.candidate.path,
            });
        }
    }
    entries.sort_by(|a, b| {
        b.stage2_score
            .partial_cmp(&a.stage2_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    entries.truncate(k);
    Ok(entries)
}

/// Module toggles for ablation experiments: uniform Item weights instead of
/// FLAM, single-tree traversal, or no reranking (traversal order kept).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_flam: bool,
    pub no_summary_tree: bool,
    pub no_question_tree: bool,
    pub no_reranker: bool,
}

impl Ablation {
    pub fn label(&self) -> Option<String> {
        let mut parts = Vec::new();
        if self.no_flam {
            parts.push("no-flam");
        }
        if self.no_summary_tree {
            parts.push("no-summary-tree");
        }
        if self.no_question_tree {
            parts.push("no-question-tree");
        }
        if self.no_reranker {
            parts.push("no-reranker");
        }
        if parts.is_empty() {
            None
        } else {
            Some(parts.join("+"))
        }
    }
}

/// Read-only query executor over an immutable index bundle.
pub struct RetrievalEngine<'a> {
    pub bundle: &'a IndexBundle,
    pub providers: &'a Providers,
    pub bm25: Bm25Params,
    pub traversal: TraversalConfig,
    pub strategy: WeightStrategy,
    pub scope: FlamScope,
    pub ablation: Ablation,
}

impl<'a> RetrievalEngine<'a> {
    pub fn new(bundle: &'a IndexBundle, providers: &'a Providers) -> Self {
        Self {
            bundle,
            providers,
            bm25: Bm25Params::default(),
            traversal: TraversalConfig::default(),
            strategy: WeightStrategy::default(),
            scope: FlamScope::default(),
            ablation: Ablation::default(),
        }
    }

    /// Full pipeline for one query: expand query terms, weight Items,
    /// allocate budgets, traverse, pool, rerank twice.
    pub fn retrieve(&self, query: &str, filing_id: &str, k: usize) -> Result<RankedResult> {
        if k < 1 {
            return Err(Error::InvalidBudget(k));
        }
        if !self.bundle.has_filing(filing_id) {
            return Err(Error::IndexMissing(filing_id.to_string()));
        }
        let table = self
            .bundle
            .flam
            .table_for(filing_id, self.scope)
            .ok_or_else(|| Error::IndexMissing(filing_id.to_string()))?;

        let weights = if self.ablation.no_flam {
            let labels = table.item_labels();
            let w = 1.0 / labels.len() as f64;
            ItemWeights {
                weights: labels.into_iter().map(|l| (l, w)).collect(),
                strategy: self.strategy,
            }
        } else {
            let active = flam::expand_query_terms(
                query,
                &self.bundle.flam.lexicon,
                &self.bundle.flam.clusters,
                self.providers,
            )?;
            flam::compute_item_weights(table, &active, self.strategy)
        };
        self.retrieve_with_weights(query, filing_id, k, weights)
    }

    /// Same pipeline with the Item weights pinned by the caller.
    pub fn retrieve_with_weights(
        &self,
        query: &str,
        filing_id: &str,
        k: usize,
        weights: ItemWeights,
    ) -> Result<RankedResult> {
        if k < 1 {
            return Err(Error::InvalidBudget(k));
        }
        let alloc = flam::allocate_budget(&weights, k)?;

        let need_question = !self.ablation.no_question_tree;
        let query_emb = if need_question {
            Some(
                self.providers
                    .embedder
                    .embed_texts(&[query.to_string()], SpaceTag::Qa)?
                    .remove(0),
            )
        } else {
            None
        };

        let mut per_item: Vec<Vec<ScoredCandidate>> = Vec::new();
        let mut stage1_log: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (item_label, &budget) in &alloc.budgets {
            if budget == 0 {
                continue; // Items with k_i* = 0 are skipped entirely.
            }
            let Some(index) = self
                .bundle
                .items
                .get(&(filing_id.to_string(), item_label.clone()))
            else {
                continue;
            };
            let summary_cands = if self.ablation.no_summary_tree {
                Vec::new()
            } else {
                traverse_tree(
                    &index.summary,
                    query,
                    None,
                    &self.bundle.chunks,
                    &self.bm25,
                    &self.traversal,
                )?
            };
            let question_cands = if self.ablation.no_question_tree {
                Vec::new()
            } else {
                traverse_tree(
                    &index.question,
                    query,
                    query_emb.as_ref(),
                    &self.bundle.chunks,
                    &self.bm25,
                    &self.traversal,
                )?
            };
            let pool = collect_candidates(summary_cands, question_cands);
            let survivors = if self.ablation.no_reranker {
                // Keep traversal order; reuse the traversal score downstream.
                pool.into_iter()
                    .take(budget)
                    .map(|candidate| ScoredCandidate {
                        stage1_score: candidate.traversal_score,
                        candidate,
                    })
                    .collect()
            } else {
                rerank_stage1(query, pool, &self.bundle.chunks, self.providers, budget)?
            };
            stage1_log.insert(
                item_label.clone(),
                survivors
                    .iter()
                    .map(|s| s.candidate.chunk_id.clone())
                    .collect(),
            );
            per_item.push(survivors);
        }

        let entries = if self.ablation.no_reranker {
            let mut flat: Vec<RankedEntry> = per_item
                .into_iter()
                .flatten()
                .map(|sc| RankedEntry {
                    chunk_id: sc.candidate.chunk_id,
                    item_label: sc.candidate.item_label,
                    stage2_score: sc.stage1_score,
                    stage1_score: sc.stage1_score,
                    traversal_score: sc.candidate.traversal_score,
                    source: sc.candidate.source,
                    path: sc.candidate.path,
                })
                .collect();
            flat.sort_by(|a, b| {
                b.stage2_score
                    .partial_cmp(&a.stage2_score)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.chunk_id.cmp(&b.chunk_id))
            });
            flat.truncate(k);
            flat
        } else {
            rerank_stage2(query, per_item, k, &self.bundle.chunks, self.providers)?
        };

        Ok(RankedResult {
            query: query.to_string(),
            filing_id: filing_id.to_string(),
            k,
            item_weights: weights.weights,
            budgets: alloc.budgets,
            stage1: stage1_log,
            entries,
        })
    }
}

/// Query output with chunk texts attached, as emitted by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutput {
    pub query: String,
    pub filing_id: String,
    pub k: usize,
    pub item_weights: BTreeMap<String, f64>,
    pub budgets: BTreeMap<String, usize>,
    pub results: Vec<QueryOutputEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutputEntry {
    pub chunk_id: String,
    pub item_label: String,
    pub scores: ScoreBreakdown,
    pub source: CandidateSource,
    pub path: Vec<u32>,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub stage2: f64,
    pub stage1: f64,
    pub traversal: f64,
}

impl RankedResult {
    pub fn with_texts(&self, chunks: &ChunkStore) -> QueryOutput {
        QueryOutput {
            query: self.query.clone(),
            filing_id: self.filing_id.clone(),
            k: self.k,
            item_weights: self.item_weights.clone(),
            budgets: self.budgets.clone(),
            results: self
                .entries
                .iter()
                .map(|e| QueryOutputEntry {
                    chunk_id: e.chunk_id.clone(),
                    item_label: e.item_label.clone(),
                    scores: ScoreBreakdown {
                        stage2: e.stage2_score,
                        stage1: e.stage1_score,
                        traversal: e.traversal_score,
                    },
                    source: e.source,
                    path: e.path.clone(),
                    text: chunks.text(&e.chunk_id).unwrap_or_default().to_string(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Chunk;
    use crate::tree::{topology_hash, TreeNode};

    fn leaf(id: u32, chunk: &str, depth: u32) -> TreeNode {
        TreeNode {
            node_id: id,
            kind: NodeKind::Leaf,
            children: vec![],
            depth,
            summary: None,
            questions: Vec::new(),
            chunk_id: Some(chunk.to_string()),
        }
    }

    fn internal(id: u32, children: Vec<u32>, summary: &str, depth: u32) -> TreeNode {
        TreeNode {
            node_id: id,
            kind: NodeKind::Internal,
            children,
            depth,
            summary: Some(summary.to_string()),
            questions: Vec::new(),
            chunk_id: None,
        }
    }

    fn store(texts: &[(&str, &str)]) -> ChunkStore {
        ChunkStore::new(
            texts
                .iter()
                .map(|(id, text)| Chunk {
                    chunk_id: id.to_string(),
                    item_label: "7".into(),
                    token_span: (0, text.split_whitespace().count()),
                    text: text.to_string(),
                })
                .collect(),
        )
    }

    fn summary_tree(nodes: Vec<TreeNode>, roots: Vec<u32>) -> TreeIndex {
        let hash = topology_hash(&nodes, &roots);
        TreeIndex {
            filing_id: "f".into(),
            item_label: "7".into(),
            kind: TreeKind::Summary,
            root_ids: roots,
            nodes,
            leaf_embeddings: BTreeMap::new(),
            question_embeddings: BTreeMap::new(),
            topology_hash: hash,
        }
    }

    #[test]
    fn beam_expands_exactly_b_children() {
        // One internal root with five leaf children; b = 3.
        let nodes = vec![
            internal(0, vec![1, 2, 3, 4, 5], "root", 0),
            leaf(1, "f/7/0", 1),
            leaf(2, "f/7/1", 1),
            leaf(3, "f/7/2", 1),
            leaf(4, "f/7/3", 1),
            leaf(5, "f/7/4", 1),
        ];
        let tree = summary_tree(nodes, vec![0]);
        let chunks = store(&[
            ("f/7/0", "cash cash cash"),
            ("f/7/1", "cash cash other"),
            ("f/7/2", "cash other other"),
            ("f/7/3", "other things here"),
            ("f/7/4", "unrelated words entirely"),
        ]);
        let cands = traverse_tree(
            &tree,
            "cash",
            None,
            &chunks,
            &Bm25Params::default(),
            &TraversalConfig::default(),
        )
        .unwrap();
        assert_eq!(cands.len(), 3, "exactly b leaves expanded");
        let ids: Vec<&str> = cands.iter().map(|c| c.chunk_id.as_str()).collect();
        assert!(ids.contains(&"f/7/0") && ids.contains(&"f/7/1") && ids.contains(&"f/7/2"));
    }

    #[test]
    fn depth_two_paths_have_at_most_two_steps() {
        let nodes = vec![
            internal(0, vec![1, 2], "root", 0),
            internal(1, vec![3, 4], "cash topics", 1),
            internal(2, vec![5, 6], "other topics", 1),
            leaf(3, "f/7/0", 2),
            leaf(4, "f/7/1", 2),
            leaf(5, "f/7/2", 2),
            leaf(6, "f/7/3", 2),
        ];
        let tree = summary_tree(nodes, vec![0]);
        let chunks = store(&[
            ("f/7/0", "cash flow statement"),
            ("f/7/1", "cash balances grew"),
            ("f/7/2", "litigation matters"),
            ("f/7/3", "segment revenue"),
        ]);
        let cands = traverse_tree(
            &tree,
            "cash",
            None,
            &chunks,
            &Bm25Params::default(),
            &TraversalConfig::default(),
        )
        .unwrap();
        assert!(!cands.is_empty());
        for c in &cands {
            assert!(c.path.len() <= 3, "path {:?} exceeds two steps", c.path);
            assert!(tree.node(*c.path.last().unwrap()).is_leaf());
        }
    }

    #[test]
    fn single_leaf_tree_returns_the_leaf() {
        let tree = summary_tree(vec![leaf(0, "f/7/0", 0)], vec![0]);
        let chunks = store(&[("f/7/0", "totally unrelated text")]);
        let cands = traverse_tree(
            &tree,
            "cash",
            None,
            &chunks,
            &Bm25Params::default(),
            &TraversalConfig::default(),
        )
        .unwrap();
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].chunk_id, "f/7/0");
        assert_eq!(cands[0].path, vec![0]);
    }

    #[test]
    fn empty_tree_is_an_error() {
        let tree = summary_tree(vec![], vec![]);
        let chunks = store(&[]);
        assert!(matches!(
            traverse_tree(
                &tree,
                "cash",
                None,
                &chunks,
                &Bm25Params::default(),
                &TraversalConfig::default()
            ),
            Err(Error::EmptyTree(_))
        ));
    }

    fn cand(chunk: &str, score: f64, source: CandidateSource) -> Candidate {
        Candidate {
            chunk_id: chunk.to_string(),
            item_label: "7".into(),
            source,
            traversal_score: score,
            path: vec![0],
        }
    }

    #[test]
    fn disjoint_pools_union() {
        let pool = collect_candidates(
            vec![
                cand("f/7/0", 2.0, CandidateSource::SummaryTree),
                cand("f/7/1", 1.0, CandidateSource::SummaryTree),
            ],
            vec![
                cand("f/7/2", 0.9, CandidateSource::QuestionTree),
                cand("f/7/3", 0.5, CandidateSource::QuestionTree),
                cand("f/7/4", 0.1, CandidateSource::QuestionTree),
            ],
        );
        assert_eq!(pool.len(), 5);
    }

    #[test]
    fn shared_chunk_merges_with_source_both() {
        let pool = collect_candidates(
            vec![
                cand("f/7/0", 2.0, CandidateSource::SummaryTree),
                cand("f/7/1", 1.0, CandidateSource::SummaryTree),
            ],
            vec![
                cand("f/7/0", 0.9, CandidateSource::QuestionTree),
                cand("f/7/9", 0.1, CandidateSource::QuestionTree),
            ],
        );
        assert_eq!(pool.len(), 3);
        let merged = pool.iter().find(|c| c.chunk_id == "f/7/0").unwrap();
        assert_eq!(merged.source, CandidateSource::Both);
        // Normalized max: 1.0 from the summary side.
        assert!((merged.traversal_score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_plus_nonempty_pool_is_the_nonempty_one() {
        let pool = collect_candidates(
            vec![],
            vec![
                cand("f/7/0", 0.9, CandidateSource::QuestionTree),
                cand("f/7/1", 0.1, CandidateSource::QuestionTree),
            ],
        );
        assert_eq!(pool.len(), 2);
        assert!(pool.iter().all(|c| c.source == CandidateSource::QuestionTree));
    }

    #[test]
    fn stage1_orders_by_stub_score_and_truncates() {
        let chunks = store(&[
            ("f/7/0", "cash flow from operations"),
            ("f/7/1", "litigation and claims"),
            ("f/7/2", "cash"),
            ("f/7/3", "segment revenue by region"),
            ("f/7/4", "employee matters"),
        ]);
        let providers = Providers::stub(0);
        let pool: Vec<Candidate> = (0..5)
            .map(|i| cand(&format!("f/7/{i}"), 0.5, CandidateSource::SummaryTree))
            .collect();
        let top = rerank_stage1("cash", pool.clone(), &chunks, &providers, 2).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].candidate.chunk_id, "f/7/2", "exact match first");
        assert!(top[0].stage1_score >= top[1].stage1_score);

        let single = rerank_stage1("cash", vec![pool[1].clone()], &chunks, &providers, 5).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn stage2_merges_items_and_respects_k() {
        let chunks = store(&[
            ("f/1/0", "cash is discussed here"),
            ("f/1/1", "nothing relevant"),
            ("f/7/0", "cash cash cash"),
            ("f/7/1", "cash and revenue"),
        ]);
        let providers = Providers::stub(0);
        let lists: Vec<Vec<ScoredCandidate>> = vec![
            rerank_stage1(
                "cash",
                vec![
                    cand("f/1/0", 1.0, CandidateSource::SummaryTree),
                    cand("f/1/1", 0.5, CandidateSource::SummaryTree),
                ],
                &chunks,
                &providers,
                2,
            )
            .unwrap(),
            rerank_stage1(
                "cash",
                vec![
                    cand("f/7/0", 1.0, CandidateSource::SummaryTree),
                    cand("f/7/1", 0.5, CandidateSource::SummaryTree),
                ],
                &chunks,
                &providers,
                2,
            )
            .unwrap(),
        ];
        let ranked = rerank_stage2("cash", lists.clone(), 3, &chunks, &providers).unwrap();
        assert_eq!(ranked.len(), 3);
        // Hand recomputation of stub scores with q = {cash}:
        // f/7/0 "cash cash cash" -> 1/sqrt(1*1) = 1.0
        // f/7/1 "cash and revenue" -> 1/sqrt(1*3)
        // f/1/0 "cash is discussed here" -> 1/sqrt(1*4)
        assert_eq!(ranked[0].chunk_id, "f/7/0");
        assert!((ranked[0].stage2_score - 1.0).abs() < 1e-12);
        assert_eq!(ranked[1].chunk_id, "f/7/1");
        assert!((ranked[1].stage2_score - 1.0 / 3.0f64.sqrt()).abs() < 1e-12);
        assert_eq!(ranked[2].chunk_id, "f/1/0");
        assert!((ranked[2].stage2_score - 0.5).abs() < 1e-12);

        // k beyond the pool returns everything.
        let all = rerank_stage2("cash", lists.clone(), 50, &chunks, &providers).unwrap();
        assert_eq!(all.len(), 4);

        // A single item keeps its stage-1 order under the same scorer.
        let one = rerank_stage2("cash", vec![lists[1].clone()], 2, &chunks, &providers).unwrap();
        let stage1_order: Vec<&str> = lists[1].iter().map(|s| s.candidate.chunk_id.as_str()).collect();
        let stage2_order: Vec<&str> = one.iter().map(|e| e.chunk_id.as_str()).collect();
        assert_eq!(stage1_order, stage2_order);
    }

    #[test]
    fn ablation_labels_compose() {
        assert_eq!(Ablation::default().label(), None);
        let ab = Ablation {
            no_flam: true,
            no_reranker: true,
            ..Default::default()
        };
        assert_eq!(ab.label().unwrap(), "no-flam+no-reranker");
    }
}
