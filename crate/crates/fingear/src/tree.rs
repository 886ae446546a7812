//! Per-Item Summary and Question trees.
//!
//! Both trees are built bottom-up from an Item's chunks: embed the current
//! level's texts, reduce dimensionality, soft-cluster with a Gaussian
//! mixture, and promote each cluster to an internal node. The Summary Tree
//! stores extracted or generated summaries at internal nodes; the Question
//! Tree copies the exact topology and stores embedded sub-questions instead.
//! Leaves of both trees reference the same chunk ids, so a hash over the
//! (parent -> children, leaf chunk id) structure is identical across the
//! pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gmm::{self, GmmConfig};
use crate::ingest::Chunk;
use crate::providers::{EmbeddingVector, Providers, SpaceTag};
use crate::reduce;
use crate::text::fnv1a64;

/// Words of concatenated child text fed to the summarizer per internal node.
const SUMMARY_INPUT_WORD_BUDGET: usize = 2000;

/// Index build configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexConfig {
    pub reduced_dim: usize,
    pub gmm_max_components: usize,
    /// Soft-assignment responsibility threshold.
    pub responsibility_threshold: f64,
    /// Maximum node depth; roots sit at depth 0.
    pub max_depth: usize,
    pub questions_per_node: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            reduced_dim: 10,
            gmm_max_components: 50,
            responsibility_threshold: 0.1,
            max_depth: 2,
            questions_per_node: 5,
            em_max_iters: 200,
            em_tol: 1e-4,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.responsibility_threshold > 0.0 && self.responsibility_threshold < 1.0) {
            return Err(Error::Config(
                "responsibility_threshold must lie in (0, 1)".into(),
            ));
        }
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be >= 1".into()));
        }
        if self.questions_per_node < 1 {
            return Err(Error::Config("questions_per_node must be >= 1".into()));
        }
        Ok(())
    }

    pub fn gmm(&self, seed: u64) -> GmmConfig {
        GmmConfig {
            max_components: self.gmm_max_components,
            em_max_iters: self.em_max_iters,
            em_tol: self.em_tol,
            variance_floor: 1e-6,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Internal,
    Leaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    Summary,
    Question,
}

/// One tree node. Leaves carry a chunk id; internal Summary nodes carry a
/// summary; internal Question nodes carry `questions_per_node` questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: u32,
    pub kind: NodeKind,
    pub children: Vec<u32>,
    pub depth: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub summary: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub questions: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chunk_id: Option<String>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.kind == NodeKind::Leaf
    }
}

/// One tree over one Item of one filing. `nodes` is indexed by `node_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeIndex {
    pub filing_id: String,
    pub item_label: String,
    pub kind: TreeKind,
    pub root_ids: Vec<u32>,
    pub nodes: Vec<TreeNode>,
    /// QA-space embedding of each leaf's chunk text, by node id.
    pub leaf_embeddings: BTreeMap<u32, EmbeddingVector>,
    /// QA-space embeddings of each internal node's questions (Question tree).
    pub question_embeddings: BTreeMap<u32, Vec<EmbeddingVector>>,
    pub topology_hash: String,
}

impl TreeIndex {
    pub fn node(&self, id: u32) -> &TreeNode {
        &self.nodes[id as usize]
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    /// Maximum node depth (0 for a single-leaf forest).
    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// The set of chunk ids stored at leaves.
    pub fn leaf_chunk_ids(&self) -> std::collections::BTreeSet<String> {
        self.nodes
            .iter()
            .filter_map(|n| n.chunk_id.clone())
            .collect()
    }
}

/// Digest of the (parent -> children, leaf chunk id) structure; identical
/// for topology-mirroring trees regardless of node content.
pub fn topology_hash(nodes: &[TreeNode], root_ids: &[u32]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"roots:");
    for r in root_ids {
        hasher.update(r.to_le_bytes());
    }
    for node in nodes {
        hasher.update(b"|n:");
        hasher.update(node.node_id.to_le_bytes());
        for c in &node.children {
            hasher.update(c.to_le_bytes());
        }
        if let Some(chunk) = &node.chunk_id {
            hasher.update(b"@");
            hasher.update(chunk.as_bytes());
        }
    }
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A Summary/Question tree pair for one Item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemIndex {
    pub summary: TreeIndex,
    pub question: TreeIndex,
}

impl ItemIndex {
    pub fn filing_id(&self) -> &str {
        &self.summary.filing_id
    }

    pub fn item_label(&self) -> &str {
        &self.summary.item_label
    }
}

/// Build the Summary Tree for one Item bottom-up.
///
/// Level 0 holds the chunks as leaves. Each round embeds the current level's
/// texts, reduces them, fits a mixture, and soft-assigns members: every
/// cluster becomes an internal node whose children are its members and whose
/// summary comes from the summarizer over the concatenated child texts.
/// Rounds stop after `max_depth - 1` repetitions or once a single cluster
/// remains. Soft multi-membership may place one child under several parents.
pub fn build_summary_tree(
    filing_id: &str,
    item_label: &str,
    chunks: &[Chunk],
    cfg: &IndexConfig,
    providers: &Providers,
) -> Result<TreeIndex> {
    cfg.validate()?;
    if chunks.is_empty() {
        return Err(Error::EmptyItem(format!("{filing_id}/{item_label}")));
    }

    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut texts: BTreeMap<u32, String> = BTreeMap::new();
    let mut leaf_embeddings: BTreeMap<u32, EmbeddingVector> = BTreeMap::new();

    for chunk in chunks {
        let id = nodes.len() as u32;
        nodes.push(TreeNode {
            node_id: id,
            kind: NodeKind::Leaf,
            children: Vec::new(),
            depth: 0,
            summary: None,
            questions: Vec::new(),
            chunk_id: Some(chunk.chunk_id.clone()),
        });
        texts.insert(id, chunk.text.clone());
    }

    let chunk_texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let embs = providers.embedder.embed_texts(&chunk_texts, SpaceTag::Qa)?;
    for (i, emb) in embs.iter().enumerate() {
        leaf_embeddings.insert(i as u32, emb.clone());
    }

    let mut level: Vec<u32> = (0..nodes.len() as u32).collect();
    let mut level_embeddings: Vec<EmbeddingVector> = embs;

    for round in 0..cfg.max_depth.saturating_sub(1) {
        if level.len() <= 1 {
            break;
        }
        let points: Vec<Vec<f64>> = level_embeddings
            .iter()
            .map(|e| e.values.iter().map(|v| *v as f64).collect())
            .collect();
        let reduced = reduce::reduce_dims(&points, cfg.reduced_dim);
        let seed = fnv1a64(
            cfg.seed,
            format!("{filing_id}/{item_label}/round{round}").as_bytes(),
        );
        let model = gmm::fit_gmm(&reduced, &cfg.gmm(seed));
        let membership = gmm::soft_assign(&model, &reduced, cfg.responsibility_threshold);

        // Component -> member node ids, in level order.
        let mut clusters: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for (pos, members) in membership.iter().enumerate() {
            for &c in members {
                clusters.entry(c).or_default().push(level[pos]);
            }
        }

        let mut next_level = Vec::new();
        let mut next_texts = Vec::new();
        for (_component, members) in clusters.iter() {
            let concat = members
                .iter()
                .map(|id| texts[id].as_str())
                .collect::<Vec<_>>()
                .join("\n\n");
            let capped: String = {
                let words: Vec<&str> = concat.split_whitespace().collect();
                if words.len() > SUMMARY_INPUT_WORD_BUDGET {
                    words[..SUMMARY_INPUT_WORD_BUDGET].join(" ")
                } else {
                    concat
                }
            };
            let summary = providers
                .summarizer
                .summarize(&capped, &providers.templates.summarize_template)?;
            let id = nodes.len() as u32;
            nodes.push(TreeNode {
                node_id: id,
                kind: NodeKind::Internal,
                children: members.clone(),
                depth: 0,
                summary: Some(summary.clone()),
                questions: Vec::new(),
                chunk_id: None,
            });
            texts.insert(id, summary.clone());
            next_level.push(id);
            next_texts.push(summary);
        }

        level_embeddings = providers.embedder.embed_texts(&next_texts, SpaceTag::Qa)?;
        level = next_level;
        if level.len() <= 1 {
            break;
        }
    }

    let root_ids = level;
    assign_depths(&mut nodes, &root_ids);
    let hash = topology_hash(&nodes, &root_ids);
    Ok(TreeIndex {
        filing_id: filing_id.to_string(),
        item_label: item_label.to_string(),
        kind: TreeKind::Summary,
        root_ids,
        nodes,
        leaf_embeddings,
        question_embeddings: BTreeMap::new(),
        topology_hash: hash,
    })
}

/// Breadth-first depth assignment from the roots. With soft multi-membership
/// a node can be reachable along several paths; its depth is the shortest.
fn assign_depths(nodes: &mut [TreeNode], root_ids: &[u32]) {
    let mut queue: std::collections::VecDeque<(u32, u32)> =
        root_ids.iter().map(|&r| (r, 0)).collect();
    let mut seen = vec![false; nodes.len()];
    while let Some((id, depth)) = queue.pop_front() {
        if seen[id as usize] {
            continue;
        }
        seen[id as usize] = true;
        nodes[id as usize].depth = depth;
        for &c in nodes[id as usize].children.clone().iter() {
            queue.push_back((c, depth + 1));
        }
    }
}

/// Derive the Question Tree from a built Summary Tree: copy the topology
/// exactly (node ids, children, leaf chunk ids), then store
/// `questions_per_node` generated sub-questions with their QA-space
/// embeddings at every internal node.
pub fn build_question_tree(
    summary_tree: &TreeIndex,
    cfg: &IndexConfig,
    providers: &Providers,
) -> Result<TreeIndex> {
    cfg.validate()?;
    let mut nodes = Vec::with_capacity(summary_tree.nodes.len());
    let mut question_embeddings = BTreeMap::new();

    for node in &summary_tree.nodes {
        let mut copy = TreeNode {
            node_id: node.node_id,
            kind: node.kind,
            children: node.children.clone(),
            depth: node.depth,
            summary: None,
            questions: Vec::new(),
            chunk_id: node.chunk_id.clone(),
        };
        if node.kind == NodeKind::Internal {
            let summary = node.summary.as_deref().unwrap_or_default();
            let questions = providers
                .questioner
                .generate_questions(summary, cfg.questions_per_node)?;
            let embs = providers.embedder.embed_texts(&questions, SpaceTag::Qa)?;
            question_embeddings.insert(node.node_id, embs);
            copy.questions = questions;
        }
        nodes.push(copy);
    }

    let hash = topology_hash(&nodes, &summary_tree.root_ids);
    Ok(TreeIndex {
        filing_id: summary_tree.filing_id.clone(),
        item_label: summary_tree.item_label.clone(),
        kind: TreeKind::Question,
        root_ids: summary_tree.root_ids.clone(),
        nodes,
        leaf_embeddings: summary_tree.leaf_embeddings.clone(),
        question_embeddings,
        topology_hash: hash,
    })
}

/// Build the Summary/Question pair for one Item.
pub fn build_item_index(
    filing_id: &str,
    item_label: &str,
    chunks: &[Chunk],
    cfg: &IndexConfig,
    providers: &Providers,
) -> Result<ItemIndex> {
    let summary = build_summary_tree(filing_id, item_label, chunks, cfg, providers)?;
    let question = build_question_tree(&summary, cfg, providers)?;
    Ok(ItemIndex { summary, question })
}
