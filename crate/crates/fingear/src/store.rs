//! Index persistence.
//!
//! Directory layout:
//!
//! ```text
//! index_dir/
//!   manifest.json                      format version, config, seed,
//!                                      per-Item topology hashes, checksums
//!   chunks.jsonl                       chunk store
//!   flam.json                          clustered lexicon + frequency tables
//!   trees/<filing>/<item>/summary.jsonl
//!   trees/<filing>/<item>/question.jsonl
//!   trees/<filing>/<item>/embeddings.bin
//! ```
//!
//! Node tables are JSON Lines with a header line (roots, hash) followed by
//! one node per line. Embeddings live in a binary sidecar: an offset table
//! followed by little-endian f32 payloads, so save/load round-trips them
//! bit-exactly. Every file is checksummed in the manifest.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flam::FlamState;
use crate::ingest::{self, Chunk};
use crate::providers::{EmbeddingVector, SpaceTag};
use crate::tree::{hex, ItemIndex, TreeIndex, TreeKind};

pub const FORMAT_VERSION: u32 = 1;

const EMB_MAGIC: &[u8; 4] = b"FGEM";

/// Chunk texts addressable by id, filing, and Item.
#[derive(Debug, Clone, Default)]
pub struct ChunkStore {
    chunks: Vec<Chunk>,
    by_id: BTreeMap<String, usize>,
}

impl ChunkStore {
    pub fn new(chunks: Vec<Chunk>) -> Self {
        let by_id = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        Self { chunks, by_id }
    }

    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn text(&self, chunk_id: &str) -> Option<&str> {
        self.get(chunk_id).map(|c| c.text.as_str())
    }

    pub fn for_filing_item(&self, filing_id: &str, item_label: &str) -> Vec<&Chunk> {
        self.chunks
            .iter()
            .filter(|c| c.filing_id() == filing_id && c.item_label == item_label)
            .collect()
    }

    pub fn all(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Everything the retrieval engine needs, in memory.
#[derive(Debug, Clone)]
pub struct IndexBundle {
    pub config: crate::tree::IndexConfig,
    pub seed: u64,
    pub chunks: ChunkStore,
    pub flam: FlamState,
    /// Keyed by (filing_id, item_label).
    pub items: BTreeMap<(String, String), ItemIndex>,
}

impl IndexBundle {
    pub fn has_filing(&self, filing_id: &str) -> bool {
        self.items.keys().any(|(f, _)| f == filing_id)
    }

    pub fn items_for_filing(&self, filing_id: &str) -> Vec<&ItemIndex> {
        self.items
            .iter()
            .filter(|((f, _), _)| f == filing_id)
            .map(|(_, idx)| idx)
            .collect()
    }

    pub fn item_indices(&self) -> Vec<&ItemIndex> {
        self.items.values().collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    index_config: crate::tree::IndexConfig,
    items: Vec<ManifestItem>,
    checksums: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestItem {
    filing_id: String,
    item_label: String,
    topology_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeHeader {
    filing_id: String,
    item_label: String,
    kind: TreeKind,
    root_ids: Vec<u32>,
    topology_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn tree_dir(item: &ItemIndex) -> String {
    format!("trees/{}/{}", item.filing_id(), item.item_label())
}

/// Serialize a tree's header + nodes as JSON Lines.
fn tree_jsonl(tree: &TreeIndex) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let header = TreeHeader {
        filing_id: tree.filing_id.clone(),
        item_label: tree.item_label.clone(),
        kind: tree.kind,
        root_ids: tree.root_ids.clone(),
        topology_hash: tree.topology_hash.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.push(b'\n');
    for node in &tree.nodes {
        serde_json::to_writer(&mut out, node)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Embedding slots for one Item, in the fixed order the sidecar uses:
/// leaf embeddings by node id, then question embeddings by node id and
/// question position.
fn embedding_slots(item: &ItemIndex) -> Vec<&EmbeddingVector> {
    let mut slots = Vec::new();
    for (_, emb) in item.summary.leaf_embeddings.iter() {
        slots.push(emb);
    }
    for (_, embs) in item.question.question_embeddings.iter() {
        for emb in embs {
            slots.push(emb);
        }
    }
    slots
}

fn encode_embeddings(slots: &[&EmbeddingVector]) -> Vec<u8> {
    let mut header = Vec::new();
    header.extend_from_slice(EMB_MAGIC);
    header.extend_from_slice(&1u32.to_le_bytes());
    header.extend_from_slice(&(slots.len() as u32).to_le_bytes());
    // Offset table: absolute payload offset, length in floats, space tag.
    let table_len = slots.len() * (8 + 4 + 1);
    let mut table = Vec::with_capacity(table_len);
    let mut payload = Vec::new();
    let payload_base = header.len() + table_len;
    for emb in slots {
        let offset = (payload_base + payload.len()) as u64;
        table.extend_from_slice(&offset.to_le_bytes());
        table.extend_from_slice(&(emb.values.len() as u32).to_le_bytes());
        table.push(match emb.space_tag {
            SpaceTag::Lexicon => 0,
            SpaceTag::Qa => 1,
        });
        for v in &emb.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = header;
    out.extend_from_slice(&table);
    out.extend_from_slice(&payload);
    out
}

fn decode_embeddings(bytes: &[u8], path: &str) -> Result<Vec<EmbeddingVector>> {
    let bad = || Error::ChecksumMismatch(path.to_string());
    if bytes.len() < 12 || &bytes[0..4] != EMB_MAGIC {
        return Err(bad());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(Error::VersionMismatch {
            found: version,
            supported: 1,
        });
    }
    let n_slots = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut slots = Vec::with_capacity(n_slots);
    let mut cursor = 12usize;
    for _ in 0..n_slots {
        if cursor + 13 > bytes.len() {
            return Err(bad());
        }
        let offset = u64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap()) as usize;
        let len = u32::from_le_bytes(bytes[cursor + 8..cursor + 12].try_into().unwrap()) as usize;
        let space = match bytes[cursor + 12] {
            0 => SpaceTag::Lexicon,
            1 => SpaceTag::Qa,
            _ => return Err(bad()),
        };
        cursor += 13;
        let end = offset + len * 4;
        if end > bytes.len() {
            return Err(bad());
        }
        let values: Vec<f32> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        slots.push(EmbeddingVector {
            values,
            space_tag: space,
        });
    }
    Ok(slots)
}

/// Persist the full bundle under `dir`. Rewrites deterministically: the same
/// bundle always produces byte-identical files.
pub fn save_index(bundle: &IndexBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut checksums = BTreeMap::new();
    let mut write_file = |rel: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, bytes)?;
        checksums.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    };

    // chunks.jsonl
    let mut chunk_bytes = Vec::new();
    for chunk in bundle.chunks.all() {
        serde_json::to_writer(&mut chunk_bytes, chunk)?;
        chunk_bytes.push(b'\n');
    }
    write_file("chunks.jsonl", &chunk_bytes)?;

    // flam.json
    let flam_bytes = serde_json::to_vec_pretty(&bundle.flam)?;
    write_file("flam.json", &flam_bytes)?;

    // trees
    let mut manifest_items = Vec::new();
    for item in bundle.items.values() {
        let base = tree_dir(item);
        write_file(&format!("{base}/summary.jsonl"), &tree_jsonl(&item.summary)?)?;
        write_file(&format!("{base}/question.jsonl"), &tree_jsonl(&item.question)?)?;
        let slots = embedding_slots(item);
        write_file(&format!("{base}/embeddings.bin"), &encode_embeddings(&slots))?;
        manifest_items.push(ManifestItem {
            filing_id: item.filing_id().to_string(),
            item_label: item.item_label().to_string(),
            topology_hash: item.summary.topology_hash.clone(),
        });
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: bundle.seed,
        index_config: bundle.config.clone(),
        items: manifest_items,
        checksums,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.json"))?);
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(())
}

fn read_tree_jsonl(bytes: &[u8], rel: &str) -> Result<TreeIndex> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::ChecksumMismatch(rel.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: TreeHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::ChecksumMismatch(rel.to_string()))?,
    )?;
    let mut nodes = Vec::new();
    for line in lines {
        nodes.push(serde_json::from_str(line)?);
    }
    Ok(TreeIndex {
        filing_id: header.filing_id,
        item_label: header.item_label,
        kind: header.kind,
        root_ids: header.root_ids,
        nodes,
        leaf_embeddings: BTreeMap::new(),
        question_embeddings: BTreeMap::new(),
        topology_hash: header.topology_hash,
    })
}

/// Load a bundle saved by [`save_index`], verifying format version and every
/// file checksum.
pub fn load_index(dir: &Path) -> Result<IndexBundle> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::IndexMissing(dir.display().to_string()));
    }
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            supported: FORMAT_VERSION,
        });
    }

    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (rel, expected) in &manifest.checksums {
        let path: PathBuf = dir.join(rel);
        let mut bytes = Vec::new();
        std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
        if &sha256_hex(&bytes) != expected {
            return Err(Error::ChecksumMismatch(rel.clone()));
        }
        files.insert(rel.clone(), bytes);
    }

    let chunk_bytes = files
        .get("chunks.jsonl")
        .ok_or_else(|| Error::ChecksumMismatch("chunks.jsonl".into()))?;
    let mut chunks = Vec::new();
    for line in std::str::from_utf8(chunk_bytes)
        .map_err(|_| Error::ChecksumMismatch("chunks.jsonl".into()))?
        .lines()
    {
        if line.trim().is_empty() {
            continue;
        }
        chunks.push(serde_json::from_str::<Chunk>(line)?);
    }

    let flam: FlamState = serde_json::from_slice(
        files
            .get("flam.json")
            .ok_or_else(|| Error::ChecksumMismatch("flam.json".into()))?,
    )?;

    let mut items = BTreeMap::new();
    for entry in &manifest.items {
        let base = format!("trees/{}/{}", entry.filing_id, entry.item_label);
        let srel = format!("{base}/summary.jsonl");
        let qrel = format!("{base}/question.jsonl");
        let erel = format!("{base}/embeddings.bin");
        let missing = |rel: &str| Error::ChecksumMismatch(rel.to_string());
        let mut summary = read_tree_jsonl(files.get(&srel).ok_or_else(|| missing(&srel))?, &srel)?;
        let mut question = read_tree_jsonl(files.get(&qrel).ok_or_else(|| missing(&qrel))?, &qrel)?;
        let slots = decode_embeddings(files.get(&erel).ok_or_else(|| missing(&erel))?, &erel)?;

        // Re-attach embeddings in the fixed slot order.
        let leaf_ids: Vec<u32> = summary
            .nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.node_id)
            .collect();
        let question_ids: Vec<(u32, usize)> = question
            .nodes
            .iter()
            .filter(|n| !n.questions.is_empty())
            .map(|n| (n.node_id, n.questions.len()))
            .collect();
        let expected = leaf_ids.len() + question_ids.iter().map(|(_, n)| n).sum::<usize>();
        if slots.len() != expected {
            return Err(Error::ChecksumMismatch(erel.clone()));
        }
        let mut cursor = slots.into_iter();
        for id in &leaf_ids {
            let emb = cursor.next().unwrap();
            summary.leaf_embeddings.insert(*id, emb.clone());
            question.leaf_embeddings.insert(*id, emb);
        }
        for (id, n) in question_ids {
            let embs: Vec<EmbeddingVector> = (0..n).map(|_| cursor.next().unwrap()).collect();
            question.question_embeddings.insert(id, embs);
        }
        items.insert(
            (entry.filing_id.clone(), entry.item_label.clone()),
            ItemIndex { summary, question },
        );
    }

    Ok(IndexBundle {
        config: manifest.index_config,
        seed: manifest.seed,
        chunks: ChunkStore::new(chunks),
        flam,
        items,
    })
}

/// Convenience used by the pipeline: read chunks.jsonl into a store.
pub fn load_chunk_store(path: &Path) -> Result<ChunkStore> {
    Ok(ChunkStore::new(ingest::read_chunks_jsonl(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flam::{FlamState, Lexicon};
    use crate::gmm::GmmConfig;
    use crate::ingest::{chunk_filing, parse_filing, ChunkingConfig, ParseOptions};
    use crate::providers::Providers;
    use crate::tree::{build_item_index, IndexConfig};

    fn small_bundle() -> IndexBundle {
        let providers = Providers::stub(0);
        let src = "Item 1. Business\n\nWe sell analytics software to banks. Revenue depends on subscriptions.\n\nItem 7. MD&A\n\nRevenue grew 4.2% in 2019. Net income margins improved. Litigation costs fell notably this year.\n";
        let filing = parse_filing(src, "acme-2019", &ParseOptions::default()).unwrap();
        let ccfg = ChunkingConfig {
            chunk_tokens: 8,
            overlap_tokens: 2,
            tokenizer: "word".into(),
        };
        let chunks = chunk_filing(&filing, &ccfg).unwrap();
        let icfg = IndexConfig {
            gmm_max_components: 4,
            seed: 1,
            ..Default::default()
        };
        let mut items = BTreeMap::new();
        for item in &filing.items {
            let item_chunks: Vec<_> = chunks
                .iter()
                .filter(|c| c.item_label == item.item_label)
                .cloned()
                .collect();
            let idx =
                build_item_index("acme-2019", &item.item_label, &item_chunks, &icfg, &providers)
                    .unwrap();
            items.insert(("acme-2019".to_string(), item.item_label.clone()), idx);
        }
        let lexicon = Lexicon::from_surfaces(["revenue".to_string(), "net income".to_string()]);
        let flam = FlamState::build(
            &[filing],
            lexicon,
            &providers,
            &GmmConfig { max_components: 2, ..Default::default() },
            10,
        )
        .unwrap();
        IndexBundle {
            config: icfg,
            seed: 1,
            chunks: ChunkStore::new(chunks),
            flam,
            items,
        }
    }

    #[test]
    fn save_load_round_trips_structure_and_embeddings() {
        let bundle = small_bundle();
        let dir = tempfile::tempdir().unwrap();
        save_index(&bundle, dir.path()).unwrap();
        let loaded = load_index(dir.path()).unwrap();

        assert_eq!(loaded.items.len(), bundle.items.len());
        for (key, item) in &bundle.items {
            let got = &loaded.items[key];
            assert_eq!(got.summary.topology_hash, item.summary.topology_hash);
            assert_eq!(got.question.topology_hash, item.question.topology_hash);
            assert_eq!(got.summary.nodes, item.summary.nodes);
            assert_eq!(got.question.nodes, item.question.nodes);
            // Bit-exact embedding round trip.
            for (id, emb) in &item.summary.leaf_embeddings {
                let other = &got.summary.leaf_embeddings[id];
                assert_eq!(
                    emb.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    other.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
            }
            for (id, embs) in &item.question.question_embeddings {
                let others = &got.question.question_embeddings[id];
                assert_eq!(embs.len(), others.len());
                for (a, b) in embs.iter().zip(others) {
                    assert_eq!(
                        a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                    );
                }
            }
        }
        assert_eq!(loaded.chunks.len(), bundle.chunks.len());
        assert_eq!(loaded.flam.lexicon.len(), bundle.flam.lexicon.len());
    }

    #[test]
    fn saves_are_byte_identical_across_runs() {
        let bundle = small_bundle();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_index(&bundle, d1.path()).unwrap();
        save_index(&bundle, d2.path()).unwrap();
        for rel in ["manifest.json", "chunks.jsonl", "flam.json"] {
            let a = std::fs::read(d1.path().join(rel)).unwrap();
            let b = std::fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs");
        }
    }

    #[test]
    fn corrupted_file_fails_checksum() {
        let bundle = small_bundle();
        let dir = tempfile::tempdir().unwrap();
        save_index(&bundle, dir.path()).unwrap();
        // Flip a byte in flam.json.
        let path = dir.path().join("flam.json");
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 2;
        bytes[last] = bytes[last].wrapping_add(1);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_index(dir.path()),
            Err(Error::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn newer_format_version_is_rejected() {
        let bundle = small_bundle();
        let dir = tempfile::tempdir().unwrap();
        save_index(&bundle, dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replace(
            "\"format_version\": 1",
            "\"format_version\": 2",
        );
        assert_ne!(text, bumped);
        std::fs::write(&path, bumped).unwrap();
        assert!(matches!(
            load_index(dir.path()),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn missing_index_dir_reports_index_missing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_index(&dir.path().join("nope")),
            Err(Error::IndexMissing(_))
        ));
    }
}
