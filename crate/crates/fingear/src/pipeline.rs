//! End-to-end orchestration used by the CLI: ingest a corpus, build the
//! index, answer queries, and run evaluations, all reproducible from one
//! config plus a seed. Every command writes its outputs under the run
//! directory together with a run manifest capturing the effective config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Params;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::flam::{self, FlamScope, WeightStrategy};
use crate::ingest::{self, ChunkingConfig, ParseOptions};
use crate::providers::{
    PromptTemplates, Provider, ProviderConfig, ProviderMode, Providers, StubProvider,
};
use crate::retrieval::{Ablation, QueryOutput, RetrievalEngine};
use crate::store::{self, IndexBundle};
use crate::tree::{self, IndexConfig, ItemIndex};

/// Provider wiring: one default config plus optional per-capability
/// overrides keyed by `embed`, `summarize`, `questions`, `score`, `judge`,
/// `read`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ProvidersConfig {
    #[serde(default)]
    pub default: ProviderConfig,
    #[serde(default)]
    pub overrides: BTreeMap<String, ProviderConfig>,
    /// Directory holding summarize.txt / title.txt / question.txt.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
}

/// Runtime overrides sourced from the environment by the CLI.
#[derive(Debug, Clone, Default)]
pub struct EnvOverrides {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
}

fn build_one(cfg: &ProviderConfig, env: &EnvOverrides) -> Result<Arc<dyn Provider>> {
    let mut cfg = cfg.clone();
    if let Some(endpoint) = &env.endpoint {
        cfg.endpoint = Some(endpoint.clone());
    }
    cfg.validate()?;
    match cfg.mode {
        ProviderMode::Stub => Ok(Arc::new(StubProvider::new(cfg.seed, cfg.dimension))),
        ProviderMode::Remote => {
            #[cfg(feature = "remote")]
            {
                Ok(Arc::new(crate::providers::remote::RemoteProvider::new(
                    &cfg,
                    env.api_key.clone(),
                )?))
            }
            #[cfg(not(feature = "remote"))]
            {
                Err(Error::Config(
                    "remote providers require the `remote` feature".into(),
                ))
            }
        }
    }
}

/// Build the capability router from config.
pub fn build_providers(cfg: &ProvidersConfig, env: &EnvOverrides) -> Result<Providers> {
    let templates = match &cfg.templates_dir {
        Some(dir) => PromptTemplates::load_dir(dir)?,
        None => PromptTemplates::default(),
    };
    templates.validate()?;
    let default = build_one(&cfg.default, env)?;
    let pick = |capability: &str| -> Result<Arc<dyn Provider>> {
        match cfg.overrides.get(capability) {
            Some(c) => build_one(c, env),
            None => Ok(default.clone()),
        }
    };
    Ok(Providers {
        embedder: pick("embed")?,
        summarizer: pick("summarize")?,
        questioner: pick("questions")?,
        scorer: pick("score")?,
        judge: pick("judge")?,
        reader: pick("read")?,
        templates,
    })
}

/// Full application configuration (one canonical TOML file).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppConfig {
    pub corpus_dir: PathBuf,
    pub index_dir: PathBuf,
    /// Run outputs (chunks.jsonl, stats.json, reports, run manifest).
    pub out_dir: PathBuf,
    pub lexicon_path: PathBuf,
    /// Optional corpus manifest (filing_id -> company/year/path).
    #[serde(default)]
    pub corpus_manifest: Option<PathBuf>,
    #[serde(default)]
    pub parse: ParseOptions,
    #[serde(default)]
    pub chunking: ChunkingConfig,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub traversal: crate::retrieval::TraversalConfig,
    #[serde(default)]
    pub providers: ProvidersConfig,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub flam_scope: FlamScope,
    #[serde(default)]
    pub weighting: WeightStrategy,
}

fn default_depths() -> Vec<usize> {
    vec![5, 10, 15]
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            index_dir: PathBuf::from("index"),
            out_dir: PathBuf::from("run"),
            lexicon_path: PathBuf::from("lexicon.txt"),
            corpus_manifest: None,
            parse: ParseOptions::default(),
            chunking: ChunkingConfig::default(),
            index: IndexConfig::default(),
            bm25: Bm25Params::default(),
            traversal: crate::retrieval::TraversalConfig::default(),
            providers: ProvidersConfig::default(),
            depths: default_depths(),
            seed: 0,
            flam_scope: FlamScope::default(),
            weighting: WeightStrategy::default(),
        }
    }
}

impl AppConfig {
    /// Propagate the run seed into the sub-configs that consume one.
    pub fn effective(mut self) -> Self {
        self.index.seed = self.seed;
        self.providers.default.seed = self.seed;
        for cfg in self.providers.overrides.values_mut() {
            cfg.seed = self.seed;
        }
        self
    }
}

fn write_run_manifest(cfg: &AppConfig, command: &str) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    #[derive(Serialize)]
    struct RunManifest<'a> {
        command: &'a str,
        seed: u64,
        config: &'a AppConfig,
    }
    let manifest = RunManifest {
        command,
        seed: cfg.seed,
        config: cfg,
    };
    std::fs::write(
        cfg.out_dir.join(format!("run-manifest-{command}.json")),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub n_filings: usize,
    pub n_chunks: usize,
    pub chunks_path: PathBuf,
    pub stats_path: PathBuf,
}

/// Parse the corpus, chunk every Item, and write chunks.jsonl + stats.json.
pub fn run_ingest(cfg: &AppConfig) -> Result<IngestSummary> {
    cfg.chunking.validate()?;
    let filings = ingest::load_corpus(
        &cfg.corpus_dir,
        cfg.corpus_manifest.as_deref(),
        &cfg.parse,
    )?;
    let mut chunks = Vec::new();
    for filing in &filings {
        chunks.extend(ingest::chunk_filing(filing, &cfg.chunking)?);
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let chunks_path = cfg.out_dir.join("chunks.jsonl");
    ingest::write_chunks_jsonl(&chunks, &chunks_path)?;

    let stats = ingest::corpus_stats(&filings, &chunks, &[])?;
    let stats_path = cfg.out_dir.join("stats.json");
    std::fs::write(&stats_path, serde_json::to_vec_pretty(&stats)?)?;
    write_run_manifest(cfg, "ingest")?;
    Ok(IngestSummary {
        n_filings: filings.len(),
        n_chunks: chunks.len(),
        chunks_path,
        stats_path,
    })
}

#[derive(Debug, Serialize)]
pub struct BuildSummary {
    pub n_filings: usize,
    pub n_items: usize,
    pub index_dir: PathBuf,
}

/// Build the full index: FLAM clustering + per-Item Summary/Question trees,
/// persisted under `index_dir`. Also refreshes stats.json with tree rows.
pub fn run_build_index(cfg: &AppConfig) -> Result<BuildSummary> {
    cfg.index.validate()?;
    cfg.chunking.validate()?;
    let providers = build_providers(&cfg.providers, &EnvOverrides::default())?;
    run_build_index_with(cfg, &providers)
}

/// As [`run_build_index`] with caller-supplied providers (used by the CLI,
/// which injects environment overrides).
pub fn run_build_index_with(cfg: &AppConfig, providers: &Providers) -> Result<BuildSummary> {
    let filings = ingest::load_corpus(
        &cfg.corpus_dir,
        cfg.corpus_manifest.as_deref(),
        &cfg.parse,
    )?;
    let mut chunks = Vec::new();
    for filing in &filings {
        chunks.extend(ingest::chunk_filing(filing, &cfg.chunking)?);
    }
    if chunks.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let lexicon = flam::load_lexicon(&cfg.lexicon_path)?;
    let gmm_cfg = cfg.index.gmm(cfg.index.seed);
    let flam_state = flam::FlamState::build(
        &filings,
        lexicon,
        providers,
        &gmm_cfg,
        cfg.index.reduced_dim,
    )?;

    let mut items = BTreeMap::new();
    for filing in &filings {
        for item in &filing.items {
            let item_chunks: Vec<_> = chunks
                .iter()
                .filter(|c| c.filing_id() == filing.filing_id && c.item_label == item.item_label)
                .cloned()
                .collect();
            if item_chunks.is_empty() {
                continue;
            }
            let idx = tree::build_item_index(
                &filing.filing_id,
                &item.item_label,
                &item_chunks,
                &cfg.index,
                providers,
            )?;
            items.insert((filing.filing_id.clone(), item.item_label.clone()), idx);
        }
    }

    let bundle = IndexBundle {
        config: cfg.index.clone(),
        seed: cfg.seed,
        chunks: store::ChunkStore::new(chunks),
        flam: flam_state,
        items,
    };
    store::save_index(&bundle, &cfg.index_dir)?;

    // Refresh stats with tree-shape rows now that indices exist.
    let indices: Vec<&ItemIndex> = bundle.item_indices();
    let stats = ingest::corpus_stats(&filings, bundle.chunks.all(), &indices)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(
        cfg.out_dir.join("stats.json"),
        serde_json::to_vec_pretty(&stats)?,
    )?;
    write_run_manifest(cfg, "build-index")?;
    Ok(BuildSummary {
        n_filings: filings.len(),
        n_items: bundle.items.len(),
        index_dir: cfg.index_dir.clone(),
    })
}

/// Query options beyond the config defaults.
#[derive(Debug, Clone, Default)]
pub struct QueryOptions {
    pub ablation: Ablation,
    pub weighting: Option<WeightStrategy>,
}

fn engine_for<'a>(
    cfg: &AppConfig,
    bundle: &'a IndexBundle,
    providers: &'a Providers,
    opts: &QueryOptions,
) -> RetrievalEngine<'a> {
    let mut engine = RetrievalEngine::new(bundle, providers);
    engine.bm25 = cfg.bm25.clone();
    engine.traversal = cfg.traversal.clone();
    engine.strategy = opts.weighting.unwrap_or(cfg.weighting);
    engine.scope = cfg.flam_scope;
    engine.ablation = opts.ablation;
    engine
}

/// Load the index and answer one query.
pub fn run_query(
    cfg: &AppConfig,
    providers: &Providers,
    filing_id: &str,
    query: &str,
    k: usize,
    opts: &QueryOptions,
) -> Result<QueryOutput> {
    let bundle = store::load_index(&cfg.index_dir)?;
    let engine = engine_for(cfg, &bundle, providers, opts);
    let result = engine.retrieve(query, filing_id, k)?;
    Ok(result.with_texts(&bundle.chunks))
}

/// Load the index and gold file, evaluate at the requested depths, and write
/// report.json / report.txt under the run directory.
pub fn run_eval_cmd(
    cfg: &AppConfig,
    providers: &Providers,
    gold_path: &Path,
    depths: &[usize],
    opts: &QueryOptions,
) -> Result<EvalReport> {
    let bundle = store::load_index(&cfg.index_dir)?;
    let gold = eval::load_gold(gold_path)?;
    let engine = engine_for(cfg, &bundle, providers, opts);
    let report = eval::run_eval(&gold, &engine, depths)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let suffix = engine
        .ablation
        .label()
        .map(|l| format!("-{l}"))
        .unwrap_or_default();
    std::fs::write(
        cfg.out_dir.join(format!("report{suffix}.json")),
        serde_json::to_vec_pretty(&report)?,
    )?;
    std::fs::write(
        cfg.out_dir.join(format!("report{suffix}.txt")),
        report.to_text_table(),
    )?;
    write_run_manifest(cfg, "eval")?;
    Ok(report)
}
