//! Financial Lexicon-Aware Mapping (FLAM).
//!
//! FLAM decides *where* to look across SEC Items: lexicon terms are
//! clustered in the lexicon embedding space, term occurrences are counted
//! per Item and aggregated per cluster, the counts of the clusters activated
//! by a query become normalized Item weights, and the weights split the
//! global retrieval budget `k` into per-Item budgets `k_i*` with
//! `sum k_i* = k` exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{self, GmmConfig};
use crate::ingest::Filing;
use crate::providers::{Providers, SpaceTag};
use crate::reduce;
use crate::text;

/// A lexicon phrase, lowercase-normalized, with its cluster after
/// [`cluster_terms`] has run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconTerm {
    pub surface: String,
    pub cluster_id: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lexicon {
    pub terms: Vec<LexiconTerm>,
}

impl Lexicon {
    pub fn from_surfaces<I: IntoIterator<Item = String>>(surfaces: I) -> Self {
        let mut seen = BTreeSet::new();
        let mut terms = Vec::new();
        for raw in surfaces {
            let normalized = text::word_tokens(&raw).join(" ");
            if normalized.is_empty() || !seen.insert(normalized.clone()) {
                continue;
            }
            terms.push(LexiconTerm {
                surface: normalized,
                cluster_id: None,
            });
        }
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Load a lexicon from a text file (one term per line) or a CSV file with a
/// `term` column. Terms are normalized and deduplicated.
pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let data = std::fs::read_to_string(path)?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let surfaces: Vec<String> = if is_csv {
        let mut lines = data.lines();
        let header = lines.next().unwrap_or_default();
        let col = header
            .split(',')
            .position(|h| h.trim().trim_matches('"').eq_ignore_ascii_case("term"))
            .ok_or_else(|| Error::Config(format!("{}: no `term` column", path.display())))?;
        lines
            .filter_map(|l| l.split(',').nth(col))
            .map(|s| s.trim().trim_matches('"').to_string())
            .collect()
    } else {
        data.lines().map(|l| l.trim().to_string()).collect()
    };
    let lexicon = Lexicon::from_surfaces(surfaces);
    if lexicon.is_empty() {
        return Err(Error::EmptyLexicon(path.display().to_string()));
    }
    Ok(lexicon)
}

/// Cluster geometry kept after fitting: per-term assignments plus full-space
/// centroids used for nearest-centroid query fallback.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermClusters {
    /// Parallel to `Lexicon::terms`.
    pub assignments: Vec<usize>,
    /// Mean lexicon-space embedding of each cluster's members.
    pub centroids: Vec<Vec<f32>>,
    pub n_clusters: usize,
}

/// Embed lexicon terms (lexicon space), reduce, and soft-cluster with the
/// same Gaussian-mixture engine the tree builder uses; each term lands in
/// its argmax-responsibility component.
pub fn cluster_terms(
    lexicon: &mut Lexicon,
    providers: &Providers,
    gmm_cfg: &GmmConfig,
    reduced_dim: usize,
) -> Result<TermClusters> {
    if lexicon.is_empty() {
        return Err(Error::EmptyLexicon("<in-memory lexicon>".into()));
    }
    let surfaces: Vec<String> = lexicon.terms.iter().map(|t| t.surface.clone()).collect();
    let embeddings = providers.embedder.embed_texts(&surfaces, SpaceTag::Lexicon)?;
    let points: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.values.iter().map(|v| *v as f64).collect())
        .collect();
    let reduced = reduce::reduce_dims(&points, reduced_dim);
    let model = gmm::fit_gmm(&reduced, gmm_cfg);
    let resp = model.responsibilities(&reduced);

    let assignments: Vec<usize> = resp
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(c, _)| c)
                .unwrap_or(0)
        })
        .collect();

    let dim = embeddings[0].dim();
    let mut sums = vec![vec![0.0f64; dim]; model.n_components];
    let mut counts = vec![0usize; model.n_components];
    for (emb, &c) in embeddings.iter().zip(&assignments) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(&emb.values) {
            *s += *v as f64;
        }
    }
    let centroids: Vec<Vec<f32>> = sums
        .iter()
        .zip(&counts)
        .map(|(sum, &cnt)| {
            if cnt == 0 {
                vec![0.0f32; dim]
            } else {
                sum.iter().map(|s| (s / cnt as f64) as f32).collect()
            }
        })
        .collect();

    for (term, &c) in lexicon.terms.iter_mut().zip(&assignments) {
        term.cluster_id = Some(c);
    }

    Ok(TermClusters {
        assignments,
        centroids,
        n_clusters: model.n_components,
    })
}

/// Per-Item, per-cluster occurrence counts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TermFrequencyTable {
    pub counts: BTreeMap<String, BTreeMap<usize, u64>>,
}

impl TermFrequencyTable {
    pub fn item_labels(&self) -> Vec<String> {
        self.counts.keys().cloned().collect()
    }

    pub fn count(&self, item: &str, cluster: usize) -> u64 {
        self.counts
            .get(item)
            .and_then(|m| m.get(&cluster))
            .copied()
            .unwrap_or(0)
    }

    /// Sum of counts for `item` over the active cluster set.
    pub fn active_sum(&self, item: &str, active: &BTreeSet<usize>) -> u64 {
        self.counts
            .get(item)
            .map(|m| {
                m.iter()
                    .filter(|(c, _)| active.contains(c))
                    .map(|(_, n)| *n)
                    .sum()
            })
            .unwrap_or(0)
    }

    pub fn merge(&mut self, other: &TermFrequencyTable) {
        for (item, clusters) in &other.counts {
            let entry = self.counts.entry(item.clone()).or_default();
            for (c, n) in clusters {
                *entry.entry(*c).or_insert(0) += n;
            }
        }
    }
}

/// Longest-match phrase table over tokenized lexicon terms.
struct PhraseMatcher<'a> {
    /// first token -> (token sequence, cluster id), longest sequences first.
    by_first: BTreeMap<&'a str, Vec<(Vec<&'a str>, usize)>>,
}

impl<'a> PhraseMatcher<'a> {
    fn new(lexicon: &'a Lexicon) -> Self {
        let mut by_first: BTreeMap<&str, Vec<(Vec<&str>, usize)>> = BTreeMap::new();
        for term in &lexicon.terms {
            let Some(cluster) = term.cluster_id else { continue };
            let toks: Vec<&str> = term.surface.split(' ').collect();
            if toks.is_empty() {
                continue;
            }
            by_first.entry(toks[0]).or_default().push((toks, cluster));
        }
        for seqs in by_first.values_mut() {
            seqs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Self { by_first }
    }

    /// Non-overlapping longest-match scan; calls `hit` per matched phrase.
    fn scan(&self, tokens: &[String], mut hit: impl FnMut(usize)) {
        let mut i = 0;
        while i < tokens.len() {
            let mut advanced = false;
            if let Some(seqs) = self.by_first.get(tokens[i].as_str()) {
                for (seq, cluster) in seqs {
                    if i + seq.len() <= tokens.len()
                        && seq.iter().zip(&tokens[i..]).all(|(a, b)| *a == b.as_str())
                    {
                        hit(*cluster);
                        i += seq.len();
                        advanced = true;
                        break;
                    }
                }
            }
            if !advanced {
                i += 1;
            }
        }
    }
}

/// Count non-overlapping occurrences of lexicon phrases in each Item of a
/// filing, summed into per-cluster counts. Overlapping phrases resolve by
/// longest match ("net income" beats "income" on the same span).
pub fn match_terms(filing: &Filing, lexicon: &Lexicon) -> TermFrequencyTable {
    let matcher = PhraseMatcher::new(lexicon);
    let mut table = TermFrequencyTable::default();
    for item in &filing.items {
        let entry = table.counts.entry(item.item_label.clone()).or_default();
        let tokens = text::word_tokens(&item.body);
        matcher.scan(&tokens, |cluster| {
            *entry.entry(cluster).or_insert(0) += 1;
        });
    }
    table
}

/// Detect lexicon phrases in the query and return the union of their
/// cluster ids; when nothing matches, fall back to the single cluster whose
/// centroid is nearest the query's lexicon-space embedding.
pub fn expand_query_terms(
    query: &str,
    lexicon: &Lexicon,
    clusters: &TermClusters,
    providers: &Providers,
) -> Result<BTreeSet<usize>> {
    let matcher = PhraseMatcher::new(lexicon);
    let tokens = text::word_tokens(query);
    let mut active = BTreeSet::new();
    matcher.scan(&tokens, |cluster| {
        active.insert(cluster);
    });
    if !active.is_empty() {
        return Ok(active);
    }

    let emb = providers
        .embedder
        .embed_texts(&[query.to_string()], SpaceTag::Lexicon)?
        .remove(0);
    let mut best: Option<(usize, f64)> = None;
    for (c, centroid) in clusters.centroids.iter().enumerate() {
        let d2: f64 = centroid
            .iter()
            .zip(&emb.values)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum();
        if best.is_none_or(|(_, bd)| d2 < bd) {
            best = Some((c, d2));
        }
    }
    if let Some((c, _)) = best {
        active.insert(c);
    }
    Ok(active)
}

/// Weighting strategies for converting per-Item counts to weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightStrategy {
    #[default]
    RelativeFrequency,
    Logarithmic,
    Softmax,
}

impl WeightStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightStrategy::RelativeFrequency => "relative_frequency",
            WeightStrategy::Logarithmic => "logarithmic",
            WeightStrategy::Softmax => "softmax",
        }
    }
}

impl FromStr for WeightStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative_frequency" => Ok(Self::RelativeFrequency),
            "logarithmic" => Ok(Self::Logarithmic),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::Config(format!("unknown weighting strategy `{other}`"))),
        }
    }
}

/// Normalized per-Item weights; `sum w_i = 1`, each in [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemWeights {
    pub weights: BTreeMap<String, f64>,
    pub strategy: WeightStrategy,
}

/// Convert active-cluster counts to normalized Item weights.
///
/// - relative_frequency: `w_i = f_i / sum_j f_j`
/// - logarithmic:        `w_i` proportional to `ln(1 + f_i)`
/// - softmax:            `w_i = exp(f_i / tau) / sum_j exp(f_j / tau)` with
///   `tau = max_j f_j`, which keeps the exponents scale-stable
///
/// All-zero counts fall back to uniform weights so a query still retrieves.
pub fn compute_item_weights(
    table: &TermFrequencyTable,
    active_clusters: &BTreeSet<usize>,
    strategy: WeightStrategy,
) -> ItemWeights {
    let items = table.item_labels();
    let freqs: Vec<f64> = items
        .iter()
        .map(|i| table.active_sum(i, active_clusters) as f64)
        .collect();
    let total: f64 = freqs.iter().sum();

    let raw: Vec<f64> = if total == 0.0 {
        vec![1.0; items.len()]
    } else {
        match strategy {
            WeightStrategy::RelativeFrequency => freqs.clone(),
            WeightStrategy::Logarithmic => freqs.iter().map(|f| (1.0 + f).ln()).collect(),
            WeightStrategy::Softmax => {
                let tau = freqs.iter().cloned().fold(f64::MIN, f64::max).max(1.0);
                freqs.iter().map(|f| (f / tau).exp()).collect()
            }
        }
    };
    let norm: f64 = raw.iter().sum();
    let weights = items
        .into_iter()
        .zip(raw)
        .map(|(item, r)| (item, r / norm))
        .collect();
    ItemWeights { weights, strategy }
}

/// Integer per-Item budgets with `sum k_i* = k` exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub budgets: BTreeMap<String, usize>,
    pub total: usize,
}

impl BudgetAllocation {
    pub fn budget(&self, item: &str) -> usize {
        self.budgets.get(item).copied().unwrap_or(0)
    }
}

/// Round `k * w_i` per Item, then repair the total by largest remainder:
/// units are added to Items still at their quota floor (largest fractional
/// remainder first) or removed from Items above it (smallest remainder
/// first); ties break by larger weight, then by Item label.
pub fn allocate_budget(weights: &ItemWeights, k: usize) -> Result<BudgetAllocation> {
    if k < 1 {
        return Err(Error::InvalidBudget(k));
    }
    struct Slot {
        label: String,
        weight: f64,
        floor: u64,
        frac: f64,
        alloc: u64,
    }
    let mut slots: Vec<Slot> = weights
        .weights
        .iter()
        .map(|(label, &w)| {
            let quota = k as f64 * w;
            let floor = quota.floor();
            Slot {
                label: label.clone(),
                weight: w,
                floor: floor as u64,
                frac: quota - floor,
                alloc: quota.round() as u64,
            }
        })
        .collect();

    let mut sum: u64 = slots.iter().map(|s| s.alloc).sum();
    while sum != (k as u64) {
        if sum < k as u64 {
            let pick = slots
                .iter_mut()
                .filter(|s| s.alloc == s.floor)
                .max_by(|a, b| {
                    a.frac
                        .partial_cmp(&b.frac)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| {
                            a.weight
                                .partial_cmp(&b.weight)
                                .unwrap_or(std::cmp::Ordering::Equal)
                        })
                        .then_with(|| b.label.cmp(&a.label))
                })
                .expect("sum below k implies an item at its floor");
            pick.alloc += 1;
            sum += 1;
        } else {
            let pick = slots
                .iter_mut()
                .filter(|s| s.alloc > s.floor)
                .min_by(|a, b| {
                    a.frac
                        .partial_cmp(&b.frac)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| {
                            b.weight
                                .partial_cmp(&a.weight)
                                .unwrap_or(std::cmp::Ordering::Equal)
                        })
                        .then_with(|| a.label.cmp(&b.label))
                })
                .expect("sum above k implies an item above its floor");
            pick.alloc -= 1;
            sum -= 1;
        }
    }

    Ok(BudgetAllocation {
        budgets: slots.into_iter().map(|s| (s.label, s.alloc as usize)).collect(),
        total: k,
    })
}

/// Everything FLAM needs at query time, persisted with the index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlamState {
    pub lexicon: Lexicon,
    pub clusters: TermClusters,
    /// Per-filing term frequency tables.
    pub filing_tables: BTreeMap<String, TermFrequencyTable>,
    /// Corpus-level aggregate of all filing tables.
    pub corpus_table: TermFrequencyTable,
}

/// Whether FLAM counts come from the queried filing or the whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FlamScope {
    #[default]
    Filing,
    Corpus,
}

impl FlamState {
    pub fn build(
        filings: &[Filing],
        mut lexicon: Lexicon,
        providers: &Providers,
        gmm_cfg: &GmmConfig,
        reduced_dim: usize,
    ) -> Result<Self> {
        let clusters = cluster_terms(&mut lexicon, providers, gmm_cfg, reduced_dim)?;
        let mut filing_tables = BTreeMap::new();
        let mut corpus_table = TermFrequencyTable::default();
        for filing in filings {
            let table = match_terms(filing, &lexicon);
            corpus_table.merge(&table);
            filing_tables.insert(filing.filing_id.clone(), table);
        }
        Ok(Self {
            lexicon,
            clusters,
            filing_tables,
            corpus_table,
        })
    }

    pub fn table_for(&self, filing_id: &str, scope: FlamScope) -> Option<&TermFrequencyTable> {
        match scope {
            FlamScope::Filing => self.filing_tables.get(filing_id),
            FlamScope::Corpus => Some(&self.corpus_table),
        }
    }
}
