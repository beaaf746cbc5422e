//! Embedding providers.
//!
//! Real-model vectors arrive as files ([`EmbedderKind::Precomputed`]); the
//! synthetic provider is a deterministic token-hashing embedder used for
//! tests, examples and desk-scale experiments.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::store::{self, EmbeddingTable, QueryRecord, ToolRecord};
use crate::text::tokenize;
use crate::vector;

/// Weight of the cluster anchor in the synthetic cluster mode.
pub const CLUSTER_ANCHOR_WEIGHT: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Precomputed,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dim: usize,
    /// `*.emb` table holding the precomputed vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    /// Sidecar `{"<sha256 of text>": "<row id>"}`; defaults to
    /// `<source>.map.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Synthetic cluster mode: token → cluster label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clusters: BTreeMap<String, String>,
}

impl EmbedderSpec {
    pub fn synthetic(dim: usize, seed: u64) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Synthetic,
            dim,
            source: None,
            sidecar: None,
            seed,
            clusters: BTreeMap::new(),
        }
    }

    pub fn precomputed(dim: usize, source: impl Into<PathBuf>) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Precomputed,
            dim,
            source: Some(source.into()),
            sidecar: None,
            seed: 0,
            clusters: BTreeMap::new(),
        }
    }

    /// Declares that texts containing `keyword` belong to cluster `label`.
    pub fn with_cluster(mut self, keyword: &str, label: &str) -> Self {
        for tok in tokenize(keyword) {
            self.clusters.insert(tok, label.to_string());
        }
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Hex SHA-256 of the exact text; the precomputed lookup key.
pub fn text_key(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    dim: usize,
    seed: u64,
    clusters: HashMap<String, String>,
}

impl SyntheticEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        SyntheticEmbedder {
            dim,
            seed,
            clusters: HashMap::new(),
        }
    }

    fn gaussian(&self, domain: &str, key: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(domain.as_bytes());
        h.update([0u8]);
        h.update(key.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }

    /// Fixed unit direction of a cluster label.
    pub fn anchor(&self, label: &str) -> Vec<f64> {
        let mut a = self.gaussian("cluster", label);
        vector::normalize64(&mut a);
        a
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>> {
        if text.trim().is_empty() {
            return Err(Error::Empty("text"));
        }
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(text.to_string());
        }
        let mut acc = vec![0.0f64; self.dim];
        let mut anchors = vec![0.0f64; self.dim];
        let mut hits = 0usize;
        for tok in &tokens {
            let g = self.gaussian("token", tok);
            for (a, x) in acc.iter_mut().zip(&g) {
                *a += x;
            }
            if let Some(label) = self.clusters.get(tok) {
                for (a, x) in anchors.iter_mut().zip(self.anchor(label)) {
                    *a += x;
                }
                hits += 1;
            }
        }
        // Tokens may cancel exactly only in contrived inputs; fall back to
        // hashing the whole text.
        if vector::normalize64(&mut acc).is_none() {
            acc = self.gaussian("text", text);
            vector::normalize64(&mut acc);
        }
        if hits > 0 && vector::normalize64(&mut anchors).is_some() {
            let w = CLUSTER_ANCHOR_WEIGHT;
            for (a, x) in acc.iter_mut().zip(&anchors) {
                *a = w * x + (1.0 - w) * *a;
            }
            vector::normalize64(&mut acc);
        }
        Ok(vector::to_f32(&acc))
    }
}

#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    table: EmbeddingTable,
    keys: HashMap<String, String>,
}

impl PrecomputedEmbedder {
    pub fn open(source: &Path, sidecar: &Path) -> Result<Self> {
        let table = store::read_embedding_table_normalizing(source)?;
        let raw = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let keys: HashMap<String, String> = serde_json::from_str(&raw)?;
        Ok(PrecomputedEmbedder { table, keys })
    }

    pub fn from_parts(table: EmbeddingTable, keys: HashMap<String, String>) -> Self {
        PrecomputedEmbedder { table, keys }
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>> {
        if text.trim().is_empty() {
            return Err(Error::Empty("text"));
        }
        let key = text_key(text);
        let row = self
            .keys
            .get(&key)
            .and_then(|id| self.table.get(id))
            .ok_or(Error::Lookup(key))?;
        Ok(row.to_vec())
    }
}

/// Writes a precomputed source (`*.emb` plus sidecar map) from raw vectors.
/// Row ids are `r0`, `r1`, ... in input order; vectors are normalized.
pub fn write_precomputed_source(
    entries: &[(String, Vec<f32>)],
    source: &Path,
    sidecar: &Path,
) -> Result<()> {
    let dim = entries
        .first()
        .map(|(_, v)| v.len())
        .ok_or(Error::Empty("precomputed entries"))?;
    let mut ids = Vec::with_capacity(entries.len());
    let mut data = Vec::with_capacity(entries.len() * dim);
    let mut keys = BTreeMap::new();
    for (i, (text, v)) in entries.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        let id = format!("r{i}");
        keys.insert(text_key(text), id.clone());
        ids.push(id);
        data.extend_from_slice(v);
    }
    let table = EmbeddingTable::from_unnormalized(dim, ids, data)?;
    store::write_embedding_table(&table, source)?;
    std::fs::write(sidecar, serde_json::to_vec_pretty(&keys)?).map_err(|e| Error::io(sidecar, e))
}

/// A constructed provider. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub enum Embedder {
    Synthetic(SyntheticEmbedder),
    Precomputed(PrecomputedEmbedder),
}

impl Embedder {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self> {
        if spec.dim < 2 {
            return Err(Error::config("embedding dim must be at least 2"));
        }
        match spec.kind {
            EmbedderKind::Synthetic => Ok(Embedder::Synthetic(SyntheticEmbedder {
                dim: spec.dim,
                seed: spec.seed,
                clusters: spec.clusters.clone().into_iter().collect(),
            })),
            EmbedderKind::Precomputed => {
                let source = spec
                    .source
                    .as_ref()
                    .ok_or_else(|| Error::config("precomputed embedder requires `source`"))?;
                let sidecar = spec
                    .sidecar
                    .clone()
                    .unwrap_or_else(|| source.with_extension("map.json"));
                let p = PrecomputedEmbedder::open(source, &sidecar)?;
                if p.table.dim() != spec.dim {
                    return Err(Error::DimMismatch {
                        expected: spec.dim,
                        actual: p.table.dim(),
                    });
                }
                Ok(Embedder::Precomputed(p))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Synthetic(s) => s.dim,
            Embedder::Precomputed(p) => p.table.dim(),
        }
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>> {
        match self {
            Embedder::Synthetic(s) => s.embed(text),
            Embedder::Precomputed(p) => p.embed(text),
        }
    }
}

/// One-shot convenience: builds the provider and embeds a single text.
pub fn embed_text(spec: &EmbedderSpec, text: &str) -> Result<Vec<f32>> {
    Embedder::from_spec(spec)?.embed(text)
}

/// Embeds every tool description into a generation-0 table in tool order.
pub fn embed_corpus(embedder: &Embedder, tools: &[ToolRecord]) -> Result<EmbeddingTable> {
    let dim = embedder.dim();
    let mut ids = Vec::with_capacity(tools.len());
    let mut data = Vec::with_capacity(tools.len() * dim);
    for t in tools {
        data.extend(embedder.embed(&t.description)?);
        ids.push(t.id.clone());
    }
    EmbeddingTable::new(dim, ids, data)
}

/// A query with its embedding and ground-truth tool ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub id: String,
    pub text: String,
    pub vec: Vec<f32>,
    pub relevant: HashSet<String>,
}

impl LabeledQuery {
    pub fn new(id: impl Into<String>, vec: Vec<f32>, relevant: &[&str]) -> Self {
        LabeledQuery {
            id: id.into(),
            text: String::new(),
            vec,
            relevant: relevant.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn embed_queries(embedder: &Embedder, queries: &[QueryRecord]) -> Result<Vec<LabeledQuery>> {
    queries
        .iter()
        .map(|q| {
            Ok(LabeledQuery {
                id: q.id.clone(),
                text: q.text.clone(),
                vec: embedder.embed(&q.text)?,
                relevant: q.relevant.iter().cloned().collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        vector::cosine64(&vector::to_f64(a), &vector::to_f64(b))
    }

    #[test]
    fn synthetic_is_deterministic_and_unit() {
        let spec = EmbedderSpec::synthetic(64, 1);
        let a = embed_text(&spec, "hello").unwrap();
        let b = embed_text(&spec, "hello").unwrap();
        assert_eq!(a, b);
        assert!((vector::norm(&a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn seed_changes_vector() {
        let a = embed_text(&EmbedderSpec::synthetic(64, 1), "hello").unwrap();
        let b = embed_text(&EmbedderSpec::synthetic(64, 2), "hello").unwrap();
        assert!(cos(&a, &b) < 1.0 - 1e-6);
    }

    #[test]
    fn empty_text_rejected() {
        let spec = EmbedderSpec::synthetic(8, 1);
        assert!(matches!(embed_text(&spec, "   "), Err(Error::Empty(_))));
    }

    #[test]
    fn punctuation_only_text_still_embeds() {
        let v = embed_text(&EmbedderSpec::synthetic(8, 1), "?!").unwrap();
        assert!((vector::norm(&v) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cluster_mode_separates_clusters() {
        let spec = EmbedderSpec::synthetic(384, 9)
            .with_cluster("currency", "fx")
            .with_cluster("weather", "wx");
        let e = Embedder::from_spec(&spec).unwrap();
        let a = e.embed("convert currency from usd").unwrap();
        let b = e.embed("currency rates for yen today").unwrap();
        let c = e.embed("weather in paris tomorrow").unwrap();
        assert!(cos(&a, &b) >= 0.8, "{}", cos(&a, &b));
        assert!(cos(&a, &c) <= 0.3, "{}", cos(&a, &c));
    }

    #[test]
    fn precomputed_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("q.emb");
        let side = dir.path().join("q.map.json");
        write_precomputed_source(
            &[
                ("hello".into(), vec![3.0, 4.0]),
                ("world".into(), vec![0.0, 2.0]),
            ],
            &src,
            &side,
        )
        .unwrap();
        let spec = EmbedderSpec::precomputed(2, &src);
        let e = Embedder::from_spec(&spec).unwrap();
        assert_eq!(e.embed("hello").unwrap(), vec![0.6, 0.8]);
        assert!(matches!(e.embed("absent"), Err(Error::Lookup(_))));
    }

    #[test]
    fn embed_corpus_builds_unit_rows() {
        let e = Embedder::from_spec(&EmbedderSpec::synthetic(16, 3)).unwrap();
        let tools: Vec<ToolRecord> = ["alpha tool", "beta tool", "gamma"]
            .iter()
            .enumerate()
            .map(|(i, d)| ToolRecord {
                id: format!("t{i}"),
                name: format!("t{i}"),
                description: d.to_string(),
                category: String::new(),
                tags: vec![],
                freq: 0,
            })
            .collect();
        let t1 = embed_corpus(&e, &tools).unwrap();
        let t2 = embed_corpus(&e, &tools).unwrap();
        assert_eq!(t1.len(), 3);
        assert_eq!(t1.generation(), 0);
        assert_eq!(t1, t2);
        assert!(embed_corpus(&e, &[]).unwrap().is_empty());
    }
}
