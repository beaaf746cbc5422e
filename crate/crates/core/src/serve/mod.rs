//! Stage composition, the HTTP select endpoint and the batch CLI.

pub mod cli;
pub mod http;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::AdapterModel;
use crate::embed::{Embedder, EmbedderKind, EmbedderSpec, LabeledQuery};
use crate::error::{Error, Result};
use crate::rerank::{extract_features, rerank_candidates, FeatureContext, RerankModel};
use crate::retrieval::{
    dense_top_k, lexical_top_k, random_select, Bm25Index, CandidateList, LexicalConfig,
    LexicalFields,
};
use crate::store::{load_tools, read_embedding_table, EmbeddingTable, TableStore, ToolRecord};

pub const DATA_DIR_ENV: &str = "OATS_DATA_DIR";

/// Retrieval method, both as a serving stage and as an evaluation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Random,
    Bm25,
    Se,
    SeLexical,
    /// Dense retrieval over the refined table.
    OatsS1,
    /// Dense pool of `alpha_pool · K`, then the MLP re-ranker.
    OatsS2,
    /// Adapter-projected query over the adapter-recomputed table.
    OatsS3,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Random,
        Method::Bm25,
        Method::Se,
        Method::SeLexical,
        Method::OatsS1,
        Method::OatsS2,
        Method::OatsS3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Bm25 => "bm25",
            Method::Se => "se",
            Method::SeLexical => "lexical",
            Method::OatsS1 => "s1",
            Method::OatsS2 => "s2",
            Method::OatsS3 => "s3",
        }
    }

    fn needs_vector(self) -> bool {
        !matches!(self, Method::Random | Method::Bm25)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Method::Random,
            "bm25" => Method::Bm25,
            "se" => Method::Se,
            "lexical" | "se_lexical" => Method::SeLexical,
            "s1" | "oats_s1" => Method::OatsS1,
            "s2" | "oats_s2" => Method::OatsS2,
            "s3" | "oats_s3" => Method::OatsS3,
            other => return Err(Error::config(format!("unknown method `{other}`"))),
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

/// Default file names under the artifact root.
pub mod artifacts {
    pub const TOOLS: &str = "tools.jsonl";
    pub const QUERIES: &str = "queries.jsonl";
    pub const EMBEDDER: &str = "embedder.json";
    pub const TABLE: &str = "tools.emb";
    pub const REFINED: &str = "refined.emb";
    pub const GATE_REPORT: &str = "gate_report.json";
    pub const RERANK_MODEL: &str = "rerank.model";
    pub const RERANK_CONTEXT: &str = "rerank_context.json";
    pub const ADAPTER_MODEL: &str = "adapter.model";
    pub const ADAPTED: &str = "adapted.emb";
}

fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Serving configuration; the JSON config file mirrors this struct. Every
/// artifact path defaults to its standard name under `data_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub k: usize,
    pub stage: Method,
    pub alpha_pool: usize,
    pub bind: String,
    pub data_dir: PathBuf,
    pub tools: Option<PathBuf>,
    pub embedder: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub refined_table: Option<PathBuf>,
    pub adapted_table: Option<PathBuf>,
    pub rerank_model: Option<PathBuf>,
    pub rerank_context: Option<PathBuf>,
    pub adapter_model: Option<PathBuf>,
    /// Build the s2 pool from the refined table when one is loaded.
    pub refined_pool: bool,
    /// Re-rank the s3 candidates with the MLP.
    pub s3_rerank: bool,
    pub seed: u64,
    pub lexical: LexicalConfig,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            k: 5,
            stage: Method::Se,
            alpha_pool: 5,
            bind: "127.0.0.1:8080".into(),
            data_dir: default_data_dir(),
            tools: None,
            embedder: None,
            table: None,
            refined_table: None,
            adapted_table: None,
            rerank_model: None,
            rerank_context: None,
            adapter_model: None,
            refined_pool: true,
            s3_rerank: false,
            seed: 0,
            lexical: LexicalConfig::default(),
        }
    }
}

impl ServeConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ServeConfig = serde_json::from_str(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::ZeroK);
        }
        if self.alpha_pool == 0 {
            return Err(Error::config("alpha_pool must be >= 1"));
        }
        self.lexical.validate()
    }

    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.data_dir.join(name))
    }

    pub fn tools_path(&self) -> PathBuf {
        self.path(&self.tools, artifacts::TOOLS)
    }
    pub fn embedder_path(&self) -> PathBuf {
        self.path(&self.embedder, artifacts::EMBEDDER)
    }
    pub fn table_path(&self) -> PathBuf {
        self.path(&self.table, artifacts::TABLE)
    }
    pub fn refined_path(&self) -> PathBuf {
        self.path(&self.refined_table, artifacts::REFINED)
    }
    pub fn adapted_path(&self) -> PathBuf {
        self.path(&self.adapted_table, artifacts::ADAPTED)
    }
    pub fn rerank_model_path(&self) -> PathBuf {
        self.path(&self.rerank_model, artifacts::RERANK_MODEL)
    }
    pub fn rerank_context_path(&self) -> PathBuf {
        self.path(&self.rerank_context, artifacts::RERANK_CONTEXT)
    }
    pub fn adapter_model_path(&self) -> PathBuf {
        self.path(&self.adapter_model, artifacts::ADAPTER_MODEL)
    }

    pub fn options(&self) -> EngineOptions {
        EngineOptions {
            alpha_pool: self.alpha_pool,
            refined_pool: self.refined_pool,
            s3_rerank: self.s3_rerank,
            random_seed: self.seed,
            lexical: self.lexical,
        }
    }
}

/// Loads an embedder spec, resolving relative `source`/`sidecar` paths
/// against the spec file's directory.
pub fn load_embedder(path: &Path) -> Result<Embedder> {
    let mut spec = EmbedderSpec::load(path)?;
    if spec.kind == EmbedderKind::Precomputed {
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut spec.source, &mut spec.sidecar].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Embedder::from_spec(&spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub alpha_pool: usize,
    pub refined_pool: bool,
    pub s3_rerank: bool,
    pub random_seed: u64,
    pub lexical: LexicalConfig,
}

impl Default for EngineOptions {
    fn default() -> Self {
        ServeConfig::default().options()
    }
}

/// Which live table a publish targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Base,
    Refined,
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub candidates: CandidateList,
    /// Generation of the table that produced the candidates.
    pub generation: u64,
}

#[derive(Debug)]
struct Reranker {
    model: RerankModel,
    context: FeatureContext,
}

/// The composed selector. Reads go through immutable table snapshots, so a
/// concurrent publish never affects a request already in flight.
#[derive(Debug)]
pub struct Engine {
    tools: Vec<ToolRecord>,
    embedder: Embedder,
    base: TableStore,
    refined: Option<TableStore>,
    adapted: Option<TableStore>,
    adapter: Option<AdapterModel>,
    reranker: Option<Reranker>,
    bm25: Bm25Index,
    /// Aligned with the base table's row order.
    lexical_fields: Vec<LexicalFields>,
    ids: Vec<String>,
    options: EngineOptions,
}

fn check_layout(expected: &[String], table: &EmbeddingTable, what: &str) -> Result<()> {
    if table.ids() != expected {
        return Err(Error::InvalidRecord(format!(
            "{what} rows do not match the base table's tool ids"
        )));
    }
    Ok(())
}

impl Engine {
    /// Plain dense engine. `base` must hold exactly one row per tool.
    pub fn new(tools: Vec<ToolRecord>, embedder: Embedder, base: EmbeddingTable) -> Result<Self> {
        if base.dim() != embedder.dim() {
            return Err(Error::DimMismatch {
                expected: base.dim(),
                actual: embedder.dim(),
            });
        }
        let by_id: HashMap<&str, &ToolRecord> = tools.iter().map(|t| (t.id.as_str(), t)).collect();
        if by_id.len() != base.len() {
            return Err(Error::InvalidRecord(format!(
                "{} tools but {} table rows",
                by_id.len(),
                base.len()
            )));
        }
        let lexical_fields = base
            .ids()
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|t| LexicalFields::of(t))
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let bm25 = Bm25Index::build(&tools)?;
        let ids = base.ids().to_vec();
        Ok(Engine {
            tools,
            embedder,
            base: TableStore::new(base),
            refined: None,
            adapted: None,
            adapter: None,
            reranker: None,
            bm25,
            lexical_fields,
            ids,
            options: EngineOptions::default(),
        })
    }

    pub fn with_options(mut self, options: EngineOptions) -> Result<Self> {
        if options.alpha_pool == 0 {
            return Err(Error::config("alpha_pool must be >= 1"));
        }
        options.lexical.validate()?;
        self.options = options;
        Ok(self)
    }

    pub fn with_refined(mut self, table: EmbeddingTable) -> Result<Self> {
        check_layout(&self.ids, &table, "refined table")?;
        self.refined = Some(TableStore::new(table));
        Ok(self)
    }

    pub fn with_reranker(mut self, model: RerankModel, context: FeatureContext) -> Self {
        self.reranker = Some(Reranker { model, context });
        self
    }

    /// `adapted` is the adapter-recomputed tool table.
    pub fn with_adapter(mut self, model: AdapterModel, adapted: EmbeddingTable) -> Result<Self> {
        check_layout(&self.ids, &adapted, "adapted table")?;
        if model.dim() != adapted.dim() {
            return Err(Error::DimMismatch {
                expected: adapted.dim(),
                actual: model.dim(),
            });
        }
        self.adapter = Some(model);
        self.adapted = Some(TableStore::new(adapted));
        Ok(self)
    }

    /// Builds an engine from the artifacts named by `config`. Optional
    /// artifacts are loaded when present; those the configured stage needs
    /// must exist.
    pub fn load(config: &ServeConfig) -> Result<Self> {
        config.validate()?;
        let tools = load_tools(config.tools_path())?;
        let embedder = load_embedder(&config.embedder_path())?;
        let base = read_embedding_table(config.table_path())?;
        let mut engine = Engine::new(tools, embedder, base)?.with_options(config.options())?;
        let refined = config.refined_path();
        if refined.exists() {
            engine = engine.with_refined(read_embedding_table(&refined)?)?;
        }
        let (model, context) = (config.rerank_model_path(), config.rerank_context_path());
        if model.exists() && context.exists() {
            engine = engine.with_reranker(RerankModel::load(&model)?, FeatureContext::load(&context)?);
        }
        let (adapter, adapted) = (config.adapter_model_path(), config.adapted_path());
        if adapter.exists() && adapted.exists() {
            engine = engine.with_adapter(AdapterModel::load(&adapter)?, read_embedding_table(&adapted)?)?;
        }
        engine.check_method(config.stage)?;
        Ok(engine)
    }

    pub fn tools(&self) -> &[ToolRecord] {
        &self.tools
    }

    pub fn tool_count(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    fn store(&self, slot: Slot) -> Option<&TableStore> {
        match slot {
            Slot::Base => Some(&self.base),
            Slot::Refined => self.refined.as_ref(),
            Slot::Adapted => self.adapted.as_ref(),
        }
    }

    /// Current snapshot of a slot's table.
    pub fn table(&self, slot: Slot) -> Option<Arc<EmbeddingTable>> {
        self.store(slot).map(TableStore::load)
    }

    /// Publishes an approved candidate into a live slot and returns the new
    /// generation. Row ids must match the base layout.
    pub fn publish(&self, slot: Slot, candidate: &EmbeddingTable) -> Result<u64> {
        let store = self
            .store(slot)
            .ok_or_else(|| Error::MissingArtifact(format!("{slot:?} table")))?;
        check_layout(&self.ids, candidate, "candidate table")?;
        store.publish(candidate)
    }

    fn pool_slot(&self) -> Slot {
        if self.options.refined_pool && self.refined.is_some() {
            Slot::Refined
        } else {
            Slot::Base
        }
    }

    /// Errors when an artifact the method needs is not loaded.
    pub fn check_method(&self, method: Method) -> Result<()> {
        let missing = |what: &str| Err(Error::MissingArtifact(format!("{what} required by `{method}`")));
        match method {
            Method::OatsS1 if self.refined.is_none() => missing("refined table"),
            Method::OatsS2 if self.reranker.is_none() => missing("re-ranker model"),
            Method::OatsS3 if self.adapter.is_none() => missing("adapter model"),
            Method::OatsS3 if self.options.s3_rerank && self.reranker.is_none() => {
                missing("re-ranker model")
            }
            _ => Ok(()),
        }
    }

    /// Embeds the query and runs the method.
    pub fn select(&self, method: Method, query_text: &str, k: usize) -> Result<Selection> {
        if query_text.trim().is_empty() {
            return Err(Error::Empty("query"));
        }
        let vec = if method.needs_vector() {
            Some(self.embedder.embed(query_text)?)
        } else {
            None
        };
        self.run(method, query_text, query_text, vec.as_deref(), k)
    }

    /// Runs the method with an already embedded query.
    pub fn select_embedded(
        &self,
        method: Method,
        query_text: &str,
        query_vec: &[f32],
        k: usize,
    ) -> Result<Selection> {
        self.run(method, query_text, query_text, Some(query_vec), k)
    }

    /// Evaluation entry point. The random baseline is seeded from the query
    /// id as well as its text.
    pub fn select_query(&self, method: Method, query: &LabeledQuery, k: usize) -> Result<Selection> {
        let key = format!("{}\u{1f}{}", query.id, query.text);
        self.run(method, &key, &query.text, Some(&query.vec), k)
    }

    fn run(
        &self,
        method: Method,
        seed_key: &str,
        text: &str,
        vec: Option<&[f32]>,
        k: usize,
    ) -> Result<Selection> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        self.check_method(method)?;
        let embedded;
        let vec = match vec {
            Some(v) => v,
            None if method.needs_vector() => {
                embedded = self.embedder.embed(text)?;
                &embedded
            }
            None => &[],
        };
        match method {
            Method::Random => {
                let digest = Sha256::digest(seed_key.as_bytes());
                let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
                Ok(Selection {
                    candidates: random_select(&self.ids, k, self.options.random_seed ^ h)?,
                    generation: self.base.generation(),
                })
            }
            Method::Bm25 => Ok(Selection {
                candidates: self.bm25.top_k(text, k)?,
                generation: self.base.generation(),
            }),
            Method::Se => self.dense(Slot::Base, vec, k),
            Method::SeLexical => {
                let table = self.base.load();
                Ok(Selection {
                    candidates: lexical_top_k(
                        &self.options.lexical,
                        text,
                        vec,
                        &table,
                        &self.lexical_fields,
                        k,
                    )?,
                    generation: table.generation(),
                })
            }
            Method::OatsS1 => self.dense(Slot::Refined, vec, k),
            Method::OatsS2 => self.reranked(self.pool_slot(), text, vec, vec, k),
            Method::OatsS3 => {
                let adapter = self.adapter.as_ref().expect("checked");
                let projected = adapter.forward(vec)?;
                if self.options.s3_rerank {
                    self.reranked(Slot::Adapted, text, &projected, vec, k)
                } else {
                    self.dense(Slot::Adapted, &projected, k)
                }
            }
        }
    }

    fn dense(&self, slot: Slot, vec: &[f32], k: usize) -> Result<Selection> {
        let table = self.table(slot).expect("checked");
        Ok(Selection {
            candidates: dense_top_k(vec, &table, k)?,
            generation: table.generation(),
        })
    }

    /// `score_vec` ranks the pool; `cluster_vec` (the unprojected query)
    /// assigns the query to a success-rate cluster.
    fn reranked(
        &self,
        slot: Slot,
        text: &str,
        score_vec: &[f32],
        cluster_vec: &[f32],
        k: usize,
    ) -> Result<Selection> {
        let r = self.reranker.as_ref().expect("checked");
        let table = self.table(slot).expect("checked");
        let pool = dense_top_k(score_vec, &table, self.options.alpha_pool * k)?;
        let features = extract_features(text, cluster_vec, &pool, &r.context);
        Ok(Selection {
            candidates: rerank_candidates(&r.model, &features, &pool, k)?,
            generation: table.generation(),
        })
    }
}
