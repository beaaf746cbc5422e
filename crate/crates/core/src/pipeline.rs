//! Offline jobs wired together: split the labeled queries, refine behind the
//! gate, fit the re-ranker and the adapter. The CLI and the examples share
//! these entry points.

use serde::Serialize;

use crate::adapter::{
    adapt_queries, adapter_train, mine_triplets, recompute_tool_embeddings, AdapterModel,
    AdapterTrainConfig, AdapterTrainLog,
};
use crate::embed::{embed_queries, Embedder, LabeledQuery};
use crate::error::Result;
use crate::eval::{split_dataset, sub_split, SplitSpec};
use crate::refine::{
    refine_iterate, validation_gate, validation_gate_with, GateDecision, GateReport,
    IterationLog, LabelSource, OutcomeLabels, RefineConfig,
};
use crate::rerank::{build_rerank_data, mlp_train, FeatureContext, RerankModel, RerankTrainConfig, TrainLog};
use crate::store::{swap_generation, Corpus, EmbeddingTable};

/// Embedded queries split into train/test, and train into fit/validation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<LabeledQuery>,
    pub test: Vec<LabeledQuery>,
    pub fit: Vec<LabeledQuery>,
    pub val: Vec<LabeledQuery>,
}

impl Dataset {
    pub fn prepare(corpus: &Corpus, embedder: &Embedder, split: &SplitSpec) -> Result<Self> {
        let all = embed_queries(embedder, &corpus.queries)?;
        let (train, test) = split_dataset(&all, split)?;
        let (fit, val) = sub_split(&train, split)?;
        Ok(Dataset {
            train,
            test,
            fit,
            val,
        })
    }
}

/// Ground truth, or the corpus outcome log when `replay` is set.
pub fn label_source(corpus: &Corpus, replay: bool, unlogged_as_negative: bool) -> LabelSource {
    if replay {
        let mut labels = OutcomeLabels::from_triples(&corpus.outcomes);
        labels.unlogged_as_negative = unlogged_as_negative;
        LabelSource::OutcomeLog(labels)
    } else {
        LabelSource::GroundTruth
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineReport {
    pub config: RefineConfig,
    pub iterations: Vec<IterationLog>,
    pub gate: GateReport,
    /// Generation of the published table, if the gate accepted.
    pub published_generation: Option<u64>,
}

/// Refines on the fit queries and gates on the validation queries. On
/// acceptance the returned table carries the next generation.
pub fn refine_job(
    base: &EmbeddingTable,
    data: &Dataset,
    config: &RefineConfig,
    labels: &LabelSource,
) -> Result<(Option<EmbeddingTable>, RefineReport)> {
    let run = refine_iterate(base, &data.fit, config, labels)?;
    let mut candidate = run.table;
    let gate = validation_gate(base, &mut candidate, &data.val, config.gate_k)?;
    let published = match gate.decision {
        GateDecision::Accept => Some(swap_generation(base, &candidate)?),
        GateDecision::Reject => None,
    };
    let report = RefineReport {
        config: *config,
        iterations: run.log,
        gate,
        published_generation: published.as_ref().map(EmbeddingTable::generation),
    };
    Ok((published, report))
}

/// Builds features over `table` and trains a fresh model.
pub fn rerank_job(
    table: &EmbeddingTable,
    corpus: &Corpus,
    data: &Dataset,
    k: usize,
    config: &RerankTrainConfig,
    labels: &LabelSource,
) -> Result<(RerankModel, FeatureContext, TrainLog)> {
    let rd = build_rerank_data(table, &corpus.tools, &data.fit, &data.val, k, config, labels)?;
    let (model, log) = mlp_train(&RerankModel::new(config.seed), &rd.train, &rd.val, config)?;
    Ok((model, rd.context, log))
}

#[derive(Debug, Clone, Serialize)]
pub struct AdapterReport {
    pub triplets: usize,
    pub train: AdapterTrainLog,
    pub gate: GateReport,
    pub published_generation: Option<u64>,
}

/// Mines triplets over `source`, trains the adapter, recomputes the tool
/// table and gates it (adapted queries against the adapted table versus
/// plain queries against `source`).
pub fn adapter_job(
    source: &EmbeddingTable,
    data: &Dataset,
    pool_c: usize,
    hidden: usize,
    gate_k: usize,
    config: &AdapterTrainConfig,
) -> Result<(AdapterModel, Option<EmbeddingTable>, AdapterReport)> {
    let triplets = mine_triplets(source, &data.fit, pool_c)?;
    let init = AdapterModel::with_hidden(source.dim(), hidden, config.seed);
    let (model, train) = adapter_train(&init, &triplets, source, &data.fit, &data.val, config)?;
    let mut adapted = recompute_tool_embeddings(&model, source)?;
    let adapted_val = adapt_queries(&model, &data.val)?;
    let gate = validation_gate_with(source, &data.val, &mut adapted, &adapted_val, gate_k)?;
    let published = match gate.decision {
        GateDecision::Accept => Some(swap_generation(source, &adapted)?),
        GateDecision::Reject => None,
    };
    let report = AdapterReport {
        triplets: triplets.len(),
        train,
        gate,
        published_generation: published.as_ref().map(EmbeddingTable::generation),
    };
    Ok((model, published, report))
}
