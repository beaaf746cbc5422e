//! Single-thread p50/p99 of full select calls over 2,500 tools at d = 384.
//!
//! cargo run --release --example latency_bench

use oats::adapter::{recompute_tool_embeddings, AdapterModel};
use oats::embed::{embed_corpus, embed_queries, Embedder, EmbedderSpec};
use oats::eval::{bench_latency, BenchOptions};
use oats::rerank::{build_clusters, FeatureContext, RerankModel};
use oats::scenario::bulk_catalog;
use oats::serve::{Engine, Method};
use oats::QueryRecord;

fn main() -> oats::Result<()> {
    let (tools, texts) = bulk_catalog(2500, 200, 5);
    let embedder = Embedder::from_spec(&EmbedderSpec::synthetic(384, 5))?;
    let base = embed_corpus(&embedder, &tools)?;

    // Serving cost does not depend on what the learned artifacts contain,
    // so untrained ones are enough here.
    let records: Vec<QueryRecord> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| QueryRecord {
            id: format!("q{i}"),
            text: t.clone(),
            relevant: Vec::new(),
        })
        .collect();
    let queries = embed_queries(&embedder, &records)?;
    let vecs: Vec<&[f32]> = queries.iter().map(|q| q.vec.as_slice()).collect();
    let context = FeatureContext {
        stats: build_clusters(&vecs, 4, 5)?,
        freq: tools.iter().map(|t| (t.id.clone(), t.freq as f64 / 16.0)).collect(),
        categories: tools.iter().map(|t| (t.id.clone(), t.category.clone())).collect(),
    };
    let adapter = AdapterModel::new(384, 5);
    let adapted = recompute_tool_embeddings(&adapter, &base)?;
    let engine = Engine::new(tools, embedder, base.clone())?
        .with_refined(base)?
        .with_reranker(RerankModel::new(5), context)
        .with_adapter(adapter, adapted)?;

    let opts = BenchOptions::default();
    println!("{:<4} {:>9} {:>9}", "", "p50 ms", "p99 ms");
    for method in [Method::Se, Method::OatsS1, Method::OatsS2, Method::OatsS3] {
        let r = bench_latency(&engine, method, &texts, &opts)?;
        println!("{:<4} {:>9.3} {:>9.3}", method.to_string(), r.p50_ms, r.p99_ms);
    }
    println!("({} samples each)", opts.repetitions);
    Ok(())
}
