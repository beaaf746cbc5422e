//! Degenerate settings must reproduce their inputs exactly.

use oats::adapter::{recompute_tool_embeddings, AdapterModel};
use oats::embed::embed_corpus;
use oats::refine::{refine_iterate, refine_step, LabelSource, RefineConfig};
use oats::rerank::{build_clusters, FeatureContext, RerankModel};
use oats::scenario::{opaque_scenario, random_instance, OpaqueConfig};
use oats::serve::{Engine, Method};

#[test]
fn zero_alpha_and_beta_keep_tables_bit_stable() {
    for seed in 0..20 {
        let r = random_instance(seed, 12, 30, 8, 1).unwrap();
        let cfg = RefineConfig {
            alpha: 0.0,
            beta: 0.0,
            ..RefineConfig::default()
        };
        let run = refine_iterate(&r.table, &r.queries, &cfg, &LabelSource::GroundTruth).unwrap();
        assert_eq!(run.table, r.table, "seed {seed}");
        let e = r.table.row(0);
        let out = refine_step(e, &[r.queries[0].vec.as_slice()], &[r.queries[1].vec.as_slice()], 0.0, 0.0).unwrap();
        assert_eq!(out, e);
    }
}

#[test]
fn full_momentum_freezes_later_iterations() {
    for seed in 0..20 {
        let r = random_instance(seed, 12, 30, 8, 1).unwrap();
        let one = RefineConfig {
            iterations: 1,
            momentum: 1.0,
            ..RefineConfig::default()
        };
        let three = RefineConfig {
            iterations: 3,
            ..one
        };
        let a = refine_iterate(&r.table, &r.queries, &one, &LabelSource::GroundTruth).unwrap();
        let b = refine_iterate(&r.table, &r.queries, &three, &LabelSource::GroundTruth).unwrap();
        assert_eq!(a.table, b.table, "seed {seed}");
    }
}

fn engine_with_artifacts(adapter: AdapterModel, rerank: RerankModel) -> (Engine, Vec<oats::embed::LabeledQuery>) {
    let sc = opaque_scenario(&OpaqueConfig::default()).unwrap();
    let base = embed_corpus(&sc.embedder, &sc.corpus.tools).unwrap();
    let queries = oats::embed::embed_queries(&sc.embedder, &sc.corpus.queries).unwrap();
    let vecs: Vec<&[f32]> = queries.iter().map(|q| q.vec.as_slice()).collect();
    let ctx = FeatureContext {
        stats: build_clusters(&vecs, 3, 0).unwrap(),
        freq: Default::default(),
        categories: Default::default(),
    };
    let adapted = recompute_tool_embeddings(&adapter, &base).unwrap();
    let engine = Engine::new(sc.corpus.tools.clone(), sc.embedder.clone(), base.clone())
        .unwrap()
        .with_refined(base)
        .unwrap()
        .with_reranker(rerank, ctx)
        .with_adapter(adapter, adapted)
        .unwrap();
    (engine, queries)
}

#[test]
fn identity_adapter_reproduces_underlying_stage() {
    let (engine, queries) = engine_with_artifacts(AdapterModel::with_hidden(64, 32, 3), RerankModel::new(1));
    for q in &queries {
        let s1 = engine.select_query(Method::OatsS1, q, 5).unwrap();
        let s3 = engine.select_query(Method::OatsS3, q, 5).unwrap();
        assert_eq!(s1.candidates, s3.candidates, "{}", q.id);
    }
}

#[test]
fn constant_reranker_reproduces_dense_ranking() {
    let (engine, queries) = engine_with_artifacts(AdapterModel::with_hidden(64, 8, 0), RerankModel::zeros());
    for q in &queries {
        let se = engine.select_query(Method::Se, q, 5).unwrap();
        let s2 = engine.select_query(Method::OatsS2, q, 5).unwrap();
        assert_eq!(se.candidates.ids(), s2.candidates.ids(), "{}", q.id);
    }
}
