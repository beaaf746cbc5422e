//! The seven-feature MLP re-ranker over a dense candidate pool.
//!
//! cargo run --example mlp_rerank

use oats::embed::embed_corpus;
use oats::eval::{evaluate_method, SplitSpec};
use oats::pipeline::{rerank_job, Dataset};
use oats::refine::LabelSource;
use oats::rerank::RerankTrainConfig;
use oats::scenario::{opaque_scenario, OpaqueConfig};
use oats::serve::{Engine, EngineOptions, Method};

fn main() -> oats::Result<()> {
    let sc = opaque_scenario(&OpaqueConfig::default())?;
    let base = embed_corpus(&sc.embedder, &sc.corpus.tools)?;
    let data = Dataset::prepare(&sc.corpus, &sc.embedder, &SplitSpec::with_seed(7))?;

    let config = RerankTrainConfig::default();
    let (model, context, log) = rerank_job(&base, &sc.corpus, &data, 5, &config, &LabelSource::GroundTruth)?;
    println!(
        "{} parameters, {} clusters, stopped after {} epochs (best {})",
        model.param_count(),
        context.stats.k(),
        log.train_loss.len(),
        log.best_epoch
    );
    if let (Some(first), Some(last)) = (log.val_loss.first(), log.val_loss.get(log.best_epoch.saturating_sub(1))) {
        println!("validation BCE {first:.4} -> {last:.4}");
    }

    let engine = Engine::new(sc.corpus.tools.clone(), sc.embedder.clone(), base)?
        .with_options(EngineOptions {
            alpha_pool: config.alpha_pool,
            ..EngineOptions::default()
        })?
        .with_reranker(model, context);
    for method in [Method::Se, Method::OatsS2] {
        let r = evaluate_method(&engine, method, &data.test, &[1, 5])?;
        println!("{:>3}: R@1 {:.3}  NDCG@5 {:.3}  MRR {:.3}", method.to_string(), r.recall(1), r.ndcg(5), r.mrr);
    }
    Ok(())
}
