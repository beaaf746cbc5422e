//! Full evaluation table: baselines plus the three learned stages,
//! printed as CSV.
//!
//! cargo run --example eval_report

use oats::adapter::AdapterTrainConfig;
use oats::embed::embed_corpus;
use oats::eval::{evaluate_method, MetricsReport, SplitSpec};
use oats::pipeline::{adapter_job, refine_job, rerank_job, Dataset};
use oats::refine::{LabelSource, RefineConfig};
use oats::rerank::RerankTrainConfig;
use oats::scenario::{opaque_scenario, OpaqueConfig};
use oats::serve::{Engine, Method};

fn main() -> oats::Result<()> {
    let seed = 11;
    let sc = opaque_scenario(&OpaqueConfig {
        seed,
        ..OpaqueConfig::default()
    })?;
    let base = embed_corpus(&sc.embedder, &sc.corpus.tools)?;
    let data = Dataset::prepare(&sc.corpus, &sc.embedder, &SplitSpec::with_seed(seed))?;
    let labels = LabelSource::GroundTruth;

    let (refined, refine_report) = refine_job(&base, &data, &RefineConfig::default(), &labels)?;
    eprintln!("refine gate: {:?}", refine_report.gate.decision);
    let live = refined.clone().unwrap_or_else(|| base.clone());
    let (model, context, _) = rerank_job(&live, &sc.corpus, &data, 5, &RerankTrainConfig::default(), &labels)?;
    let adapter_cfg = AdapterTrainConfig {
        learning_rate: 1e-3,
        epochs: 10,
        ..AdapterTrainConfig::default()
    };
    let (adapter, adapted, adapter_report) = adapter_job(&live, &data, 10, 64, 5, &adapter_cfg)?;
    eprintln!("adapter gate: {:?}", adapter_report.gate.decision);

    let mut engine = Engine::new(sc.corpus.tools.clone(), sc.embedder.clone(), base)?.with_reranker(model, context);
    let mut methods = vec![Method::Random, Method::Bm25, Method::Se, Method::SeLexical];
    if let Some(t) = refined {
        engine = engine.with_refined(t)?;
        methods.extend([Method::OatsS1, Method::OatsS2]);
    }
    if let Some(t) = adapted {
        engine = engine.with_adapter(adapter, t)?;
        methods.push(Method::OatsS3);
    }

    let ks = [1, 3, 5];
    println!("{}", MetricsReport::csv_header(&ks));
    for method in methods {
        let mut r = evaluate_method(&engine, method, &data.test, &ks)?;
        r.split_seed = Some(seed);
        println!("{}", r.csv_row());
    }
    Ok(())
}
