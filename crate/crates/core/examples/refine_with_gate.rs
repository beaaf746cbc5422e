//! Outcome-guided refinement on a corpus where some tools have opaque
//! descriptions and a lexical decoy outranks them.
//!
//! cargo run --example refine_with_gate

use oats::embed::embed_corpus;
use oats::eval::{evaluate_method, SplitSpec};
use oats::pipeline::{refine_job, Dataset};
use oats::refine::{LabelSource, RefineConfig};
use oats::scenario::{opaque_scenario, OpaqueConfig};
use oats::serve::{Engine, Method};

fn main() -> oats::Result<()> {
    let sc = opaque_scenario(&OpaqueConfig::default())?;
    let base = embed_corpus(&sc.embedder, &sc.corpus.tools)?;
    let data = Dataset::prepare(&sc.corpus, &sc.embedder, &SplitSpec::with_seed(7))?;

    let (refined, report) = refine_job(&base, &data, &RefineConfig::default(), &LabelSource::GroundTruth)?;
    println!(
        "gate: {:?}  val Recall@{}: {:.3} -> {:.3}",
        report.gate.decision, report.gate.gate_k, report.gate.baseline_recall, report.gate.candidate_recall
    );
    for it in &report.iterations {
        println!("  iteration {}: {} tools refined", it.iteration, it.refined);
    }
    let Some(refined) = refined else {
        println!("candidate rejected; serving the base table");
        return Ok(());
    };

    let engine = Engine::new(sc.corpus.tools.clone(), sc.embedder.clone(), base)?.with_refined(refined)?;
    for method in [Method::Se, Method::OatsS1] {
        let r = evaluate_method(&engine, method, &data.test, &[1, 3, 5])?;
        println!(
            "{:>3}: R@1 {:.3}  R@5 {:.3}  NDCG@5 {:.3}  MRR {:.3}",
            method.to_string(),
            r.recall(1),
            r.recall(5),
            r.ndcg(5),
            r.mrr
        );
    }

    // One held-out query for the first opaque tool.
    let (opaque, decoys) = &sc.pairs[0];
    let q = data
        .test
        .iter()
        .find(|q| q.relevant.contains(opaque))
        .expect("a held-out opaque query");
    println!("\nquery: {:?}", q.text);
    for (label, slot) in [("base", oats::serve::Slot::Base), ("refined", oats::serve::Slot::Refined)] {
        let table = engine.table(slot).expect("loaded");
        let sim = |id: &str| oats::vector::dot(&q.vec, table.get(id).expect("row"));
        let best_decoy = decoys.iter().map(|d| sim(d)).fold(f32::MIN, f32::max);
        println!(
            "  {label:>7} (gen {}): sim(opaque) {:.3}  best decoy {:.3}  margin {:+.3}",
            table.generation(),
            sim(opaque),
            best_decoy,
            sim(opaque) - best_decoy
        );
    }
    Ok(())
}
