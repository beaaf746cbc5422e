//! Residual projection head trained with InfoNCE on mined hard negatives.
//!
//! cargo run --example contrastive_adapter

use oats::adapter::{adapt_queries, AdapterTrainConfig};
use oats::embed::embed_corpus;
use oats::eval::{evaluate_method, SplitSpec};
use oats::pipeline::{adapter_job, Dataset};
use oats::scenario::{opaque_scenario, OpaqueConfig};
use oats::serve::{Engine, Method};
use oats::vector::dot;

fn main() -> oats::Result<()> {
    let sc = opaque_scenario(&OpaqueConfig::default())?;
    let base = embed_corpus(&sc.embedder, &sc.corpus.tools)?;
    let data = Dataset::prepare(&sc.corpus, &sc.embedder, &SplitSpec::with_seed(7))?;

    // The default learning rate (1e-5) is tuned for 384-d sentence
    // embeddings and thousands of triplets; this corpus is tiny.
    let config = AdapterTrainConfig {
        learning_rate: 1e-3,
        epochs: 20,
        ..AdapterTrainConfig::default()
    };
    let (model, adapted, report) = adapter_job(&base, &data, 10, 64, 5, &config)?;
    println!("{} triplets, {} parameters", report.triplets, model.param_count());
    for e in &report.train.epochs {
        println!("  epoch {:>2}: loss {:.4}  val NDCG@5 {:.3}", e.epoch, e.train_loss, e.val_ndcg);
    }
    println!(
        "best epoch {}; gate {:?} ({:.3} -> {:.3})",
        report.train.best_epoch, report.gate.decision, report.gate.baseline_recall, report.gate.candidate_recall
    );

    // Margin between each opaque tool and its strongest decoy on held-out
    // queries, before and after the projection.
    let held_out = adapt_queries(&model, &data.test)?;
    let adapted_table = oats::adapter::recompute_tool_embeddings(&model, &base)?;
    for (opaque, decoys) in &sc.pairs {
        let mut before = 0.0;
        let mut after = 0.0;
        let mut n = 0;
        for (q, qa) in data.test.iter().zip(&held_out) {
            if !q.relevant.contains(opaque) {
                continue;
            }
            let margin = |v: &[f32], t: &oats::EmbeddingTable| {
                let best = decoys.iter().map(|d| dot(v, t.get(d).unwrap())).fold(f32::MIN, f32::max);
                (dot(v, t.get(opaque).unwrap()) - best) as f64
            };
            before += margin(&q.vec, &base);
            after += margin(&qa.vec, &adapted_table);
            n += 1;
        }
        if n > 0 {
            println!("  {opaque}: mean margin {:+.3} -> {:+.3} over {n} queries", before / n as f64, after / n as f64);
        }
    }

    if let Some(adapted) = adapted {
        let engine = Engine::new(sc.corpus.tools.clone(), sc.embedder.clone(), base)?.with_adapter(model, adapted)?;
        for method in [Method::Se, Method::OatsS3] {
            let r = evaluate_method(&engine, method, &data.test, &[1, 5])?;
            println!("{:>3}: R@1 {:.3}  NDCG@5 {:.3}", method.to_string(), r.recall(1), r.ndcg(5));
        }
    }
    Ok(())
}
