//! Readers keep selecting while a writer publishes new generations; every
//! response comes from one complete table.
//!
//! cargo run --example snapshot_swap

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

use oats::embed::embed_corpus;
use oats::eval::SplitSpec;
use oats::pipeline::Dataset;
use oats::refine::{refine_iterate, validation_gate, GateDecision, LabelSource, RefineConfig};
use oats::scenario::{opaque_scenario, OpaqueConfig};
use oats::serve::{Engine, Method, Slot};

fn main() -> oats::Result<()> {
    let sc = opaque_scenario(&OpaqueConfig::default())?;
    let base = embed_corpus(&sc.embedder, &sc.corpus.tools)?;
    let data = Dataset::prepare(&sc.corpus, &sc.embedder, &SplitSpec::with_seed(3))?;
    let engine = Engine::new(sc.corpus.tools.clone(), sc.embedder.clone(), base.clone())?.with_refined(base.clone())?;

    // Publishing requires gate approval; an unapproved table is refused.
    match engine.publish(Slot::Refined, &base) {
        Err(e) => println!("publish without gate: {e}"),
        Ok(g) => println!("unexpected publish of generation {g}"),
    }

    let done = AtomicBool::new(false);
    let texts: Vec<&str> = sc.corpus.queries.iter().map(|q| q.text.as_str()).collect();
    let seen = std::thread::scope(|s| {
        let readers: Vec<_> = (0..4)
            .map(|r| {
                let (engine, done, texts) = (&engine, &done, &texts);
                s.spawn(move || {
                    let mut seen = BTreeMap::new();
                    let mut i = r;
                    while !done.load(Ordering::Relaxed) {
                        let sel = engine.select(Method::OatsS1, texts[i % texts.len()], 5).expect("select");
                        *seen.entry(sel.generation).or_insert(0u64) += 1;
                        i += 4;
                    }
                    seen
                })
            })
            .collect();

        // Each round refines the currently served table and publishes it if
        // the gate accepts.
        for round in 1..=3 {
            let live = engine.table(Slot::Refined).expect("slot");
            let mut candidate =
                refine_iterate(&live, &data.fit, &RefineConfig::default(), &LabelSource::GroundTruth).expect("refine").table;
            let gate = validation_gate(&live, &mut candidate, &data.val, 5).expect("gate");
            print!(
                "round {round}: gate {:?} ({:.3} -> {:.3})",
                gate.decision, gate.baseline_recall, gate.candidate_recall
            );
            if gate.decision == GateDecision::Accept {
                print!(", published generation {}", engine.publish(Slot::Refined, &candidate).expect("publish"));
            }
            println!();
            std::thread::sleep(std::time::Duration::from_millis(50));
        }
        done.store(true, Ordering::Relaxed);
        readers.into_iter().map(|h| h.join().expect("reader")).collect::<Vec<_>>()
    });
    let mut total: BTreeMap<u64, u64> = BTreeMap::new();
    for m in seen {
        for (g, n) in m {
            *total.entry(g).or_default() += n;
        }
    }
    println!("responses per generation: {total:?}");
    Ok(())
}
