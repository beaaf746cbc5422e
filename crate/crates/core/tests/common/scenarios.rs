//! Scenario measurements shared by the scenario tests and the acceptance run.

use oats::adapter::AdapterTrainConfig;
use oats::embed::embed_corpus;
use oats::eval::{evaluate_method, SplitSpec};
use oats::pipeline::{adapter_job, refine_job, Dataset};
use oats::refine::{refine_iterate, validation_gate, GateDecision, GateReport, LabelSource, OutcomeLabels, RefineConfig};
use oats::scenario::{opaque_scenario, OpaqueConfig, OpaqueScenario};
use oats::serve::{Engine, Method, Slot};
use oats::vector::dot;
use oats::{EmbeddingTable, OutcomeTriple};

pub struct Setup {
    pub sc: OpaqueScenario,
    pub base: EmbeddingTable,
    pub data: Dataset,
}

pub fn setup(seed: u64) -> Setup {
    let sc = opaque_scenario(&OpaqueConfig {
        seed,
        ..OpaqueConfig::default()
    })
    .unwrap();
    let base = embed_corpus(&sc.embedder, &sc.corpus.tools).unwrap();
    let data = Dataset::prepare(&sc.corpus, &sc.embedder, &SplitSpec::with_seed(seed)).unwrap();
    Setup { sc, base, data }
}

pub struct RefineOutcome {
    pub gate: GateReport,
    pub se_r1: f64,
    pub s1_r1: f64,
    /// Held-out opaque-tool queries, and how many had the opaque tool behind
    /// its best decoy before and ahead of it after refinement.
    pub opaque_queries: usize,
    pub behind_before: usize,
    pub ahead_after: usize,
}

fn margin(q: &[f32], table: &EmbeddingTable, opaque: &str, decoys: &[String]) -> f32 {
    let best = decoys.iter().map(|d| dot(q, table.get(d).unwrap())).fold(f32::MIN, f32::max);
    dot(q, table.get(opaque).unwrap()) - best
}

/// Default refinement with ground-truth labels, compared on the test split.
pub fn refine_outcome(seed: u64) -> RefineOutcome {
    let s = setup(seed);
    let (refined, report) = refine_job(&s.base, &s.data, &RefineConfig::default(), &LabelSource::GroundTruth).unwrap();
    let refined = refined.expect("gate should accept on the opaque scenario");
    let engine = Engine::new(s.sc.corpus.tools.clone(), s.sc.embedder.clone(), s.base.clone())
        .unwrap()
        .with_refined(refined.clone())
        .unwrap();
    let se = evaluate_method(&engine, Method::Se, &s.data.test, &[1]).unwrap();
    let s1 = evaluate_method(&engine, Method::OatsS1, &s.data.test, &[1]).unwrap();
    let mut out = RefineOutcome {
        gate: report.gate,
        se_r1: se.recall(1),
        s1_r1: s1.recall(1),
        opaque_queries: 0,
        behind_before: 0,
        ahead_after: 0,
    };
    for (opaque, decoys) in &s.sc.pairs {
        for q in s.data.test.iter().filter(|q| q.relevant.contains(opaque)) {
            out.opaque_queries += 1;
            out.behind_before += (margin(&q.vec, &s.base, opaque, decoys) < 0.0) as usize;
            out.ahead_after += (margin(&q.vec, &refined, opaque, decoys) > 0.0) as usize;
        }
    }
    out
}

/// Refines with every logged outcome inverted and runs the gate; returns the
/// report and the served generation before and after.
pub fn flipped_label_gate(seed: u64) -> (GateReport, u64, u64) {
    let s = setup(seed);
    let mut triples = Vec::new();
    for q in &s.data.fit {
        for id in s.base.ids() {
            triples.push(OutcomeTriple::new(&q.id, id, !q.relevant.contains(id)));
        }
    }
    let labels = LabelSource::OutcomeLog(OutcomeLabels::from_triples(&triples));
    let engine = Engine::new(s.sc.corpus.tools.clone(), s.sc.embedder.clone(), s.base.clone())
        .unwrap()
        .with_refined(s.base.clone())
        .unwrap();
    let before = engine.table(Slot::Refined).unwrap().generation();
    let run = refine_iterate(&s.base, &s.data.fit, &RefineConfig::default(), &labels).unwrap();
    let mut candidate = run.table;
    let gate = validation_gate(&s.base, &mut candidate, &s.data.val, 5).unwrap();
    if gate.decision == GateDecision::Accept {
        engine.publish(Slot::Refined, &candidate).unwrap();
    }
    let after = engine.table(Slot::Refined).unwrap().generation();
    (gate, before, after)
}

/// Mean opaque-minus-best-decoy margin on held-out opaque queries before
/// and after adapter training.
pub fn adapter_margin(seed: u64) -> (f64, f64) {
    let s = setup(seed);
    let cfg = AdapterTrainConfig {
        learning_rate: 1e-3,
        epochs: 10,
        seed,
        ..AdapterTrainConfig::default()
    };
    let (model, _, _) = adapter_job(&s.base, &s.data, 10, 64, 5, &cfg).unwrap();
    let adapted = oats::adapter::recompute_tool_embeddings(&model, &s.base).unwrap();
    let (mut before, mut after, mut n) = (0.0, 0.0, 0usize);
    for (opaque, decoys) in &s.sc.pairs {
        for q in s.data.test.iter().filter(|q| q.relevant.contains(opaque)) {
            before += margin(&q.vec, &s.base, opaque, decoys) as f64;
            after += margin(&model.forward(&q.vec).unwrap(), &adapted, opaque, decoys) as f64;
            n += 1;
        }
    }
    (before / n as f64, after / n as f64)
}
