//! Writes the opaque-tool scenario to a directory, ready for the `oats`
//! command line: tools, labeled queries, an outcome log and precomputed
//! vectors for every text.
//!
//! cargo run --example write_fixture -- /tmp/oats-demo
//! OATS_DATA_DIR=/tmp/oats-demo cargo run --bin oats -- embed

use std::path::PathBuf;

use oats::embed::{embed_corpus, write_precomputed_source, EmbedderSpec};
use oats::retrieval::dense_top_k;
use oats::scenario::{opaque_scenario, OpaqueConfig};
use oats::store::write_jsonl;
use oats::OutcomeTriple;

fn main() -> oats::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "oats-demo".into()));
    let io = |path: PathBuf| move |e| oats::Error::Io { path, source: e };
    std::fs::create_dir_all(&dir).map_err(io(dir.clone()))?;

    let sc = opaque_scenario(&OpaqueConfig::default())?;
    let texts = sc
        .corpus
        .tools
        .iter()
        .map(|t| t.description.clone())
        .chain(sc.corpus.queries.iter().map(|q| q.text.clone()));
    let entries = texts
        .map(|t| sc.embedder.embed(&t).map(|v| (t, v)))
        .collect::<oats::Result<Vec<_>>>()?;
    write_precomputed_source(&entries, &dir.join("vectors.emb"), &dir.join("vectors.map.json"))?;
    let spec = EmbedderSpec::precomputed(sc.embedder.dim(), "vectors.emb");
    let spec_path = dir.join("embedder.json");
    std::fs::write(&spec_path, serde_json::to_vec_pretty(&spec)?).map_err(io(spec_path.clone()))?;

    // The log a live system would have: each query's top five by the base
    // embeddings, marked by whether the tool was the right one.
    let base = embed_corpus(&sc.embedder, &sc.corpus.tools)?;
    let mut outcomes = Vec::new();
    for q in &sc.corpus.queries {
        let vec = sc.embedder.embed(&q.text)?;
        for c in dense_top_k(&vec, &base, 5)?.entries {
            let ok = q.relevant.contains(&c.tool_id);
            outcomes.push(OutcomeTriple::new(&q.id, &c.tool_id, ok));
        }
    }

    write_jsonl(dir.join("tools.jsonl"), &sc.corpus.tools)?;
    write_jsonl(dir.join("queries.jsonl"), &sc.corpus.queries)?;
    write_jsonl(dir.join("outcomes.jsonl"), &outcomes)?;
    println!(
        "wrote {} tools, {} queries, {} outcomes to {}",
        sc.corpus.tools.len(),
        sc.corpus.queries.len(),
        outcomes.len(),
        dir.display()
    );
    if let Some(q) = sc.corpus.queries.iter().find(|q| q.id.starts_with("q_opaque")) {
        println!("sample query: {:?} -> {:?}", q.text, q.relevant);
    }
    Ok(())
}
