//! Semantic embedding baseline: embed tool descriptions once, score every
//! tool against the query, keep the top K.
//!
//! cargo run --example dense_retrieval -- "convert 100 usd to eur"

use oats::embed::{embed_corpus, Embedder};
use oats::retrieval::dense_top_k;
use oats::scenario::catalog_corpus;

fn main() -> oats::Result<()> {
    let (corpus, spec) = catalog_corpus(384, 7, 2)?;
    let embedder = Embedder::from_spec(&spec)?;
    let table = embed_corpus(&embedder, &corpus.tools)?;
    println!("{} tools, dim {}, generation {}", table.len(), table.dim(), table.generation());

    let args: Vec<String> = std::env::args().skip(1).collect();
    let queries = if args.is_empty() {
        vec![
            "convert 100 usd to eur".to_string(),
            "will it rain in paris tomorrow".to_string(),
            "what can i cook with eggs and rice".to_string(),
        ]
    } else {
        args
    };
    for q in &queries {
        let top = dense_top_k(&embedder.embed(q)?, &table, 3)?;
        println!("\n{q}");
        for (rank, c) in top.entries.iter().enumerate() {
            println!("  {}. {:<18} {:.3}", rank + 1, c.tool_id, c.score);
        }
    }
    Ok(())
}
