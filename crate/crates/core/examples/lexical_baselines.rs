//! Random, BM25, dense and dense-plus-lexical baselines on the same split.
//!
//! cargo run --example lexical_baselines

use oats::embed::{embed_corpus, Embedder};
use oats::eval::{evaluate_method, SplitSpec};
use oats::pipeline::Dataset;
use oats::retrieval::{bm25_build, bm25_top_k};
use oats::scenario::catalog_corpus;
use oats::serve::{Engine, Method};

fn main() -> oats::Result<()> {
    let (corpus, spec) = catalog_corpus(384, 3, 6)?;
    let embedder = Embedder::from_spec(&spec)?;
    let table = embed_corpus(&embedder, &corpus.tools)?;
    let data = Dataset::prepare(&corpus, &embedder, &SplitSpec::with_seed(1))?;

    let index = bm25_build(&corpus.tools)?;
    let q = "exchange rate between two currencies";
    println!("BM25 for {q:?}:");
    for c in bm25_top_k(&index, q, 3)?.entries {
        println!("  {:<18} {:.3}", c.tool_id, c.score);
    }

    let engine = Engine::new(corpus.tools.clone(), embedder, table)?;
    println!("\n{:<8} {:>6} {:>6} {:>7} {:>6}", "method", "R@1", "R@3", "NDCG@3", "MRR");
    for method in [Method::Random, Method::Bm25, Method::Se, Method::SeLexical] {
        let r = evaluate_method(&engine, method, &data.test, &[1, 3])?;
        println!(
            "{:<8} {:>6.3} {:>6.3} {:>7.3} {:>6.3}",
            method.to_string(),
            r.recall(1),
            r.recall(3),
            r.ndcg(3),
            r.mrr
        );
    }
    Ok(())
}
