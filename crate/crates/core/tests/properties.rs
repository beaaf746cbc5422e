mod common;

use std::collections::HashSet;

use common::{brute_top_k, cos, oracle_metrics};
use oats::eval::{ndcg_at_k, precision_at_k, recall_at_k, reciprocal_rank, split_dataset, SplitSpec};
use oats::refine::refine_step;
use oats::retrieval::{dense_top_k, Bm25Index};
use oats::text::tokenize;
use oats::vector::normalized_f32;
use oats::{EmbeddingTable, ToolRecord};
use proptest::prelude::*;

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter_map("zero vector", |v| normalized_f32(&v))
}

fn table_and_query() -> impl Strategy<Value = (EmbeddingTable, Vec<f32>, usize)> {
    (2usize..6, 1usize..20).prop_flat_map(|(dim, n)| {
        (prop::collection::vec(unit_vec(dim), n), unit_vec(dim), 1usize..25).prop_map(move |(rows, q, k)| {
            let ids = (0..n).map(|i| format!("t{i:02}")).collect();
            (EmbeddingTable::new(dim, ids, rows.concat()).unwrap(), q, k)
        })
    })
}

proptest! {
    #[test]
    fn dense_top_k_matches_brute_force((table, q, k) in table_and_query()) {
        let got = dense_top_k(&q, &table, k).unwrap();
        let rows: Vec<Vec<f32>> = table.rows().map(|r| r.to_vec()).collect();
        let want: Vec<&str> = brute_top_k(&q, table.ids(), &rows, k).into_iter().map(|i| table.ids()[i].as_str()).collect();
        prop_assert_eq!(got.ids(), want);
        prop_assert_eq!(got.len(), k.min(table.len()));
        prop_assert!(got.is_canonical());
    }

    #[test]
    fn metrics_match_oracle(
        n in 0usize..=8,
        rel_mask in 0u16..512,
        perm_seed in any::<u64>(),
        k in 1usize..10,
    ) {
        // Candidates c0..c{n-1} in a seeded order; relevant ids may include
        // one that was never retrieved (bit 8).
        let mut ranked: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let mut s = perm_seed;
        for i in (1..ranked.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ranked.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut relevant: HashSet<String> = (0..n).filter(|i| rel_mask & (1 << i) != 0).map(|i| format!("c{i}")).collect();
        if rel_mask & 256 != 0 {
            relevant.insert("absent".into());
        }
        let o = oracle_metrics(&ranked, &relevant, k);
        if !relevant.is_empty() {
            prop_assert!((recall_at_k(&ranked, &relevant, k).unwrap() - o.recall).abs() < 1e-12);
            prop_assert!((ndcg_at_k(&ranked, &relevant, k).unwrap() - o.ndcg).abs() < 1e-12);
        }
        prop_assert!((precision_at_k(&ranked, &relevant, k).unwrap() - o.precision).abs() < 1e-12);
        prop_assert!((reciprocal_rank(&ranked, &relevant) - o.rr).abs() < 1e-12);
    }

    #[test]
    fn attraction_never_lowers_cosine_to_positive_centroid(
        dim in 2usize..10,
        seed in any::<u64>(),
        n_pos in 1usize..6,
        alpha in 0.01f64..1.0,
    ) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut draw = || {
            let v: Vec<f64> = (0..dim).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            normalized_f32(&v).unwrap()
        };
        let e = draw();
        let pos: Vec<Vec<f32>> = (0..n_pos).map(|_| draw()).collect();
        let refs: Vec<&[f32]> = pos.iter().map(|v| v.as_slice()).collect();
        let centroid: Vec<f64> = (0..dim).map(|d| pos.iter().map(|p| p[d] as f64).sum::<f64>() / n_pos as f64).collect();
        prop_assume!(centroid.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let before = cos(&e.iter().map(|&x| x as f64).collect::<Vec<_>>(), &centroid);
        prop_assume!(before > -1.0 + 1e-6);
        let out = refine_step(&e, &refs, &[], alpha, 0.0).unwrap();
        let after = cos(&out.iter().map(|&x| x as f64).collect::<Vec<_>>(), &centroid);
        prop_assert!(after >= before - 1e-6, "before {before} after {after}");
    }

    #[test]
    fn split_partitions_the_queries(n in 10usize..300, seed in any::<u64>(), frac in 0.1f64..0.9) {
        let items: Vec<usize> = (0..n).collect();
        let spec = SplitSpec { seed, train_frac: frac, ..SplitSpec::default() };
        let (a, b) = split_dataset(&items, &spec).unwrap();
        prop_assert_eq!(a.len(), (frac * n as f64 + 1e-9).floor() as usize);
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn bm25_matches_naive_formula(
        docs in prop::collection::vec(prop::collection::vec(0usize..6, 1..8), 1..8),
        query in prop::collection::vec(0usize..8, 1..5),
    ) {
        const WORDS: [&str; 8] = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
        let tools: Vec<ToolRecord> = docs.iter().enumerate().map(|(i, d)| ToolRecord {
            id: format!("d{i}"),
            name: String::new(),
            description: d.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" "),
            category: String::new(),
            tags: Vec::new(),
            freq: 0,
        }).collect();
        let q: String = query.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ");
        let index = Bm25Index::build(&tools).unwrap();
        let got = index.scores(&q);
        // Naive: recount everything per document.
        let toks: Vec<Vec<String>> = tools.iter().map(|t| tokenize(&t.description)).collect();
        let n = toks.len() as f64;
        let avgdl = toks.iter().map(|t| t.len()).sum::<usize>() as f64 / n;
        for (i, d) in toks.iter().enumerate() {
            let mut want = 0.0;
            for term in tokenize(&q) {
                let df = toks.iter().filter(|t| t.contains(&term)).count() as f64;
                let tf = d.iter().filter(|w| **w == term).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                want += idf * tf * 2.2 / (tf + 1.2 * (1.0 - 0.75 + 0.75 * d.len() as f64 / avgdl));
            }
            prop_assert!((got[i] - want).abs() < 1e-9, "doc {i}: {} vs {want}", got[i]);
        }
    }
}

#[test]
fn ndcg_single_relevant_at_rank_two() {
    let rel: HashSet<String> = ["b".to_string()].into();
    let v = ndcg_at_k(&["a", "b", "c", "d", "e"], &rel, 5).unwrap();
    assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
    assert!((v - 0.6309).abs() < 5e-5);
}
