//! Serving-path scorers: exhaustive dense top-K, BM25, the weighted
//! lexical baseline and the random lower bound.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingTable, ToolRecord};
use crate::text::tokenize;
use crate::vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(rename = "id")]
    pub tool_id: String,
    pub score: f32,
}

/// Ranked `(tool id, score)` list. Producers keep scores non-increasing with
/// ties in ascending id order; a re-ranker keeps the pool order on ties.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub entries: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
}

fn rank_order(a: &(f32, &str), b: &(f32, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl CandidateList {
    /// Sorts by score descending, ascending id on ties, and keeps the first `k`.
    pub fn from_scores<'a>(scored: impl IntoIterator<Item = (&'a str, f32)>, k: usize) -> Self {
        let mut all: Vec<(f32, &str)> = scored.into_iter().map(|(id, s)| (s, id)).collect();
        if k < all.len() {
            all.select_nth_unstable_by(k, rank_order);
            all.truncate(k);
        }
        all.sort_unstable_by(rank_order);
        CandidateList {
            entries: all
                .into_iter()
                .map(|(score, id)| Candidate {
                    tool_id: id.to_string(),
                    score,
                })
                .collect(),
            query_id: None,
        }
    }

    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|c| c.tool_id.as_str()).collect()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    /// True when scores are non-increasing, ids unique and ties ordered by id.
    pub fn is_canonical(&self) -> bool {
        let unique: HashSet<&str> = self.entries.iter().map(|c| c.tool_id.as_str()).collect();
        unique.len() == self.entries.len()
            && self.entries.windows(2).all(|w| {
                w[0].score > w[1].score || (w[0].score == w[1].score && w[0].tool_id < w[1].tool_id)
            })
    }
}

/// The `k` rows with the highest dot product against `query` (cosine, since
/// everything is unit norm). Returns every row when the table is smaller.
pub fn dense_top_k(query: &[f32], table: &EmbeddingTable, k: usize) -> Result<CandidateList> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    if query.len() != table.dim() {
        return Err(Error::DimMismatch {
            expected: table.dim(),
            actual: query.len(),
        });
    }
    let scored = table
        .ids()
        .iter()
        .zip(table.rows())
        .map(|(id, row)| (id.as_str(), vector::dot(query, row)));
    Ok(CandidateList::from_scores(scored, k))
}

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Okapi BM25 over tool descriptions.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    ids: Vec<String>,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn build(tools: &[ToolRecord]) -> Result<Self> {
        Self::build_with(tools, BM25_K1, BM25_B)
    }

    pub fn build_with(tools: &[ToolRecord], k1: f64, b: f64) -> Result<Self> {
        if tools.is_empty() {
            return Err(Error::Empty("BM25 corpus"));
        }
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(tools.len());
        for (doc, t) in tools.iter().enumerate() {
            let tokens = tokenize(&t.description);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for tok in tokens {
                *tf.entry(tok).or_default() += 1;
            }
            for (term, f) in tf {
                postings.entry(term).or_default().push((doc as u32, f));
            }
        }
        let avgdl = doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;
        Ok(Bm25Index {
            postings,
            doc_lengths,
            avgdl,
            ids: tools.iter().map(|t| t.id.clone()).collect(),
            k1,
            b,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let nt = self.postings.get(term).map_or(0, |p| p.len()) as f64;
        (1.0 + (n - nt + 0.5) / (nt + 0.5)).ln()
    }

    /// Score of every document; each query token occurrence contributes.
    pub fn scores(&self, query_text: &str) -> Vec<f64> {
        let mut scores = vec![0.0f64; self.doc_count()];
        for tok in tokenize(query_text) {
            let Some(plist) = self.postings.get(&tok) else {
                continue;
            };
            let idf = self.idf(&tok);
            for &(doc, tf) in plist {
                let tf = tf as f64;
                let dl = self.doc_lengths[doc as usize] as f64;
                let norm = if self.avgdl > 0.0 { dl / self.avgdl } else { 0.0 };
                scores[doc as usize] +=
                    idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm));
            }
        }
        scores
    }

    pub fn top_k(&self, query_text: &str, k: usize) -> Result<CandidateList> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        let scores = self.scores(query_text);
        Ok(CandidateList::from_scores(
            self.ids.iter().map(String::as_str).zip(scores.into_iter().map(|s| s as f32)),
            k,
        ))
    }
}

pub fn bm25_build(tools: &[ToolRecord]) -> Result<Bm25Index> {
    Bm25Index::build(tools)
}

pub fn bm25_top_k(index: &Bm25Index, query_text: &str, k: usize) -> Result<CandidateList> {
    index.top_k(query_text, k)
}

/// Weights of the description/name/tags/category combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalConfig {
    pub w_desc: f64,
    pub w_name: f64,
    pub w_tags: f64,
    pub w_category: f64,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        LexicalConfig {
            w_desc: 0.6,
            w_name: 0.2,
            w_tags: 0.1,
            w_category: 0.1,
        }
    }
}

impl LexicalConfig {
    pub fn new(w_desc: f64, w_name: f64, w_tags: f64, w_category: f64) -> Result<Self> {
        let c = LexicalConfig {
            w_desc,
            w_name,
            w_tags,
            w_category,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.w_desc, self.w_name, self.w_tags, self.w_category];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config("lexical weights must be non-negative"));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("lexical weights must sum to 1"));
        }
        Ok(())
    }
}

/// |query tokens ∩ field tokens| / |query tokens|, in [0, 1].
fn overlap(query_tokens: &[String], field_tokens: &HashSet<String>) -> f64 {
    if query_tokens.is_empty() {
        return 0.0;
    }
    let hits = query_tokens
        .iter()
        .filter(|t| field_tokens.contains(t.as_str()))
        .count();
    (hits as f64 / query_tokens.len() as f64).clamp(0.0, 1.0)
}

fn token_set<'a>(fields: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    fields.into_iter().flat_map(tokenize).collect()
}

/// Per-tool token sets precomputed for the lexical baseline.
#[derive(Debug, Clone)]
pub struct LexicalFields {
    name: HashSet<String>,
    tags: HashSet<String>,
    category: HashSet<String>,
}

impl LexicalFields {
    pub fn of(tool: &ToolRecord) -> Self {
        LexicalFields {
            name: token_set([tool.name.as_str()]),
            tags: token_set(tool.tags.iter().map(String::as_str)),
            category: token_set([tool.category.as_str()]),
        }
    }
}

fn combo(
    cfg: &LexicalConfig,
    query_tokens: &[String],
    query_vec: &[f32],
    fields: &LexicalFields,
    tool_vec: &[f32],
) -> f64 {
    let cos = vector::dot(query_vec, tool_vec) as f64;
    cfg.w_desc * cos
        + cfg.w_name * overlap(query_tokens, &fields.name)
        + cfg.w_tags * overlap(query_tokens, &fields.tags)
        + cfg.w_category * overlap(query_tokens, &fields.category)
}

pub fn lexical_combo_score(
    cfg: &LexicalConfig,
    query_text: &str,
    query_vec: &[f32],
    tool: &ToolRecord,
    tool_vec: &[f32],
) -> Result<f64> {
    cfg.validate()?;
    if query_vec.len() != tool_vec.len() {
        return Err(Error::DimMismatch {
            expected: tool_vec.len(),
            actual: query_vec.len(),
        });
    }
    Ok(combo(
        cfg,
        &tokenize(query_text),
        query_vec,
        &LexicalFields::of(tool),
        tool_vec,
    ))
}

/// Ranks every tool by the lexical combination. `fields[i]` belongs to the
/// tool whose id is `table.ids()[i]`.
pub fn lexical_top_k(
    cfg: &LexicalConfig,
    query_text: &str,
    query_vec: &[f32],
    table: &EmbeddingTable,
    fields: &[LexicalFields],
    k: usize,
) -> Result<CandidateList> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    if query_vec.len() != table.dim() {
        return Err(Error::DimMismatch {
            expected: table.dim(),
            actual: query_vec.len(),
        });
    }
    let tokens = tokenize(query_text);
    let scored = table
        .ids()
        .iter()
        .zip(table.rows())
        .zip(fields)
        .map(|((id, row), f)| (id.as_str(), combo(cfg, &tokens, query_vec, f, row) as f32));
    Ok(CandidateList::from_scores(scored, k))
}

/// Uniform sample of `min(k, n)` tools without replacement; scores are 0.
pub fn random_select(tool_ids: &[String], k: usize, seed: u64) -> Result<CandidateList> {
    if tool_ids.is_empty() {
        return Err(Error::Empty("tool set"));
    }
    if k == 0 {
        return Err(Error::ZeroK);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, tool_ids.len(), k.min(tool_ids.len()));
    Ok(CandidateList::from_scores(
        picked.into_iter().map(|i| (tool_ids[i].as_str(), 0.0f32)),
        usize::MAX,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tool(id: &str, desc: &str) -> ToolRecord {
        ToolRecord {
            id: id.into(),
            name: id.into(),
            description: desc.into(),
            category: String::new(),
            tags: vec![],
            freq: 0,
        }
    }

    fn table_from(ids: &[&str], rows: &[Vec<f32>]) -> EmbeddingTable {
        EmbeddingTable::from_unnormalized(
            rows[0].len(),
            ids.iter().map(|s| s.to_string()).collect(),
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn worked_scores_pick_top_two() {
        let c = CandidateList::from_scores(
            [
                ("QuiverQuantitative", 0.337f32),
                ("buildbetter", 0.276),
                ("MixerBox_WebSearch", 0.254),
            ],
            2,
        );
        assert_eq!(c.ids(), vec!["QuiverQuantitative", "buildbetter"]);
    }

    #[test]
    fn self_similarity_ranks_first() {
        let t = table_from(
            &["a", "b", "c"],
            &[vec![1.0, 2.0, 0.5], vec![-1.0, 0.0, 1.0], vec![0.3, 0.3, 0.9]],
        );
        let q = t.row(1).to_vec();
        let c = dense_top_k(&q, &t, 3).unwrap();
        assert_eq!(c.entries[0].tool_id, "b");
        assert!((c.entries[0].score - 1.0).abs() < 1e-6);
        assert!(c.is_canonical());
    }

    #[test]
    fn ties_break_by_id_and_small_tables_return_all() {
        let t = table_from(&["z", "a", "m"], &[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
        let c = dense_top_k(&[1.0, 0.0], &t, 10).unwrap();
        assert_eq!(c.ids(), vec!["a", "m", "z"]);
    }

    #[test]
    fn dense_errors() {
        let t = table_from(&["a"], &[vec![1.0, 0.0]]);
        assert!(matches!(dense_top_k(&[1.0, 0.0], &t, 0), Err(Error::ZeroK)));
        assert!(matches!(
            dense_top_k(&[1.0, 0.0, 0.0], &t, 1),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn bm25_single_doc_hand_value() {
        let idx = Bm25Index::build(&[tool("d", "alpha beta")]).unwrap();
        let c = idx.top_k("alpha", 1).unwrap();
        assert!((c.entries[0].score as f64 - (4.0f64 / 3.0).ln()).abs() < 1e-6);
        assert!((c.entries[0].score as f64 - 0.2877).abs() < 1e-4);
    }

    #[test]
    fn bm25_no_overlap_scores_zero() {
        let idx = Bm25Index::build(&[tool("a", "alpha"), tool("b", "beta")]).unwrap();
        assert!(idx.scores("gamma delta").iter().all(|&s| s == 0.0));
        assert!(matches!(Bm25Index::build(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn lexical_degenerate_weights() {
        let t = ToolRecord {
            name: "currency converter".into(),
            ..tool("fx", "convert money")
        };
        let q = [0.6f32, 0.8];
        let tv = [1.0f32, 0.0];
        let desc_only = LexicalConfig::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let s = lexical_combo_score(&desc_only, "anything", &q, &t, &tv).unwrap();
        assert_eq!(s, vector::dot(&q, &tv) as f64);

        let name_only = LexicalConfig::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let s = lexical_combo_score(&name_only, "Converter currency", &q, &t, &tv).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn lexical_weighted_sum_by_hand() {
        // Query tokens: {book, flight, cheap, hotel}; 4 tokens.
        let t1 = ToolRecord {
            name: "flight booker".into(),
            category: "travel".into(),
            tags: vec!["flight".into(), "cheap".into()],
            ..tool("t1", "books flights")
        };
        let t2 = ToolRecord {
            name: "hotel finder".into(),
            category: "hotel".into(),
            tags: vec![],
            ..tool("t2", "finds hotels")
        };
        let cfg = LexicalConfig::default();
        let q = [1.0f32, 0.0];
        let text = "book flight cheap hotel";
        // t1: cos 0.8, name {flight, booker} -> 1/4, tags {flight, cheap} -> 2/4, category 0.
        let s1 = lexical_combo_score(&cfg, text, &q, &t1, &[0.8, 0.6]).unwrap();
        let want1 = 0.6 * 0.8f32 as f64 + 0.2 * 0.25 + 0.1 * 0.5 + 0.1 * 0.0;
        assert!((s1 - want1).abs() < 1e-12);
        // t2: cos 0.6, name {hotel, finder} -> 1/4, tags 0, category {hotel} -> 1/4.
        let s2 = lexical_combo_score(&cfg, text, &q, &t2, &[0.6, 0.8]).unwrap();
        let want2 = 0.6 * 0.6f32 as f64 + 0.2 * 0.25 + 0.0 + 0.1 * 0.25;
        assert!((s2 - want2).abs() < 1e-12);
    }

    #[test]
    fn lexical_weights_validated() {
        assert!(LexicalConfig::new(0.5, 0.5, 0.5, 0.0).is_err());
        assert!(LexicalConfig::new(1.2, -0.2, 0.0, 0.0).is_err());
    }

    #[test]
    fn random_select_is_seeded_permutation() {
        let ids: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let a = random_select(&ids, 3, 42).unwrap();
        assert_eq!(a, random_select(&ids, 3, 42).unwrap());
        let full = random_select(&ids, 6, 1).unwrap();
        let mut all = full.ids();
        all.sort();
        assert_eq!(all, vec!["t0", "t1", "t2", "t3", "t4", "t5"]);
        assert!(random_select(&[], 1, 0).is_err());
    }

    #[test]
    fn random_select_is_uniform() {
        let ids: Vec<String> = (0..4).map(|i| format!("t{i}")).collect();
        let mut counts = HashMap::new();
        for trial in 0..10_000u64 {
            let c = random_select(&ids, 1, trial).unwrap();
            *counts.entry(c.entries[0].tool_id.clone()).or_insert(0) += 1;
        }
        for id in &ids {
            let n = counts[id];
            assert!((2350..=2650).contains(&n), "{id}: {n}");
        }
    }
}
