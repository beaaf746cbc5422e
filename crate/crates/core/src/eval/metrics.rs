//! Binary-relevance ranking metrics.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::ZeroK)
    } else {
        Ok(())
    }
}

fn hits<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> usize {
    ranked
        .iter()
        .take(k)
        .filter(|id| relevant.contains(id.as_ref()))
        .count()
}

/// Fraction of relevant tools found in the first `k`. Zero when nothing is relevant.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> Result<f64> {
    check_k(k)?;
    if relevant.is_empty() {
        return Ok(0.0);
    }
    Ok(hits(ranked, relevant, k) as f64 / relevant.len() as f64)
}

/// Relevant hits in the first `k` divided by `k`.
pub fn precision_at_k<S: AsRef<str>>(
    ranked: &[S],
    relevant: &HashSet<String>,
    k: usize,
) -> Result<f64> {
    check_k(k)?;
    Ok(hits(ranked, relevant, k) as f64 / k as f64)
}

/// DCG with gain 1 per relevant item and discount `log2(rank + 1)`,
/// normalized by the ideal DCG of `min(k, |relevant|)` leading hits.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>, k: usize) -> Result<f64> {
    check_k(k)?;
    let ideal_hits = k.min(relevant.len());
    if ideal_hits == 0 {
        return Ok(0.0);
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(id.as_ref()))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..ideal_hits).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(dcg / idcg)
}

/// 1 / rank of the first relevant item in the list, 0 if none.
pub fn reciprocal_rank<S: AsRef<str>>(ranked: &[S], relevant: &HashSet<String>) -> f64 {
    ranked
        .iter()
        .position(|id| relevant.contains(id.as_ref()))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Metrics of a single query at every requested K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub recall: BTreeMap<usize, f64>,
    pub precision: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub rr: f64,
}

impl QueryMetrics {
    pub fn compute<S: AsRef<str>>(
        query_id: &str,
        ranked: &[S],
        relevant: &HashSet<String>,
        ks: &[usize],
    ) -> Result<Self> {
        let mut m = QueryMetrics {
            query_id: query_id.to_string(),
            recall: BTreeMap::new(),
            precision: BTreeMap::new(),
            ndcg: BTreeMap::new(),
            rr: reciprocal_rank(ranked, relevant),
        };
        for &k in ks {
            m.recall.insert(k, recall_at_k(ranked, relevant, k)?);
            m.precision.insert(k, precision_at_k(ranked, relevant, k)?);
            m.ndcg.insert(k, ndcg_at_k(ranked, relevant, k)?);
        }
        Ok(m)
    }
}

/// Averages over queries plus the per-query rows they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    #[serde(default)]
    pub split_seed: Option<u64>,
    pub queries: usize,
    /// Queries skipped because their relevant set was empty.
    pub excluded: usize,
    pub ks: Vec<usize>,
    /// `recall@K`, `precision@K` and `ndcg@K` for every K.
    pub metrics: BTreeMap<String, f64>,
    pub mrr: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_query: Vec<QueryMetrics>,
}

impl MetricsReport {
    pub fn aggregate(method: &str, ks: &[usize], rows: Vec<QueryMetrics>, excluded: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut metrics = BTreeMap::new();
        for &k in ks {
            let mean = |f: fn(&QueryMetrics) -> &BTreeMap<usize, f64>| {
                rows.iter().map(|r| f(r)[&k]).sum::<f64>() / n
            };
            metrics.insert(format!("recall@{k}"), mean(|r| &r.recall));
            metrics.insert(format!("precision@{k}"), mean(|r| &r.precision));
            metrics.insert(format!("ndcg@{k}"), mean(|r| &r.ndcg));
        }
        let mrr = rows.iter().map(|r| r.rr).sum::<f64>() / n;
        MetricsReport {
            method: method.to_string(),
            split_seed: None,
            queries: rows.len(),
            excluded,
            ks: ks.to_vec(),
            metrics,
            mrr,
            per_query: rows,
        }
    }

    pub fn get(&self, name: &str, k: usize) -> Option<f64> {
        self.metrics.get(&format!("{name}@{k}")).copied()
    }

    pub fn recall(&self, k: usize) -> f64 {
        self.get("recall", k).unwrap_or(f64::NAN)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.get("ndcg", k).unwrap_or(f64::NAN)
    }

    /// One CSV row: method, then R@K, P@K, NDCG@K for each K, then MRR.
    pub fn csv_header(ks: &[usize]) -> String {
        let mut cols = vec!["method".to_string()];
        for name in ["recall", "precision", "ndcg"] {
            cols.extend(ks.iter().map(|k| format!("{name}@{k}")));
        }
        cols.push("mrr".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.method.clone()];
        for name in ["recall", "precision", "ndcg"] {
            cols.extend(
                self.ks
                    .iter()
                    .map(|&k| format!("{:.3}", self.get(name, k).unwrap_or(f64::NAN))),
            );
        }
        cols.push(format!("{:.3}", self.mrr));
        cols.join(",")
    }
}
