//! Evaluation protocol: seeded splits, method-level metric runs and
//! single-core latency benchmarks.

pub mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::LabeledQuery;
use crate::error::{Error, Result};
use crate::serve::{Engine, Method};

pub use metrics::{
    ndcg_at_k, precision_at_k, recall_at_k, reciprocal_rank, MetricsReport, QueryMetrics,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_frac: f64,
    /// Share of the training split held out for validation.
    pub rerank_val_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            train_frac: 0.7,
            rerank_val_frac: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::config(format!(
                "train_frac must be in (0,1), got {}",
                self.train_frac
            )));
        }
        if !(self.rerank_val_frac > 0.0 && self.rerank_val_frac < 1.0) {
            return Err(Error::config(format!(
                "rerank_val_frac must be in (0,1), got {}",
                self.rerank_val_frac
            )));
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first `floor(frac · n)` items go left.
fn shuffled_cut<T: Clone>(items: &[T], frac: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // The epsilon keeps products like 0.7 · 10 = 7.000000000000001 on the
    // intended side of the floor.
    let cut = ((frac * items.len() as f64) + 1e-9).floor() as usize;
    let left = order[..cut].iter().map(|&i| items[i].clone()).collect();
    let right = order[cut..].iter().map(|&i| items[i].clone()).collect();
    (left, right)
}

/// `(train, test)` with `floor(train_frac · n)` training items.
pub fn split_dataset<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    spec.validate()?;
    if items.len() < 10 {
        return Err(Error::config(format!(
            "need at least 10 queries to split, got {}",
            items.len()
        )));
    }
    Ok(shuffled_cut(items, spec.train_frac, spec.seed))
}

/// `(fit, val)` sub-split of the training items.
pub fn sub_split<T: Clone>(train: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>)> {
    spec.validate()?;
    Ok(shuffled_cut(
        train,
        1.0 - spec.rerank_val_frac,
        spec.seed.wrapping_add(1),
    ))
}

fn check_ks(ks: &[usize]) -> Result<usize> {
    if ks.is_empty() {
        return Err(Error::config("at least one K is required"));
    }
    if ks.contains(&0) {
        return Err(Error::ZeroK);
    }
    Ok(*ks.iter().max().expect("non-empty"))
}

/// Runs `method` on every query with a non-empty relevant set and averages
/// the metrics; the per-query rows are kept.
pub fn evaluate_method(
    engine: &Engine,
    method: Method,
    queries: &[LabeledQuery],
    ks: &[usize],
) -> Result<MetricsReport> {
    let max_k = check_ks(ks)?;
    engine.check_method(method)?;
    let mut rows = Vec::with_capacity(queries.len());
    let mut excluded = 0;
    for q in queries {
        if q.relevant.is_empty() {
            excluded += 1;
            continue;
        }
        let sel = engine.select_query(method, q, max_k)?;
        rows.push(QueryMetrics::compute(
            &q.id,
            &sel.candidates.ids(),
            &q.relevant,
            ks,
        )?);
    }
    if excluded > 0 {
        log::info!("{excluded} queries without relevant tools excluded from averages");
    }
    if rows.is_empty() {
        return Err(Error::Empty("evaluation queries"));
    }
    Ok(MetricsReport::aggregate(&method.to_string(), ks, rows, excluded))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub method: String,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub samples: usize,
    pub note: String,
}

/// Nearest-rank percentile: the `ceil(p · n)`-th smallest sample.
pub fn percentile_nearest_rank(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

pub const MIN_BENCH_REPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub k: usize,
    pub repetitions: usize,
    /// Pin the measuring thread to one core where the platform allows.
    pub pin_core: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            k: 5,
            repetitions: 1000,
            pin_core: true,
        }
    }
}

/// Wall-clock latency of full `select` calls (embedding, scoring and any
/// re-ranking) on one thread, after one warm-up pass over the queries.
pub fn bench_latency(
    engine: &Engine,
    method: Method,
    query_texts: &[String],
    opts: &BenchOptions,
) -> Result<LatencyReport> {
    if opts.repetitions < MIN_BENCH_REPS {
        return Err(Error::config(format!(
            "at least {MIN_BENCH_REPS} repetitions are required, got {}",
            opts.repetitions
        )));
    }
    if query_texts.is_empty() {
        return Err(Error::Empty("benchmark queries"));
    }
    engine.check_method(method)?;
    std::thread::scope(|s| {
        s.spawn(|| {
            let mut pinned = false;
            if opts.pin_core {
                if let Some(core) = core_affinity::get_core_ids().and_then(|c| c.into_iter().next()) {
                    pinned = core_affinity::set_for_current(core);
                }
            }
            for q in query_texts.iter().take(opts.repetitions) {
                engine.select(method, q, opts.k)?;
            }
            let mut samples = Vec::with_capacity(opts.repetitions);
            for i in 0..opts.repetitions {
                let q = &query_texts[i % query_texts.len()];
                let start = Instant::now();
                let sel = engine.select(method, q, opts.k)?;
                samples.push(start.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(sel);
            }
            Ok(LatencyReport {
                method: method.to_string(),
                p50_ms: percentile_nearest_rank(&samples, 0.50).expect("non-empty"),
                p99_ms: percentile_nearest_rank(&samples, 0.99).expect("non-empty"),
                samples: samples.len(),
                note: format!(
                    "{} tools, dim {}, single thread{}, {} {}",
                    engine.tool_count(),
                    engine.dim(),
                    if pinned { " pinned to one core" } else { "" },
                    std::env::consts::OS,
                    std::env::consts::ARCH
                ),
            })
        })
        .join()
        .expect("benchmark thread panicked")
    })
}
