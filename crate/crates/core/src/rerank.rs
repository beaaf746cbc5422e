//! Candidate re-ranking with a `[7, 64, 32, 1]` MLP.
//!
//! A dense pool of `C = alpha_pool · K` candidates is turned into seven
//! features per candidate, scored by the MLP (ReLU hidden layers, sigmoid
//! output, trained with binary cross-entropy) and re-sorted.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::LabeledQuery;
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Linear, LinearGrad};
use crate::refine::LabelSource;
use crate::retrieval::{dense_top_k, Candidate, CandidateList};
use crate::store::{EmbeddingTable, ToolRecord};
use crate::text::tokenize;
use crate::vector;

pub const FEATURES: usize = 7;
pub const ARCH: [usize; 4] = [FEATURES, 64, 32, 1];
/// Success rate used for `(cluster, tool)` pairs with no observations.
pub const UNSEEN_SUCCESS_RATE: f64 = 0.5;
const KMEANS_MAX_ITERS: usize = 50;

/// `[sim, delta_sim, cat, sr, freq, qlen, rank_norm]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURES]);

impl FeatureVector {
    pub fn sim(&self) -> f64 {
        self.0[0]
    }
    pub fn delta_sim(&self) -> f64 {
        self.0[1]
    }
    pub fn category(&self) -> f64 {
        self.0[2]
    }
    pub fn success_rate(&self) -> f64 {
        self.0[3]
    }
    pub fn freq(&self) -> f64 {
        self.0[4]
    }
    pub fn query_len(&self) -> f64 {
        self.0[5]
    }
    pub fn rank_norm(&self) -> f64 {
        self.0[6]
    }
}

/// Seeded k-means over unit vectors (cosine assignment, renormalized
/// centroids, k-means++ initialization). Returns centroids and assignments.
pub fn kmeans(points: &[&[f32]], k: usize, seed: u64) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
    if k == 0 {
        return Err(Error::config("cluster count must be positive"));
    }
    if points.len() < k {
        return Err(Error::config(format!(
            "cannot build {k} clusters from {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f32>> = vec![points[rng.gen_range(0..points.len())].to_vec()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| (2.0 - 2.0 * vector::dot(p, c) as f64).max(0.0))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        };
        centroids.push(points[idx].to_vec());
    }
    let assign_all = |centroids: &[Vec<f32>]| -> Vec<usize> {
        points.iter().map(|p| nearest(centroids, p)).collect()
    };
    let mut assignments = assign_all(&centroids);
    for _ in 0..KMEANS_MAX_ITERS {
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members = points
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| *p);
            if let Some(mean) = vector::mean64(members, dim) {
                if let Some(unit) = vector::normalized_f32(&mean) {
                    *centroid = unit;
                }
            }
        }
        let next = assign_all(&centroids);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok((centroids, assignments))
}

fn nearest(centroids: &[Vec<f32>], p: &[f32]) -> usize {
    let mut best = 0;
    let mut best_sim = f32::NEG_INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let s = vector::dot(p, c);
        if s > best_sim {
            best_sim = s;
            best = i;
        }
    }
    best
}

/// `min(32, ceil(n / 50))`, at least 1.
pub fn default_cluster_count(train_queries: usize) -> usize {
    train_queries.div_ceil(50).clamp(1, 32)
}

/// Query clusters with per-`(cluster, tool)` success tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub centroids: Vec<Vec<f32>>,
    /// Per cluster: tool id → `[successes, total]`.
    pub tallies: Vec<BTreeMap<String, [u32; 2]>>,
}

impl ClusterStats {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn assign(&self, query_vec: &[f32]) -> usize {
        nearest(&self.centroids, query_vec)
    }

    pub fn record(&mut self, cluster: usize, tool_id: &str, success: bool) {
        let t = self.tallies[cluster].entry(tool_id.to_string()).or_default();
        t[0] += success as u32;
        t[1] += 1;
    }

    pub fn success_rate(&self, cluster: usize, tool_id: &str) -> f64 {
        match self.tallies.get(cluster).and_then(|m| m.get(tool_id)) {
            Some(&[s, n]) if n > 0 => s as f64 / n as f64,
            _ => UNSEEN_SUCCESS_RATE,
        }
    }
}

/// Clusters the training query vectors; tallies start empty and are filled
/// with [`ClusterStats::record`].
pub fn build_clusters(train_query_vecs: &[&[f32]], k: usize, seed: u64) -> Result<ClusterStats> {
    let (centroids, _) = kmeans(train_query_vecs, k, seed)?;
    Ok(ClusterStats {
        tallies: vec![BTreeMap::new(); centroids.len()],
        centroids,
    })
}

/// Everything besides the pool needed to compute features at serving time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContext {
    pub stats: ClusterStats,
    /// Tool id → frequency divided by the maximum frequency.
    pub freq: HashMap<String, f64>,
    pub categories: HashMap<String, String>,
}

impl FeatureContext {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }
}

pub fn normalized_freq(counts: impl IntoIterator<Item = (String, u64)>) -> HashMap<String, f64> {
    let counts: Vec<(String, u64)> = counts.into_iter().collect();
    let max = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    counts
        .into_iter()
        .map(|(id, c)| (id, if max == 0 { 0.0 } else { c as f64 / max as f64 }))
        .collect()
}

/// Modal non-empty category of the pool; ties go to the smallest name.
fn modal_category<'a>(pool: &CandidateList, ctx: &'a FeatureContext) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &pool.entries {
        if let Some(cat) = ctx.categories.get(&c.tool_id) {
            if !cat.is_empty() {
                *counts.entry(cat.as_str()).or_default() += 1;
            }
        }
    }
    let max = counts.values().copied().max()?;
    counts.into_iter().find(|(_, n)| *n == max).map(|(c, _)| c)
}

pub fn extract_features(
    query_text: &str,
    query_vec: &[f32],
    pool: &CandidateList,
    ctx: &FeatureContext,
) -> Vec<FeatureVector> {
    let n = pool.len();
    let cluster = ctx.stats.assign(query_vec);
    let qlen = (tokenize(query_text).len() as f64 / 100.0).clamp(0.0, 1.0);
    let modal = modal_category(pool, ctx);
    pool.entries
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let sim = c.score as f64;
            let delta = match pool.entries.get(i + 1) {
                Some(next) => (sim - next.score as f64).max(0.0),
                None => 0.0,
            };
            let cat = match (modal, ctx.categories.get(&c.tool_id)) {
                (Some(m), Some(cat)) if cat == m => 1.0,
                _ => 0.0,
            };
            let rank = if n > 1 {
                i as f64 / (n - 1) as f64
            } else {
                0.0
            };
            FeatureVector([
                sim,
                delta,
                cat,
                ctx.stats.success_rate(cluster, &c.tool_id),
                ctx.freq.get(&c.tool_id).copied().unwrap_or(0.0),
                qlen,
                rank,
            ])
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RerankHeader {
    arch: Vec<usize>,
    seed: u64,
}

/// The `[7, 64, 32, 1]` scorer. Weights are kept at `f32` precision between
/// training runs; all arithmetic is `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankModel {
    layers: Vec<Linear>,
    pub seed: u64,
    pub dropout: f64,
}

/// Activations kept for the backward pass.
struct Trace {
    input: [f64; FEATURES],
    h1: Vec<f64>,
    mask1: Vec<f64>,
    h2: Vec<f64>,
    mask2: Vec<f64>,
    logit: f64,
}

impl RerankModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = ARCH
            .windows(2)
            .map(|w| Linear::he(w[0], w[1], &mut rng))
            .collect();
        let mut m = RerankModel {
            layers,
            seed,
            dropout: 0.1,
        };
        m.round_to_f32();
        m
    }

    pub fn zeros() -> Self {
        RerankModel {
            layers: ARCH.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
            seed: 0,
            dropout: 0.1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        nn::flatten(&self.layers)
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        nn::unflatten(&mut self.layers, flat);
    }

    fn round_to_f32(&mut self) {
        self.layers.iter_mut().for_each(Linear::round_to_f32);
    }

    fn trace<R: Rng>(&self, x: &FeatureVector, mut dropout: Option<&mut R>) -> Trace {
        let p = self.dropout;
        let mut mask = |len: usize| -> Vec<f64> {
            match dropout.as_deref_mut() {
                Some(rng) if p > 0.0 => (0..len)
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
                    .collect(),
                _ => vec![1.0; len],
            }
        };
        let mut h1 = vec![0.0; ARCH[1]];
        self.layers[0].forward(&x.0, &mut h1);
        nn::relu_inplace(&mut h1);
        let mask1 = mask(h1.len());
        h1.iter_mut().zip(&mask1).for_each(|(h, m)| *h *= m);
        let mut h2 = vec![0.0; ARCH[2]];
        self.layers[1].forward(&h1, &mut h2);
        nn::relu_inplace(&mut h2);
        let mask2 = mask(h2.len());
        h2.iter_mut().zip(&mask2).for_each(|(h, m)| *h *= m);
        let mut out = [0.0];
        self.layers[2].forward(&h2, &mut out);
        Trace {
            input: x.0,
            h1,
            mask1,
            h2,
            mask2,
            logit: out[0],
        }
    }

    pub fn logit(&self, x: &FeatureVector) -> f64 {
        self.trace::<ChaCha8Rng>(x, None).logit
    }

    /// Probability of a positive outcome; dropout is off.
    pub fn forward(&self, x: &FeatureVector) -> f64 {
        nn::sigmoid(self.logit(x))
    }

    fn backward(&self, t: &Trace, dlogit: f64, grads: &mut [LinearGrad]) {
        let mut g2 = vec![0.0; ARCH[2]];
        self.layers[2].backward(&t.h2, &[dlogit], &mut grads[2], Some(&mut g2));
        // h2 = relu(z2) * mask2, and h2 > 0 exactly where the unit was active
        // and kept.
        for ((g, h), m) in g2.iter_mut().zip(&t.h2).zip(&t.mask2) {
            *g = if *h > 0.0 { *g * m } else { 0.0 };
        }
        let mut g1 = vec![0.0; ARCH[1]];
        self.layers[1].backward(&t.h1, &g2, &mut grads[1], Some(&mut g1));
        for ((g, h), m) in g1.iter_mut().zip(&t.h1).zip(&t.mask1) {
            *g = if *h > 0.0 { *g * m } else { 0.0 };
        }
        self.layers[0].backward(&t.input, &g1, &mut grads[0], None);
    }

    /// Mean binary cross-entropy over `batch` and its gradient (flattened in
    /// parameter order). `dropout_rng` enables training-mode dropout.
    pub fn bce_loss_and_grad(
        &self,
        batch: &[(FeatureVector, bool)],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<f64>) {
        let (loss, grads) = self.loss_grads(batch, dropout_rng);
        (loss, nn::flatten_grads(&grads))
    }

    fn loss_grads(
        &self,
        batch: &[(FeatureVector, bool)],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<LinearGrad>) {
        let mut grads: Vec<LinearGrad> = self.layers.iter().map(LinearGrad::zeros_like).collect();
        let n = batch.len().max(1) as f64;
        let mut loss = 0.0;
        for (x, y) in batch {
            let t = self.trace(x, dropout_rng.as_deref_mut());
            let y = *y as u8 as f64;
            loss += bce_from_logit(t.logit, y);
            self.backward(&t, (nn::sigmoid(t.logit) - y) / n, &mut grads);
        }
        (loss / n, grads)
    }

    /// Mean BCE with dropout off.
    pub fn bce(&self, data: &[(FeatureVector, bool)]) -> f64 {
        let n = data.len().max(1) as f64;
        data.iter()
            .map(|(x, y)| bce_from_logit(self.logit(x), *y as u8 as f64))
            .sum::<f64>()
            / n
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = RerankHeader {
            arch: ARCH.to_vec(),
            seed: self.seed,
        };
        nn::write_model(path.as_ref(), &header, &self.layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, layers) = nn::read_model(path.as_ref(), |h: &RerankHeader| h.arch.clone())?;
        if header.arch != ARCH {
            return Err(Error::Format(format!(
                "re-ranker arch must be {ARCH:?}, got {:?}",
                header.arch
            )));
        }
        Ok(RerankModel {
            layers,
            seed: header.seed,
            dropout: 0.1,
        })
    }
}

/// `−[y log σ(z) + (1 − y) log(1 − σ(z))]` computed without overflow.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Pool size factor: `C = alpha_pool · K`.
    pub alpha_pool: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub dropout: f64,
}

impl Default for RerankTrainConfig {
    fn default() -> Self {
        RerankTrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            alpha_pool: 5,
            patience: 5,
            dropout: 0.1,
        }
    }
}

impl RerankTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_pool < 1 {
            return Err(Error::config("alpha_pool must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0,1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Mini-batch Adam on mean BCE. With a validation set, the weights of the
/// epoch with the lowest validation BCE are returned and training stops
/// after `patience` epochs without improvement.
pub fn mlp_train(
    model: &RerankModel,
    train: &[(FeatureVector, bool)],
    val: &[(FeatureVector, bool)],
    config: &RerankTrainConfig,
) -> Result<(RerankModel, TrainLog)> {
    config.validate()?;
    if let Some((x, _)) = train.iter().chain(val).find(|(x, _)| x.0.iter().any(|v| !v.is_finite())) {
        return Err(Error::config(format!("non-finite feature vector {:?}", x.0)));
    }
    let mut model = model.clone();
    model.dropout = config.dropout;
    let mut log = TrainLog::default();
    if config.epochs == 0 || train.is_empty() {
        return Ok((model, log));
    }
    let mut opt = Adam::new(&model.layers, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(FeatureVector, bool)> = chunk.iter().map(|&i| train[i]).collect();
            let (loss, grads) = model.loss_grads(&batch, Some(&mut rng));
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            epoch_loss += loss * batch.len() as f64;
            opt.step(&mut model.layers, &grads);
        }
        log.train_loss.push(epoch_loss / train.len() as f64);
        if val.is_empty() {
            log.best_epoch = epoch;
            continue;
        }
        let v = model.bce(val);
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: usize::MAX,
                loss: v,
            });
        }
        log.val_loss.push(v);
        if v < best.0 {
            best = (v, model.clone());
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let mut out = if val.is_empty() { model } else { best.1 };
    out.round_to_f32();
    Ok((out, log))
}

/// Scores the pool with the model, stable-sorts by descending probability
/// (equal scores keep pool order) and keeps the first `k`.
pub fn rerank_candidates(
    model: &RerankModel,
    features: &[FeatureVector],
    pool: &CandidateList,
    k: usize,
) -> Result<CandidateList> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    if features.len() != pool.len() {
        return Err(Error::config(format!(
            "{} feature vectors for a pool of {}",
            features.len(),
            pool.len()
        )));
    }
    let mut scored: Vec<(f64, &Candidate)> = features
        .iter()
        .map(|f| model.forward(f))
        .zip(&pool.entries)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(CandidateList {
        entries: scored
            .into_iter()
            .take(k)
            .map(|(s, c)| Candidate {
                tool_id: c.tool_id.clone(),
                score: s as f32,
            })
            .collect(),
        query_id: pool.query_id.clone(),
    })
}

/// Labeled examples plus the feature context they were built with.
#[derive(Debug, Clone)]
pub struct RerankData {
    pub context: FeatureContext,
    pub train: Vec<(FeatureVector, bool)>,
    pub val: Vec<(FeatureVector, bool)>,
}

fn pools(
    table: &EmbeddingTable,
    queries: &[LabeledQuery],
    pool_size: usize,
) -> Result<Vec<CandidateList>> {
    queries
        .iter()
        .map(|q| dense_top_k(&q.vec, table, pool_size))
        .collect()
}

fn labeled(
    queries: &[LabeledQuery],
    pools: &[CandidateList],
    ctx: &FeatureContext,
) -> Vec<(FeatureVector, bool)> {
    let mut out = Vec::new();
    for (q, pool) in queries.iter().zip(pools) {
        let feats = extract_features(&q.text, &q.vec, pool, ctx);
        for (f, c) in feats.into_iter().zip(&pool.entries) {
            out.push((f, q.relevant.contains(&c.tool_id)));
        }
    }
    out
}

/// Builds pools of `alpha_pool · k` candidates for the fit and validation
/// queries, clusters the fit queries, tallies outcomes per cluster and
/// extracts labeled feature vectors.
///
/// Tool frequency comes from `tools[*].freq` when any is non-zero, otherwise
/// from the number of labeled retrievals in the fit pools.
pub fn build_rerank_data(
    table: &EmbeddingTable,
    tools: &[ToolRecord],
    fit: &[LabeledQuery],
    val: &[LabeledQuery],
    k: usize,
    config: &RerankTrainConfig,
    labels: &LabelSource,
) -> Result<RerankData> {
    config.validate()?;
    if fit.is_empty() {
        return Err(Error::Empty("re-ranker training queries"));
    }
    let pool_size = config.alpha_pool * k;
    let fit_pools = pools(table, fit, pool_size)?;
    let vecs: Vec<&[f32]> = fit.iter().map(|q| q.vec.as_slice()).collect();
    let clusters = default_cluster_count(fit.len()).min(fit.len());
    let mut stats = build_clusters(&vecs, clusters, config.seed)?;
    let mut retrieved: HashMap<String, u64> = HashMap::new();
    for (q, pool) in fit.iter().zip(&fit_pools) {
        let cluster = stats.assign(&q.vec);
        for c in &pool.entries {
            let ok = match labels {
                LabelSource::GroundTruth => Some(q.relevant.contains(&c.tool_id)),
                LabelSource::OutcomeLog(log) => log.get(&q.id, &c.tool_id),
            };
            if let Some(ok) = ok {
                stats.record(cluster, &c.tool_id, ok);
                *retrieved.entry(c.tool_id.clone()).or_default() += 1;
            }
        }
    }
    let freq = if tools.iter().any(|t| t.freq > 0) {
        normalized_freq(tools.iter().map(|t| (t.id.clone(), t.freq)))
    } else {
        normalized_freq(retrieved)
    };
    let context = FeatureContext {
        stats,
        freq,
        categories: tools
            .iter()
            .map(|t| (t.id.clone(), t.category.clone()))
            .collect(),
    };
    let train = labeled(fit, &fit_pools, &context);
    let val = labeled(val, &pools(table, val, pool_size)?, &context);
    Ok(RerankData {
        context,
        train,
        val,
    })
}
