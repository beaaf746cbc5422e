//! Residual projection head trained with InfoNCE on mined hard negatives.
//!
//! `a(x) = normalize(x + W₂·relu(W₁x + b₁) + b₂)` with `W₂`, `b₂` zero at
//! initialization, so a fresh adapter is the identity map. The output keeps
//! the input dimension: the same adapter is applied to query vectors at
//! request time and to every tool row once ([`recompute_tool_embeddings`]),
//! and nothing else on the serving path changes.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::LabeledQuery;
use crate::error::{Error, Result};
use crate::eval::metrics::ndcg_at_k;
use crate::nn::{self, Adam, Linear, LinearGrad};
use crate::retrieval::dense_top_k;
use crate::store::EmbeddingTable;
use crate::vector;

pub const DEFAULT_HIDDEN: usize = 256;

/// Parameters of a `[dim, hidden, dim]` head.
pub fn adapter_param_count(dim: usize, hidden: usize) -> usize {
    dim * hidden + hidden + hidden * dim + dim
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdapterHeader {
    arch: Vec<usize>,
    residual: bool,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    dim: usize,
    hidden: usize,
    layers: Vec<Linear>,
    pub seed: u64,
    /// When false, [`AdapterModel::forward`] returns its input untouched.
    pub enabled: bool,
}

struct Pass {
    x: Vec<f64>,
    z1: Vec<f64>,
    h: Vec<f64>,
    u_norm: f64,
    out: Vec<f64>,
}

impl AdapterModel {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_hidden(dim, DEFAULT_HIDDEN, seed)
    }

    /// He-initialized first layer, zero second layer.
    pub fn with_hidden(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut first = Linear::he(dim, hidden, &mut rng);
        first.round_to_f32();
        AdapterModel {
            dim,
            hidden,
            layers: vec![first, Linear::zeros(hidden, dim)],
            seed,
            enabled: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
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

    fn pass(&self, x: &[f64]) -> Pass {
        let mut z1 = vec![0.0; self.hidden];
        self.layers[0].forward(x, &mut z1);
        let mut h = z1.clone();
        nn::relu_inplace(&mut h);
        let mut y = vec![0.0; self.dim];
        self.layers[1].forward(&h, &mut y);
        let mut u: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let u_norm = vector::norm64(&u);
        if u_norm > 0.0 {
            u.iter_mut().for_each(|v| *v /= u_norm);
        }
        Pass {
            x: x.to_vec(),
            z1,
            h,
            u_norm,
            out: u,
        }
    }

    /// Projects a unit vector. The zero-residual case returns `x` itself.
    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if !self.enabled || self.residual_is_zero() {
            return Ok(x.to_vec());
        }
        let p = self.pass(&vector::to_f64(x));
        if p.u_norm < 1e-12 {
            return Err(Error::DegenerateUpdate("adapter output".into()));
        }
        Ok(vector::to_f32(&p.out))
    }

    /// `f64` forward used by training and gradient checks.
    pub fn forward64(&self, x: &[f64]) -> Vec<f64> {
        self.pass(x).out
    }

    fn residual_is_zero(&self) -> bool {
        let l = &self.layers[1];
        l.w.iter().chain(&l.b).all(|&v| v == 0.0)
    }

    /// Accumulates parameter gradients given `dL/d(output)`.
    fn backward(&self, p: &Pass, grad_out: &[f64], grads: &mut [LinearGrad]) {
        // out = u / |u|  ⇒  dL/du = (g − out·(out·g)) / |u|
        let og = vector::dot64(&p.out, grad_out);
        let gu: Vec<f64> = grad_out
            .iter()
            .zip(&p.out)
            .map(|(g, o)| (g - o * og) / p.u_norm)
            .collect();
        let mut gh = vec![0.0; self.hidden];
        self.layers[1].backward(&p.h, &gu, &mut grads[1], Some(&mut gh));
        for (g, z) in gh.iter_mut().zip(&p.z1) {
            if *z <= 0.0 {
                *g = 0.0;
            }
        }
        self.layers[0].backward(&p.x, &gh, &mut grads[0], None);
    }

    fn round_to_f32(&mut self) {
        self.layers.iter_mut().for_each(Linear::round_to_f32);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = AdapterHeader {
            arch: vec![self.dim, self.hidden, self.dim],
            residual: true,
            seed: self.seed,
        };
        nn::write_model(path.as_ref(), &header, &self.layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header, layers) = nn::read_model(path.as_ref(), |h: &AdapterHeader| h.arch.clone())?;
        if header.arch.len() != 3 || header.arch[0] != header.arch[2] || !header.residual {
            return Err(Error::Format(format!(
                "adapter must be a residual [d, h, d] head, got {:?}",
                header.arch
            )));
        }
        Ok(AdapterModel {
            dim: header.arch[0],
            hidden: header.arch[1],
            layers,
            seed: header.seed,
            enabled: true,
        })
    }
}

pub fn adapter_forward(model: &AdapterModel, x: &[f32]) -> Result<Vec<f32>> {
    model.forward(x)
}

/// InfoNCE over cosine similarities at temperature `tau`.
///
/// With `include_positive` the softmax denominator runs over the positive
/// and all negatives (the loss is then ≥ 0 and equals `ln(1 + n)` when all
/// similarities tie); without it only the negatives are summed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoNce {
    pub tau: f64,
    pub include_positive: bool,
}

impl Default for InfoNce {
    fn default() -> Self {
        InfoNce {
            tau: 0.07,
            include_positive: true,
        }
    }
}

impl InfoNce {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("temperature must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Loss and `dL/ds` for the positive similarity and each negative one.
    pub fn from_similarities(&self, pos: f64, negs: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        self.validate()?;
        if negs.is_empty() && !self.include_positive {
            return Err(Error::Empty("negatives"));
        }
        let mut logits: Vec<f64> = negs.iter().map(|s| s / self.tau).collect();
        if self.include_positive {
            logits.push(pos / self.tau);
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let lse = m + z.ln();
        let loss = lse - pos / self.tau;
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
        let d_negs: Vec<f64> = w[..negs.len()].iter().map(|wi| wi / self.tau).collect();
        let w_pos = if self.include_positive { w[negs.len()] } else { 0.0 };
        Ok((loss, (w_pos - 1.0) / self.tau, d_negs))
    }
}

/// Loss of one `(query, positive, negatives)` example with every vector
/// passed through the adapter. `in_batch` negatives are treated like mined
/// ones.
pub fn infonce_loss(
    model: &AdapterModel,
    query: &[f32],
    positive: &[f32],
    negatives: &[&[f32]],
    in_batch: &[&[f32]],
    loss: &InfoNce,
) -> Result<f64> {
    let a = |v: &[f32]| model.forward64(&vector::to_f64(v));
    let q = a(query);
    let p = a(positive);
    let sims: Vec<f64> = negatives
        .iter()
        .chain(in_batch)
        .map(|n| vector::dot64(&q, &a(n)))
        .collect();
    Ok(loss.from_similarities(vector::dot64(&q, &p), &sims)?.0)
}

/// One training example resolved to vectors.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub query: &'a [f32],
    pub positive: &'a [f32],
    pub negatives: Vec<&'a [f32]>,
}

/// Mean loss over the examples and its gradient w.r.t. every adapter
/// parameter, flattened in parameter order. All arithmetic is `f64`.
pub fn infonce_loss_and_grad(
    model: &AdapterModel,
    examples: &[Example<'_>],
    loss: &InfoNce,
) -> Result<(f64, Vec<f64>)> {
    let (l, g) = batch_loss_grads(model, examples, loss)?;
    Ok((l, nn::flatten_grads(&g)))
}

fn batch_loss_grads(
    model: &AdapterModel,
    examples: &[Example<'_>],
    loss: &InfoNce,
) -> Result<(f64, Vec<LinearGrad>)> {
    // Each distinct input vector goes through the adapter once; gradients
    // w.r.t. its output are accumulated and backpropagated once.
    let mut slots: HashMap<*const f32, usize> = HashMap::new();
    let mut passes: Vec<Pass> = Vec::new();
    let mut slot = |v: &[f32], passes: &mut Vec<Pass>| -> usize {
        *slots.entry(v.as_ptr()).or_insert_with(|| {
            passes.push(model.pass(&vector::to_f64(v)));
            passes.len() - 1
        })
    };
    let mut items = Vec::with_capacity(examples.len());
    for ex in examples {
        let q = slot(ex.query, &mut passes);
        let p = slot(ex.positive, &mut passes);
        let n: Vec<usize> = ex.negatives.iter().map(|v| slot(v, &mut passes)).collect();
        items.push((q, p, n));
    }
    let scale = 1.0 / examples.len().max(1) as f64;
    let mut out_grads = vec![vec![0.0f64; model.dim]; passes.len()];
    let mut total = 0.0;
    for (q, p, negs) in &items {
        let qv = &passes[*q].out;
        let pos = vector::dot64(qv, &passes[*p].out);
        let sims: Vec<f64> = negs.iter().map(|&n| vector::dot64(qv, &passes[n].out)).collect();
        let (l, d_pos, d_negs) = loss.from_similarities(pos, &sims)?;
        total += l;
        let mut gq = vec![0.0; model.dim];
        for (g, x) in gq.iter_mut().zip(&passes[*p].out) {
            *g += d_pos * scale * x;
        }
        for (j, &n) in negs.iter().enumerate() {
            for (g, x) in gq.iter_mut().zip(&passes[n].out) {
                *g += d_negs[j] * scale * x;
            }
        }
        let qv = qv.clone();
        for (g, x) in out_grads[*p].iter_mut().zip(&qv) {
            *g += d_pos * scale * x;
        }
        for (j, &n) in negs.iter().enumerate() {
            for (g, x) in out_grads[n].iter_mut().zip(&qv) {
                *g += d_negs[j] * scale * x;
            }
        }
        for (g, x) in out_grads[*q].iter_mut().zip(&gq) {
            *g += x;
        }
    }
    let mut grads: Vec<LinearGrad> = model.layers.iter().map(LinearGrad::zeros_like).collect();
    for (pass, g) in passes.iter().zip(&out_grads) {
        if g.iter().any(|v| *v != 0.0) {
            model.backward(pass, g, &mut grads);
        }
    }
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub query_id: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

pub type TripletSet = Vec<Triplet>;

/// For each query, pairs every relevant tool with the irrelevant tools among
/// its top `pool_c` dense candidates. Queries with no relevant tool or no
/// irrelevant candidate are skipped.
pub fn mine_triplets(
    table: &EmbeddingTable,
    queries: &[LabeledQuery],
    pool_c: usize,
) -> Result<TripletSet> {
    let mut out = Vec::new();
    for q in queries {
        if q.relevant.is_empty() {
            continue;
        }
        let pool = dense_top_k(&q.vec, table, pool_c)?;
        let negatives: Vec<String> = pool
            .entries
            .iter()
            .filter(|c| !q.relevant.contains(&c.tool_id))
            .map(|c| c.tool_id.clone())
            .collect();
        if negatives.is_empty() {
            continue;
        }
        let mut positives: Vec<&String> = q
            .relevant
            .iter()
            .filter(|t| table.index_of(t).is_some())
            .collect();
        positives.sort();
        for pos in positives {
            out.push(Triplet {
                query_id: q.id.clone(),
                positive: pos.clone(),
                negatives: negatives.clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("mined triplets"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterTrainConfig {
    pub learning_rate: f64,
    pub loss: InfoNce,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// NDCG depth for early stopping.
    pub eval_k: usize,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        AdapterTrainConfig {
            learning_rate: 1e-5,
            loss: InfoNce::default(),
            epochs: 5,
            batch_size: 32,
            seed: 0,
            eval_k: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterTrainLog {
    pub epochs: Vec<AdapterEpoch>,
    pub best_epoch: usize,
}

/// Mean NDCG@k on `queries` with the adapter applied to queries and tools.
pub fn adapted_ndcg(
    model: &AdapterModel,
    base: &EmbeddingTable,
    queries: &[LabeledQuery],
    k: usize,
) -> Result<f64> {
    let table = recompute_tool_embeddings(model, base)?;
    let adapted = adapt_queries(model, queries)?;
    let mut sum = 0.0;
    let mut n = 0;
    for q in adapted.iter().filter(|q| !q.relevant.is_empty()) {
        let top = dense_top_k(&q.vec, &table, k)?;
        sum += ndcg_at_k(&top.ids(), &q.relevant, k)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("validation queries"));
    }
    Ok(sum / n as f64)
}

/// Mini-batch Adam on mean InfoNCE with mined plus in-batch negatives.
/// After every epoch the validation NDCG is measured; the weights of the
/// best epoch (first on ties) are returned.
pub fn adapter_train(
    model: &AdapterModel,
    triplets: &[Triplet],
    table: &EmbeddingTable,
    train_queries: &[LabeledQuery],
    val_queries: &[LabeledQuery],
    config: &AdapterTrainConfig,
) -> Result<(AdapterModel, AdapterTrainLog)> {
    config.loss.validate()?;
    if config.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if model.dim != table.dim() {
        return Err(Error::DimMismatch {
            expected: table.dim(),
            actual: model.dim,
        });
    }
    let mut log = AdapterTrainLog::default();
    if config.epochs == 0 {
        return Ok((model.clone(), log));
    }
    if triplets.is_empty() {
        return Err(Error::Empty("triplets"));
    }
    if val_queries.is_empty() {
        return Err(Error::Empty("validation queries"));
    }
    let by_id: HashMap<&str, &LabeledQuery> =
        train_queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let row = |id: &str| table.get(id).ok_or_else(|| Error::UnknownId(id.to_string()));
    let mut resolved = Vec::with_capacity(triplets.len());
    for t in triplets {
        let q = *by_id
            .get(t.query_id.as_str())
            .ok_or_else(|| Error::UnknownId(t.query_id.clone()))?;
        if q.vec.len() != model.dim {
            return Err(Error::DimMismatch {
                expected: model.dim,
                actual: q.vec.len(),
            });
        }
        let negs = t.negatives.iter().map(|n| row(n)).collect::<Result<Vec<_>>>()?;
        resolved.push((q, t.positive.as_str(), row(&t.positive)?, negs));
    }

    let mut model = model.clone();
    let mut opt = Adam::new(&model.layers, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    let mut best: Option<(f64, AdapterModel)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let examples: Vec<Example<'_>> = chunk
                .iter()
                .map(|&i| {
                    let (q, pos_id, pos, negs) = &resolved[i];
                    let mut negatives = negs.clone();
                    let mut seen: HashSet<&str> = HashSet::new();
                    for &j in chunk {
                        let (_, other_id, other, _) = &resolved[j];
                        if *other_id != *pos_id
                            && !q.relevant.contains(*other_id)
                            && seen.insert(other_id)
                            && !negs.iter().any(|n| n.as_ptr() == other.as_ptr())
                        {
                            negatives.push(other);
                        }
                    }
                    Example {
                        query: &q.vec,
                        positive: pos,
                        negatives,
                    }
                })
                .collect();
            let (loss, grads) = batch_loss_grads(&model, &examples, &config.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            epoch_loss += loss * examples.len() as f64;
            opt.step(&mut model.layers, &grads);
        }
        if !model.layers.iter().all(Linear::is_finite) {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: usize::MAX,
                loss: f64::NAN,
            });
        }
        let val_ndcg = adapted_ndcg(&model, table, val_queries, config.eval_k)?;
        log.epochs.push(AdapterEpoch {
            epoch,
            train_loss: epoch_loss / resolved.len() as f64,
            val_ndcg,
        });
        if best.as_ref().is_none_or(|(b, _)| val_ndcg > *b) {
            best = Some((val_ndcg, model.clone()));
            log.best_epoch = epoch;
        }
    }
    let mut out = best.map(|(_, m)| m).unwrap_or(model);
    out.round_to_f32();
    Ok((out, log))
}

/// Maps every row through the adapter. Same ids and generation; the result
/// still has to pass a gate before it can be published.
pub fn recompute_tool_embeddings(
    model: &AdapterModel,
    base: &EmbeddingTable,
) -> Result<EmbeddingTable> {
    if model.dim != base.dim() {
        return Err(Error::DimMismatch {
            expected: base.dim(),
            actual: model.dim,
        });
    }
    let mut data = Vec::with_capacity(base.data().len());
    for row in base.rows() {
        data.extend(model.forward(row)?);
    }
    Ok(EmbeddingTable::new(base.dim(), base.ids().to_vec(), data)?.with_generation(base.generation()))
}

pub fn adapt_queries(model: &AdapterModel, queries: &[LabeledQuery]) -> Result<Vec<LabeledQuery>> {
    queries
        .iter()
        .map(|q| {
            Ok(LabeledQuery {
                vec: model.forward(&q.vec)?,
                ..q.clone()
            })
        })
        .collect()
}
