//! Outcome-guided embedding refinement.
//!
//! Each iteration retrieves the top `K` tools for every training query under
//! the current table, labels each retrieval as a success or a failure, and
//! moves every tool with at least one success toward the centroid of its
//! successful queries and away from the centroid of the queries it was
//! wrongly retrieved for:
//!
//! ```text
//! ê = (1 − α)·e + α·mean(Q⁺) − β·mean(Q⁻),   then ê ← ê / ‖ê‖
//! ```
//!
//! From the second iteration on, the published vector is blended with the
//! previous one, `normalize(μ·e_prev + (1 − μ)·ê)`. The final table only
//! replaces the served one if it strictly improves held-out Recall@K
//! ([`validation_gate`]).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embed::LabeledQuery;
use crate::error::{Error, Result};
use crate::eval::metrics::recall_at_k;
use crate::retrieval::dense_top_k;
use crate::store::{EmbeddingTable, OutcomeTriple};
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Attraction toward the positive centroid, in [0, 1].
    pub alpha: f64,
    /// Repulsion from the negative centroid, ≥ 0.
    pub beta: f64,
    pub iterations: usize,
    /// Momentum toward the previous iterate, in [0, 1].
    pub momentum: f64,
    /// Retrieval depth used to label outcomes each iteration.
    pub label_k: usize,
    /// Recall depth of the validation gate.
    pub gate_k: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            alpha: 0.3,
            beta: 0.1,
            iterations: 3,
            momentum: 0.5,
            label_k: 5,
            gate_k: 5,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be positive"));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must be in [0,1], got {}",
                self.momentum
            )));
        }
        if self.label_k == 0 || self.gate_k == 0 {
            return Err(Error::ZeroK);
        }
        if self.beta >= self.alpha && self.beta > 0.0 {
            log::warn!(
                "beta ({}) >= alpha ({}): repulsion dominates attraction",
                self.beta,
                self.alpha
            );
        }
        Ok(())
    }
}

/// Aggregated outcome log: one label per `(query, tool)` pair by majority
/// vote, pairs with tied votes dropped.
#[derive(Debug, Clone, Default)]
pub struct OutcomeLabels {
    labels: HashMap<(String, String), bool>,
    /// Treat retrieved pairs missing from the log as failures instead of
    /// leaving them unlabeled.
    pub unlogged_as_negative: bool,
}

impl OutcomeLabels {
    pub fn from_triples(triples: &[OutcomeTriple]) -> Self {
        let mut votes: HashMap<(String, String), i64> = HashMap::new();
        for t in triples {
            let v = if t.outcome.is_success() { 1 } else { -1 };
            *votes
                .entry((t.query_id.clone(), t.tool_id.clone()))
                .or_default() += v;
        }
        OutcomeLabels {
            labels: votes
                .into_iter()
                .filter(|(_, v)| *v != 0)
                .map(|(k, v)| (k, v > 0))
                .collect(),
            unlogged_as_negative: false,
        }
    }

    pub fn get(&self, query_id: &str, tool_id: &str) -> Option<bool> {
        self.labels
            .get(&(query_id.to_string(), tool_id.to_string()))
            .copied()
            .or(if self.unlogged_as_negative {
                Some(false)
            } else {
                None
            })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Where retrieval outcomes come from.
#[derive(Debug, Clone, Default)]
pub enum LabelSource {
    /// Success iff the tool is in the query's ground truth.
    #[default]
    GroundTruth,
    /// Replay of logged outcome triples.
    OutcomeLog(OutcomeLabels),
}

impl LabelSource {
    fn label(&self, q: &LabeledQuery, tool_id: &str) -> Option<bool> {
        match self {
            LabelSource::GroundTruth => Some(q.relevant.contains(tool_id)),
            LabelSource::OutcomeLog(log) => log.get(&q.id, tool_id),
        }
    }
}

/// Query indices (into the training slice) per tool.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToolOutcomes {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Per-tool success and failure query sets for one iteration. Tools never
/// retrieved (or never labeled) are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutcomePartition {
    pub tools: BTreeMap<String, ToolOutcomes>,
}

impl OutcomePartition {
    pub fn get(&self, tool_id: &str) -> Option<&ToolOutcomes> {
        self.tools.get(tool_id)
    }

    /// Query ids of `(Q⁺, Q⁻)` for a tool.
    pub fn query_ids<'a>(
        &self,
        tool_id: &str,
        queries: &'a [LabeledQuery],
    ) -> Option<(Vec<&'a str>, Vec<&'a str>)> {
        self.get(tool_id).map(|o| {
            (
                o.positives.iter().map(|&i| queries[i].id.as_str()).collect(),
                o.negatives.iter().map(|&i| queries[i].id.as_str()).collect(),
            )
        })
    }
}

/// Retrieves the top `k` tools for every query under `table` and sorts each
/// retrieval into the tool's positive or negative set.
pub fn partition_outcomes(
    table: &EmbeddingTable,
    queries: &[LabeledQuery],
    k: usize,
    labels: &LabelSource,
) -> Result<OutcomePartition> {
    if queries.is_empty() {
        return Err(Error::Empty("training queries"));
    }
    let mut part = OutcomePartition::default();
    for (qi, q) in queries.iter().enumerate() {
        let top = dense_top_k(&q.vec, table, k)?;
        for c in &top.entries {
            let Some(ok) = labels.label(q, &c.tool_id) else {
                continue;
            };
            let entry = part.tools.entry(c.tool_id.clone()).or_default();
            if ok {
                entry.positives.push(qi);
            } else {
                entry.negatives.push(qi);
            }
        }
    }
    Ok(part)
}

fn refine_step64(
    e: &[f32],
    positives: &[&[f32]],
    negatives: &[&[f32]],
    alpha: f64,
    beta: f64,
) -> Option<Vec<f64>> {
    let dim = e.len();
    let pos = vector::mean64(positives.iter().copied(), dim)?;
    let mut out: Vec<f64> = e
        .iter()
        .zip(&pos)
        .map(|(&x, &p)| (1.0 - alpha) * x as f64 + alpha * p)
        .collect();
    if let Some(neg) = vector::mean64(negatives.iter().copied(), dim) {
        for (o, n) in out.iter_mut().zip(&neg) {
            *o -= beta * n;
        }
    }
    // With α = 0 and no active repulsion the update is exactly `e`, which is
    // already unit; keep it bit-for-bit.
    if alpha == 0.0 && (beta == 0.0 || negatives.is_empty()) {
        return Some(out);
    }
    vector::normalize64(&mut out).map(|_| out)
}

/// One centroid-interpolation update of a unit vector `e`.
///
/// Requires at least one positive. A zero-norm result is reported as
/// [`Error::DegenerateUpdate`]; callers keep the previous vector.
pub fn refine_step(
    e: &[f32],
    positives: &[&[f32]],
    negatives: &[&[f32]],
    alpha: f64,
    beta: f64,
) -> Result<Vec<f32>> {
    if positives.is_empty() {
        return Err(Error::Empty("positive queries"));
    }
    for v in positives.iter().chain(negatives) {
        if v.len() != e.len() {
            return Err(Error::DimMismatch {
                expected: e.len(),
                actual: v.len(),
            });
        }
    }
    refine_step64(e, positives, negatives, alpha, beta)
        .map(|v| vector::to_f32(&v))
        .ok_or_else(|| Error::DegenerateUpdate(String::new()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Tools with at least one positive that received an update.
    pub refined: usize,
    /// Tools retrieved only as failures, left unchanged.
    pub negatives_only: usize,
    /// Tools whose update collapsed to zero and kept their previous vector.
    pub degenerate: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RefineRun {
    pub table: EmbeddingTable,
    pub log: Vec<IterationLog>,
}

/// Runs `config.iterations` rounds of partition + update + momentum blend.
/// The returned table keeps the input's generation and is not approved.
pub fn refine_iterate(
    table: &EmbeddingTable,
    queries: &[LabeledQuery],
    config: &RefineConfig,
    labels: &LabelSource,
) -> Result<RefineRun> {
    config.validate()?;
    let dim = table.dim();
    for q in queries {
        if q.vec.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: q.vec.len(),
            });
        }
    }
    let mut current = table.clone();
    current.clear_approval();
    let mut log = Vec::with_capacity(config.iterations);
    for n in 1..=config.iterations {
        let part = partition_outcomes(&current, queries, config.label_k, labels)?;
        let mut data = current.data().to_vec();
        let mut entry = IterationLog {
            iteration: n,
            ..Default::default()
        };
        for (i, id) in current.ids().iter().enumerate() {
            let Some(outcomes) = part.get(id) else {
                continue;
            };
            if outcomes.positives.is_empty() {
                entry.negatives_only += 1;
                continue;
            }
            let prev = current.row(i);
            let pos: Vec<&[f32]> = outcomes
                .positives
                .iter()
                .map(|&q| queries[q].vec.as_slice())
                .collect();
            let neg: Vec<&[f32]> = outcomes
                .negatives
                .iter()
                .map(|&q| queries[q].vec.as_slice())
                .collect();
            let Some(hat) = refine_step64(prev, &pos, &neg, config.alpha, config.beta) else {
                log::warn!("degenerate refinement update for tool `{id}`; keeping previous vector");
                entry.degenerate.push(id.clone());
                continue;
            };
            let identity = config.alpha == 0.0 && (config.beta == 0.0 || neg.is_empty());
            let next = if n == 1 {
                Some(vector::to_f32(&hat))
            } else if config.momentum == 1.0 || identity {
                // Blending a vector with itself only adds rounding noise.
                None
            } else {
                let mu = config.momentum;
                let mut blend: Vec<f64> = prev
                    .iter()
                    .zip(&hat)
                    .map(|(&p, &h)| mu * p as f64 + (1.0 - mu) * h)
                    .collect();
                match vector::normalize64(&mut blend) {
                    Some(_) => Some(vector::to_f32(&blend)),
                    None => {
                        log::warn!("degenerate momentum blend for tool `{id}`");
                        entry.degenerate.push(id.clone());
                        None
                    }
                }
            };
            if let Some(v) = next {
                data[i * dim..(i + 1) * dim].copy_from_slice(&v);
            }
            entry.refined += 1;
        }
        current = EmbeddingTable::new(dim, current.ids().to_vec(), data)?
            .with_generation(table.generation());
        log.push(entry);
    }
    Ok(RefineRun {
        table: current,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub decision: GateDecision,
    pub gate_k: usize,
    pub baseline_recall: f64,
    pub candidate_recall: f64,
    pub validation_queries: usize,
}

/// Mean Recall@k of `table` over the queries with a non-empty relevant set.
pub fn mean_recall(table: &EmbeddingTable, queries: &[LabeledQuery], k: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for q in queries.iter().filter(|q| !q.relevant.is_empty()) {
        let top = dense_top_k(&q.vec, table, k)?;
        sum += recall_at_k(&top.ids(), &q.relevant, k)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("validation queries"));
    }
    Ok(sum / n as f64)
}

/// Accepts the candidate iff its validation Recall@`gate_k` is strictly
/// higher than the baseline's. An accepted candidate is marked approved and
/// can then be published.
pub fn validation_gate(
    baseline: &EmbeddingTable,
    candidate: &mut EmbeddingTable,
    val: &[LabeledQuery],
    gate_k: usize,
) -> Result<GateReport> {
    validation_gate_with(baseline, val, candidate, val, gate_k)
}

/// Gate variant where the candidate is queried with different query vectors
/// (for example adapter-projected ones). Both slices describe the same
/// validation queries.
pub fn validation_gate_with(
    baseline: &EmbeddingTable,
    baseline_val: &[LabeledQuery],
    candidate: &mut EmbeddingTable,
    candidate_val: &[LabeledQuery],
    gate_k: usize,
) -> Result<GateReport> {
    if gate_k == 0 {
        return Err(Error::ZeroK);
    }
    if baseline_val.is_empty() || candidate_val.is_empty() {
        return Err(Error::Empty("validation queries"));
    }
    if baseline.dim() != candidate.dim() {
        return Err(Error::DimMismatch {
            expected: baseline.dim(),
            actual: candidate.dim(),
        });
    }
    let baseline_recall = mean_recall(baseline, baseline_val, gate_k)?;
    let candidate_recall = mean_recall(candidate, candidate_val, gate_k)?;
    let decision = if candidate_recall > baseline_recall {
        candidate.mark_approved();
        GateDecision::Accept
    } else {
        GateDecision::Reject
    };
    Ok(GateReport {
        decision,
        gate_k,
        baseline_recall,
        candidate_recall,
        validation_queries: baseline_val.iter().filter(|q| !q.relevant.is_empty()).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(ids: &[&str], rows: &[Vec<f32>]) -> EmbeddingTable {
        EmbeddingTable::from_unnormalized(
            rows[0].len(),
            ids.iter().map(|s| s.to_string()).collect(),
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn step_two_dimensional_hand_value() {
        let out = refine_step(&[1.0, 0.0], &[&[0.0, 1.0]], &[], 0.3, 0.1).unwrap();
        let n = 0.58f64.sqrt();
        assert!((out[0] as f64 - 0.7 / n).abs() < 1e-6);
        assert!((out[1] as f64 - 0.3 / n).abs() < 1e-6);
        assert!((out[0] - 0.9192).abs() < 1e-4 && (out[1] - 0.3939).abs() < 1e-4);
    }

    #[test]
    fn step_identity_is_exact() {
        let e = vector::normalized_f32(&[0.3, -0.2, 0.9, 0.1]).unwrap();
        let out = refine_step(&e, &[&[0.0, 1.0, 0.0, 0.0]], &[&[1.0, 0.0, 0.0, 0.0]], 0.0, 0.0)
            .unwrap();
        assert_eq!(
            out.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            e.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn step_requires_positive_and_flags_degenerate() {
        assert!(matches!(
            refine_step(&[1.0, 0.0], &[], &[], 0.3, 0.1),
            Err(Error::Empty(_))
        ));
        // (1-1)·e + 1·p − 1·n with p = n collapses to zero.
        let r = refine_step(&[1.0, 0.0], &[&[0.0, 1.0]], &[&[0.0, 1.0]], 1.0, 1.0);
        assert!(matches!(r, Err(Error::DegenerateUpdate(_))));
    }

    #[test]
    fn orthogonal_partition_matches_enumeration() {
        // Tools a, b, c on the axes; query i points at tool i with a small
        // lean toward the next axis, so top-2 is {i, i+1}.
        let t = table(
            &["a", "b", "c"],
            &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        );
        let q = |id: &str, v: [f64; 3], rel: &[&str]| {
            LabeledQuery::new(id, vector::normalized_f32(&v).unwrap(), rel)
        };
        let queries = vec![
            q("q0", [1.0, 0.5, 0.0], &["a"]),
            q("q1", [0.0, 1.0, 0.5], &["c"]),
            q("q2", [0.5, 0.0, 1.0], &["c"]),
        ];
        let part = partition_outcomes(&t, &queries, 2, &LabelSource::GroundTruth).unwrap();
        // q0 retrieves a(+), b(−); q1 retrieves b(−), c(+); q2 retrieves c(+), a(−).
        assert_eq!(
            part.get("a").unwrap(),
            &ToolOutcomes {
                positives: vec![0],
                negatives: vec![2]
            }
        );
        assert_eq!(
            part.get("b").unwrap(),
            &ToolOutcomes {
                positives: vec![],
                negatives: vec![0, 1]
            }
        );
        assert_eq!(
            part.get("c").unwrap(),
            &ToolOutcomes {
                positives: vec![1, 2],
                negatives: vec![]
            }
        );
        // With K = 1 each query only sees its leading axis.
        let part1 = partition_outcomes(&t, &queries, 1, &LabelSource::GroundTruth).unwrap();
        assert_eq!(part1.get("b").unwrap().negatives, vec![1]);
        assert!(part1.get("b").unwrap().positives.is_empty());
        assert_eq!(part1.get("c").unwrap().positives, vec![2]);
        assert!(part1.get("a").unwrap().negatives.is_empty());
        assert!(partition_outcomes(&t, &[], 1, &LabelSource::GroundTruth).is_err());
    }

    #[test]
    fn log_replay_majority_and_ties() {
        let labels = OutcomeLabels::from_triples(&[
            OutcomeTriple::new("q", "a", true),
            OutcomeTriple::new("q", "a", true),
            OutcomeTriple::new("q", "a", false),
            OutcomeTriple::new("q", "b", true),
            OutcomeTriple::new("q", "b", false),
        ]);
        assert_eq!(labels.get("q", "a"), Some(true));
        assert_eq!(labels.get("q", "b"), None);
        assert_eq!(labels.get("q", "c"), None);
        let strict = OutcomeLabels {
            unlogged_as_negative: true,
            ..labels
        };
        assert_eq!(strict.get("q", "c"), Some(false));
    }

    #[test]
    fn gate_rejects_identical_candidate() {
        let t = table(&["a", "b"], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let val = vec![LabeledQuery::new("v", vec![1.0, 0.0], &["a"])];
        let mut cand = t.clone();
        let rep = validation_gate(&t, &mut cand, &val, 1).unwrap();
        assert_eq!(rep.decision, GateDecision::Reject);
        assert!(!cand.is_approved());
        assert!(validation_gate(&t, &mut cand, &[], 1).is_err());
    }

    #[test]
    fn untouched_tools_keep_their_rows() {
        let t = table(
            &["a", "b", "far"],
            &[vec![1.0, 0.1, 0.0], vec![0.1, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        );
        let queries = vec![
            LabeledQuery::new("q0", vector::normalized_f32(&[1.0, 0.3, 0.0]).unwrap(), &["b"]),
            LabeledQuery::new("q1", vector::normalized_f32(&[0.2, 1.0, 0.0]).unwrap(), &["b"]),
        ];
        let cfg = RefineConfig {
            label_k: 2,
            ..Default::default()
        };
        let run = refine_iterate(&t, &queries, &cfg, &LabelSource::GroundTruth).unwrap();
        assert_eq!(run.table.get("far"), t.get("far"));
        // `a` only ever fails, so it is never moved.
        assert_eq!(run.table.get("a"), t.get("a"));
        assert_ne!(run.table.get("b"), t.get("b"));
        for row in run.table.rows() {
            assert!((vector::norm(row) - 1.0).abs() < 1e-4);
        }
    }
}
