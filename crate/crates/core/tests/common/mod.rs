//! Test-side oracles, written independently of the library code paths.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod checks;
pub mod scenarios;

use std::collections::{BTreeMap, HashSet};

/// One refinement instance in plain vectors.
pub struct Instance {
    pub ids: Vec<String>,
    pub tools: Vec<Vec<f32>>,
    pub queries: Vec<Vec<f32>>,
    pub relevant: Vec<HashSet<String>>,
}

pub fn to_instance(r: &oats::scenario::RandomInstance) -> Instance {
    Instance {
        ids: r.table.ids().to_vec(),
        tools: r.table.rows().map(|x| x.to_vec()).collect(),
        queries: r.queries.iter().map(|q| q.vec.clone()).collect(),
        relevant: r.queries.iter().map(|q| q.relevant.clone()).collect(),
    }
}

pub struct RefineParams {
    pub alpha: f64,
    pub beta: f64,
    pub iters: usize,
    pub mu: f64,
    pub k: usize,
}

fn dot32(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let mut ss = 0.0;
    for x in &v {
        ss += x * x;
    }
    let n = ss.sqrt();
    if !(n >= 1e-12) {
        return None;
    }
    Some(v.into_iter().map(|x| x / n).collect())
}

/// Top-k tool indices by descending f32 score, ascending id on ties.
pub fn brute_top_k(q: &[f32], ids: &[String], tools: &[Vec<f32>], k: usize) -> Vec<usize> {
    let mut order: Vec<(f32, usize)> = tools.iter().enumerate().map(|(i, t)| (dot32(q, t), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Straight-line transcription of the refinement loop: label the top-k,
/// split into successes and failures per tool, interpolate toward the
/// success centroid, push away from the failure centroid, renormalize,
/// then blend with the previous iterate from the second round on.
pub fn reference_refine(inst: &Instance, p: &RefineParams) -> Vec<Vec<f32>> {
    let dim = inst.tools[0].len();
    let mut e: Vec<Vec<f32>> = inst.tools.clone();
    for n in 1..=p.iters {
        let mut pos: Vec<Vec<usize>> = vec![Vec::new(); e.len()];
        let mut neg: Vec<Vec<usize>> = vec![Vec::new(); e.len()];
        for (qi, q) in inst.queries.iter().enumerate() {
            for t in brute_top_k(q, &inst.ids, &e, p.k) {
                if inst.relevant[qi].contains(&inst.ids[t]) {
                    pos[t].push(qi);
                } else {
                    neg[t].push(qi);
                }
            }
        }
        let mut next = e.clone();
        for t in 0..e.len() {
            if pos[t].is_empty() {
                continue;
            }
            let mut mp = vec![0.0f64; dim];
            for &qi in &pos[t] {
                for d in 0..dim {
                    mp[d] += inst.queries[qi][d] as f64;
                }
            }
            for d in 0..dim {
                mp[d] /= pos[t].len() as f64;
            }
            let mut hat = vec![0.0f64; dim];
            for d in 0..dim {
                hat[d] = (1.0 - p.alpha) * e[t][d] as f64 + p.alpha * mp[d];
            }
            if !neg[t].is_empty() {
                let mut mn = vec![0.0f64; dim];
                for &qi in &neg[t] {
                    for d in 0..dim {
                        mn[d] += inst.queries[qi][d] as f64;
                    }
                }
                for d in 0..dim {
                    hat[d] -= p.beta * (mn[d] / neg[t].len() as f64);
                }
            }
            let Some(hat) = unit(hat) else { continue };
            if n == 1 {
                next[t] = hat.iter().map(|&x| x as f32).collect();
            } else {
                let blend: Vec<f64> = (0..dim).map(|d| p.mu * e[t][d] as f64 + (1.0 - p.mu) * hat[d]).collect();
                if let Some(b) = unit(blend) {
                    next[t] = b.iter().map(|&x| x as f32).collect();
                }
            }
        }
        e = next;
    }
    e
}

/// Metrics from their definitions over a ranked list.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub rr: f64,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn dcg(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// The ideal DCG is found by trying every ordering of the candidates plus
/// the relevant items that were not retrieved at all.
pub fn oracle_metrics(ranked: &[String], relevant: &HashSet<String>, k: usize) -> OracleMetrics {
    let hits = ranked.iter().take(k).filter(|r| relevant.contains(*r)).count() as f64;
    let gains: Vec<f64> = ranked.iter().map(|r| relevant.contains(r) as u8 as f64).collect();
    let mut pool = gains.clone();
    let missing = relevant.iter().filter(|r| !ranked.contains(r)).count();
    pool.extend(std::iter::repeat_n(1.0, missing));
    let mut ideal: f64 = 0.0;
    if pool.len() <= 8 {
        for perm in permutations(pool.len()) {
            let g: Vec<f64> = perm.iter().map(|&i| pool[i]).collect();
            ideal = ideal.max(dcg(&g, k));
        }
    } else {
        let mut g = pool.clone();
        g.sort_by(|a, b| b.total_cmp(a));
        ideal = dcg(&g, k);
    }
    let rr = ranked
        .iter()
        .position(|r| relevant.contains(r))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64);
    OracleMetrics {
        recall: if relevant.is_empty() { 0.0 } else { hits / relevant.len() as f64 },
        precision: hits / k as f64,
        ndcg: if ideal == 0.0 { 0.0 } else { dcg(&gains, k) / ideal },
        rr,
    }
}

/// Largest relative deviation between an analytic gradient and central
/// differences, `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_error(f: &mut dyn FnMut(&[f64]) -> f64, params: &[f64], analytic: &[f64], h: f64, floor: f64) -> (f64, usize) {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut worst = (0.0f64, 0usize);
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(floor);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}

/// Cosine in f64.
pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Simple pass/fail ledger that prints one line per criterion.
#[derive(Default)]
pub struct Ledger {
    pub rows: BTreeMap<usize, (String, bool, String)>,
}

impl Ledger {
    pub fn record(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        let idx = self.rows.len();
        let detail = detail.into();
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.rows.insert(idx, (name.to_string(), pass, detail));
    }

    pub fn failures(&self) -> Vec<&str> {
        self.rows.values().filter(|r| !r.1).map(|r| r.0.as_str()).collect()
    }
}
