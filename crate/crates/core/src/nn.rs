//! Minimal dense layers with hand-written backward passes, an Adam
//! optimizer and the shared `JSON header + f32 payload` model file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// `y = W x + b` with `W` stored row-major as `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros_like(l: &Linear) -> Self {
        LinearGrad {
            w: vec![0.0; l.w.len()],
            b: vec![0.0; l.b.len()],
        }
    }
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    /// He-normal weights, zero bias.
    pub fn he<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("valid std");
        Linear {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; outputs],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, (row, b)) in out.iter_mut().zip(self.w.chunks_exact(self.inputs).zip(&self.b)) {
            *o = b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Accumulates `dL/dW`, `dL/db` into `grad` and, if asked, writes `dL/dx`.
    pub fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        grad: &mut LinearGrad,
        grad_in: Option<&mut [f64]>,
    ) {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &mut grad.w[o * self.inputs..(o + 1) * self.inputs];
            for (r, &xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
        if let Some(gi) = grad_in {
            gi.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
                for (v, &w) in gi.iter_mut().zip(row) {
                    *v += g * w;
                }
            }
        }
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        self.w
            .iter_mut()
            .chain(self.b.iter_mut())
            .for_each(|v| *v = *v as f32 as f64);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| v.is_finite())
    }
}

pub(crate) fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn flatten(layers: &[Linear]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.w.iter().chain(&l.b).copied())
        .collect()
}

pub(crate) fn flatten_grads(grads: &[LinearGrad]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.w.iter().chain(&g.b).copied())
        .collect()
}

pub(crate) fn unflatten(layers: &mut [Linear], flat: &[f64]) {
    let mut it = flat.iter();
    for l in layers {
        for v in l.w.iter_mut().chain(l.b.iter_mut()) {
            *v = *it.next().expect("parameter vector too short");
        }
    }
}

/// Adam over a list of layers.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<LinearGrad>,
    v: Vec<LinearGrad>,
}

impl Adam {
    pub fn new(layers: &[Linear], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: layers.iter().map(LinearGrad::zeros_like).collect(),
            v: layers.iter().map(LinearGrad::zeros_like).collect(),
        }
    }

    pub fn step(&mut self, layers: &mut [Linear], grads: &[LinearGrad]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((l, g), m), v) in layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let params = l.w.iter_mut().chain(l.b.iter_mut());
            let gs = g.w.iter().chain(&g.b);
            let ms = m.w.iter_mut().chain(m.b.iter_mut());
            let vs = v.w.iter_mut().chain(v.b.iter_mut());
            for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Writes `header` as one JSON line followed by every layer's weights then
/// bias as little-endian `f32`, layer by layer.
pub(crate) fn write_model<H: Serialize>(path: &Path, header: &H, layers: &[Linear]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = serde_json::to_vec(header)?;
    line.push(b'\n');
    let mut payload = Vec::with_capacity(layers.iter().map(Linear::param_count).sum::<usize>() * 4);
    for l in layers {
        for v in l.w.iter().chain(&l.b) {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&line).map_err(|e| Error::io(path, e))?;
    w.write_all(&payload).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a model file and fills layers of the given `arch` (layer widths).
pub(crate) fn read_model<H: DeserializeOwned>(
    path: &Path,
    arch_of: impl FnOnce(&H) -> Vec<usize>,
) -> Result<(H, Vec<Linear>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("model file has no header line".into()));
    }
    let header: H = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| Error::Format(format!("bad model header: {e}")))?;
    let arch = arch_of(&header);
    if arch.len() < 2 || arch.contains(&0) {
        return Err(Error::Format(format!("invalid arch {arch:?}")));
    }
    let mut layers: Vec<Linear> = arch.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
    let expected: usize = layers.iter().map(Linear::param_count).sum();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "arch {arch:?} needs {expected} parameters, payload has {} bytes",
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite weight".into()));
    }
    unflatten(&mut layers, &flat);
    Ok((header, layers))
}
