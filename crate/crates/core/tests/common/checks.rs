//! Finite-difference gradient checks shared by the test targets.

use super::gradient_error;
use oats::adapter::{infonce_loss_and_grad, AdapterModel, Example, InfoNce};
use oats::rerank::{FeatureVector, RerankModel};
use oats::vector::normalized_f32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TOL: f64 = 1e-3;
// MLP: a small step keeps perturbations from crossing ReLU kinks.
const MLP_STEP: f64 = 1e-6;
// InfoNCE logits are scaled by 1/τ ≈ 14, which amplifies round-off in the
// differences; a larger step keeps it near 1e-10.
const ADAPTER_STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

fn randomize(params: &mut [f64], rng: &mut ChaCha8Rng, scale: f64) {
    for p in params {
        *p = scale * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Returns the worst relative error over `draws` random MLP/BCE draws.
pub fn mlp_check(draws: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = RerankModel::new(seed);
        let mut params = model.params();
        randomize(&mut params, &mut rng, 0.3);
        model.set_params(&params);
        let batch: Vec<(FeatureVector, bool)> = (0..4)
            .map(|_| {
                let mut f = [0.0; 7];
                f.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                (FeatureVector(f), rng.gen_bool(0.5))
            })
            .collect();
        let (_, analytic) = model.bce_loss_and_grad(&batch, None);
        let mut probe = model.clone();
        let (err, _) = gradient_error(
            &mut |p| {
                probe.set_params(p);
                probe.bce_loss_and_grad(&batch, None).0
            },
            &params,
            &analytic,
            MLP_STEP,
            FLOOR,
        );
        worst = worst.max(err);
    }
    worst
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalized_f32(&v).unwrap()
}

pub fn adapter_check(draws: u64, dim: usize, hidden: usize, include_positive: bool) -> f64 {
    let loss = InfoNce {
        tau: 0.07,
        include_positive,
    };
    let mut worst: f64 = 0.0;
    for seed in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut model = AdapterModel::with_hidden(dim, hidden, seed);
        let mut params = model.params();
        randomize(&mut params, &mut rng, 0.2);
        model.set_params(&params);
        let vecs: Vec<Vec<f32>> = (0..9).map(|_| unit(&mut rng, dim)).collect();
        let examples = vec![
            Example {
                query: &vecs[0],
                positive: &vecs[1],
                negatives: vec![&vecs[2], &vecs[3]],
            },
            Example {
                query: &vecs[4],
                positive: &vecs[5],
                negatives: vec![&vecs[6]],
            },
            Example {
                query: &vecs[7],
                positive: &vecs[8],
                negatives: vec![&vecs[2]],
            },
        ];
        let (_, analytic) = infonce_loss_and_grad(&model, &examples, &loss).unwrap();
        let mut probe = model.clone();
        let (err, _) = gradient_error(
            &mut |p| {
                probe.set_params(p);
                infonce_loss_and_grad(&probe, &examples, &loss).unwrap().0
            },
            &params,
            &analytic,
            ADAPTER_STEP,
            FLOOR,
        );
        worst = worst.max(err);
    }
    worst
}
