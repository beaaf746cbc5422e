mod common;

use common::{reference_refine, to_instance, RefineParams};
use oats::refine::{refine_iterate, LabelSource, RefineConfig};
use oats::scenario::random_instance;

fn config(alpha: f64, beta: f64, iters: usize, mu: f64, k: usize) -> (RefineConfig, RefineParams) {
    (
        RefineConfig {
            alpha,
            beta,
            iterations: iters,
            momentum: mu,
            label_k: k,
            gate_k: k,
        },
        RefineParams {
            alpha,
            beta,
            iters,
            mu,
            k,
        },
    )
}

#[test]
fn matches_reference_bit_for_bit_on_small_instance() {
    let r = random_instance(2024, 10, 50, 8, 1).unwrap();
    let (cfg, p) = config(0.3, 0.1, 3, 0.5, 3);
    let ours = refine_iterate(&r.table, &r.queries, &cfg, &LabelSource::GroundTruth).unwrap();
    let theirs = reference_refine(&to_instance(&r), &p);
    for (i, row) in ours.table.rows().enumerate() {
        let a: Vec<u32> = row.iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = theirs[i].iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b, "row {i}");
    }
}

#[test]
fn matches_reference_on_fifty_random_instances() {
    for seed in 0..50u64 {
        let tools = 4 + (seed as usize % 13);
        let queries = 8 + (seed as usize * 7) % 57;
        let r = random_instance(seed, tools, queries, 8, 1 + seed as usize % 2).unwrap();
        let alpha = [0.1, 0.3, 0.6][seed as usize % 3];
        let (cfg, p) = config(alpha, alpha / 3.0, 1 + seed as usize % 4, 0.5, 1 + seed as usize % 5);
        let ours = refine_iterate(&r.table, &r.queries, &cfg, &LabelSource::GroundTruth).unwrap();
        let theirs = reference_refine(&to_instance(&r), &p);
        for (i, row) in ours.table.rows().enumerate() {
            for (a, b) in row.iter().zip(&theirs[i]) {
                assert!((a - b).abs() <= 1e-6, "seed {seed} row {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn refined_rows_stay_unit_and_ids_stable() {
    let r = random_instance(5, 12, 40, 8, 2).unwrap();
    let run = refine_iterate(&r.table, &r.queries, &RefineConfig::default(), &LabelSource::GroundTruth).unwrap();
    assert_eq!(run.table.ids(), r.table.ids());
    assert_eq!(run.table.generation(), r.table.generation());
    assert!(!run.table.is_approved());
    for row in run.table.rows() {
        assert!((oats::vector::norm(row) - 1.0).abs() < 1e-5);
    }
    assert_eq!(run.log.len(), 3);
}
