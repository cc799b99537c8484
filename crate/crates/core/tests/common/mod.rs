#![allow(dead_code)]

pub mod oracles;

use nes::metrics::{LabelVector, PredictionMatrix};
use nes::selection::{Candidate, LearnerId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random row-stochastic matrix; `sharpness` scales the softmax logits.
pub fn random_matrix(rng: &mut impl Rng, n: usize, c: usize, sharpness: f64) -> PredictionMatrix {
    let logits: Vec<f64> = (0..n * c).map(|_| sharpness * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    PredictionMatrix::from_logits(n, c, &logits).unwrap()
}

pub fn random_labels(rng: &mut impl Rng, n: usize, c: usize) -> LabelVector {
    LabelVector::new((0..n).map(|_| rng.random_range(0..c)).collect())
}

/// A pool of `k` matrices of shape `n x c` with labels.
pub fn random_pool(rng: &mut impl Rng, k: usize, n: usize, c: usize) -> (Vec<PredictionMatrix>, LabelVector) {
    let pool = (0..k).map(|_| random_matrix(rng, n, c, 3.0)).collect();
    (pool, random_labels(rng, n, c))
}

pub fn candidates(pool: &[PredictionMatrix]) -> Vec<Candidate<'_>> {
    pool.iter().enumerate().map(|(i, m)| (LearnerId(i), m)).collect()
}

/// NLL of the uniform average of `members`, written as a plain loop.
pub fn loop_ensemble_nll(members: &[&PredictionMatrix], labels: &LabelVector) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, y) in labels.iter().enumerate() {
        let mut p = 0.0;
        for m in members {
            p += m.row(i)[y];
        }
        p /= members.len() as f64;
        total -= p.max(1e-12).ln();
    }
    total / n as f64
}

/// Tabular evaluator over a lazily generated synthetic benchmark.
pub fn synthetic_evaluator(spec: nes::synthetic::SyntheticSpec) -> nes::search::TabularEvaluator {
    let bench = nes::synthetic::SyntheticBenchmark::new(spec).unwrap();
    nes::search::TabularEvaluator::new(std::sync::Arc::new(bench)).unwrap()
}
