// Every ensemble selection algorithm applied to one random pool.
//
//     cargo run --example ensemble_selection

use nes::metrics::{ensemble_average, nll, AveragingMode, LabelVector, PredictionMatrix};
use nes::search::Esa;
use nes::selection::{exhaustive_select, Candidate, LearnerId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (k, n, c) = (12, 200, 5);
    let labels = LabelVector::new((0..n).map(|_| rng.random_range(0..c)).collect());
    // members know the label with varying reliability
    let pool: Vec<PredictionMatrix> = (0..k)
        .map(|_| {
            let skill = rng.random_range(0.5..2.5);
            let logits: Vec<f64> = (0..n * c)
                .map(|j| {
                    let boost = if j % c == labels.as_slice()[j / c] { skill } else { 0.0 };
                    boost + 1.5 * (rng.random::<f64>() * 2.0 - 1.0)
                })
                .collect();
            PredictionMatrix::from_logits(n, c, &logits).unwrap()
        })
        .collect();
    let cands: Vec<Candidate<'_>> = pool.iter().enumerate().map(|(i, m)| (LearnerId(i), m)).collect();

    let m = 4;
    let variants = [
        ("forward", Esa::Forward),
        ("forward+replacement", Esa::ForwardWithReplacement),
        ("top-m", Esa::TopM),
        ("quick-and-greedy", Esa::QuickAndGreedy),
        ("stacking", Esa::Stacking { weighted: true }),
        ("bma-likelihood", Esa::BmaLikelihood),
        ("bma-accuracy", Esa::BmaAccuracy),
        ("diverse(0.5)", Esa::Diverse { lambda: 0.5 }),
    ];
    for (name, esa) in variants {
        let sel = esa.select(&cands, &labels, m).unwrap();
        let members = sel.resolve(&cands).unwrap();
        let avg = ensemble_average(&members, sel.weights(), AveragingMode::Probability).unwrap();
        let ids: Vec<usize> = sel.member_ids().iter().map(|i| i.0).collect();
        println!("{name:<20} members {ids:?} nll {:.4}", nll(&avg, &labels).unwrap());
    }
    let best = exhaustive_select(&cands, &labels, m).unwrap();
    let members = best.resolve(&cands).unwrap();
    let avg = ensemble_average(&members, None, AveragingMode::Probability).unwrap();
    let ids: Vec<usize> = best.member_ids().iter().map(|i| i.0).collect();
    println!("{:<20} members {ids:?} nll {:.4}", "exhaustive", nll(&avg, &labels).unwrap());
}
