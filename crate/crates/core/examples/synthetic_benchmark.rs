// The planted synthetic benchmark: families of architectures whose
// predictions cluster, so ensembles across families are more diverse.
//
//     cargo run --example synthetic_benchmark

use nes::data::Split;
use nes::metrics::{nll, oracle_nll, predictive_disagreement, PredictionMatrix};
use nes::space::Genome;
use nes::synthetic::{SyntheticBenchmark, SyntheticSpec};
use nes::tabular::PredictionSource;

fn main() {
    let spec = SyntheticSpec::default();
    let bench = SyntheticBenchmark::new(spec.clone()).unwrap();
    let y = bench.labels(Split::Val, 0).unwrap();
    println!(
        "space {} with {} architectures x {} seeds",
        spec.space_id(),
        spec.num_families * spec.archs_per_family,
        spec.seeds_per_arch
    );

    let get = |f: usize, v: usize| bench.generate(&Genome::Fixed(vec![f, v]), 0, Split::Val, 0).unwrap();
    for f in 0..spec.num_families {
        let t = bench.traits(&Genome::Fixed(vec![f, 0])).unwrap();
        println!(
            "family {f}: first variant quality {:+.2}, robustness {:.2}, nll {:.3}",
            t.quality,
            t.robustness,
            nll(&get(f, 0), &y).unwrap()
        );
    }

    let same: Vec<PredictionMatrix> = (0..3).map(|v| get(0, v)).collect();
    let cross: Vec<PredictionMatrix> = (0..3).map(|f| get(f, 0)).collect();
    for (name, ms) in [("one family", &same), ("three families", &cross)] {
        let refs: Vec<&PredictionMatrix> = ms.iter().collect();
        println!(
            "{name:<15} disagreement {:.3}, oracle nll {:.3}",
            predictive_disagreement(&refs, &y).unwrap(),
            oracle_nll(&refs, &y).unwrap()
        );
    }

    // shifted severities hurt fragile architectures more
    let g = Genome::Fixed(vec![0, 0]);
    for sev in [0, 2, 5] {
        let p = bench.generate(&g, 0, Split::Test, sev).unwrap();
        println!("severity {sev}: test nll {:.3}", nll(&p, &bench.labels(Split::Test, sev).unwrap()).unwrap());
    }
}
