// Neural ensemble search against deep-ensemble baselines on the synthetic
// benchmark: NES builds stronger ensembles from individually weaker members.
//
//     cargo run --release --example nes_vs_baselines

use std::sync::Arc;

use nes::data::Split;
use nes::search::{
    deep_ens_best_arch, deep_ens_rs, nes_re, nes_rs, Esa, Evaluator, SearchBudget, SearchOptions, TabularEvaluator,
};
use nes::synthetic::{SyntheticBenchmark, SyntheticSpec};

fn main() {
    let bench = SyntheticBenchmark::new(SyntheticSpec::default()).unwrap();
    let ev = TabularEvaluator::new(Arc::new(bench)).unwrap();
    let y = ev.labels(Split::Test, 0).unwrap();
    let budget = SearchBudget { k: 200, m: 3, population: 50, parents: 10 };
    let opts = SearchOptions::default();
    let seed = 0;

    println!("{:<16} {:>8} {:>8} {:>10} {:>12}", "method", "nll", "error", "member nll", "disagreement");
    let show = |name: &str, r: nes::metrics::EvalReport| {
        println!("{name:<16} {:>8.4} {:>8.4} {:>10.4} {:>12.3}", r.nll, r.error, r.avg_bsl_nll, r.pred_disagreement);
    };
    for (name, search) in [("nes-rs", nes_rs as fn(_, _, _, _) -> _), ("nes-re", nes_re)] {
        let run = search(&ev, &budget, seed, &opts).unwrap();
        let sel = run.select(&ev, Esa::Forward, 3, 0).unwrap();
        show(name, run.pool.evaluate(&sel, Split::Test, 0, &y).unwrap());
    }
    let (best, arch) = deep_ens_best_arch(&ev, 3, 0).unwrap();
    show("deepens-best", best.pool.evaluate(&best.selection, Split::Test, 0, &y).unwrap());
    println!("  (best single architecture {})", arch.genome);
    let (rs, _) = deep_ens_rs(&ev, 200, 3, 0, seed, 1).unwrap();
    show("deepens-rs", rs.pool.evaluate(&rs.selection, Split::Test, 0, &y).unwrap());
}
