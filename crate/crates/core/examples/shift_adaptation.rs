// Selecting ensembles on shifted validation data improves shifted test
// performance, with the same pool of networks.
//
//     cargo run --release --example shift_adaptation

use std::sync::Arc;

use nes::data::Split;
use nes::search::{nes_re, Esa, Evaluator, SearchBudget, SearchOptions, SeverityMix, TabularEvaluator, SHIFT_SEVERITY};
use nes::synthetic::{SyntheticBenchmark, SyntheticSpec};

fn main() {
    let bench = SyntheticBenchmark::new(SyntheticSpec::default()).unwrap();
    let ev = TabularEvaluator::new(Arc::new(bench)).unwrap();
    let budget = SearchBudget { k: 200, m: 5, population: 50, parents: 10 };
    for mix in [SeverityMix::Clean, SeverityMix::Alternating] {
        let opts = SearchOptions { severity_mix: mix, ..Default::default() };
        let run = nes_re(&ev, &budget, 1, &opts).unwrap();
        for sev in [0, SHIFT_SEVERITY] {
            let y = ev.labels(Split::Test, sev).unwrap();
            let clean = run.select(&ev, Esa::Forward, 5, 0).unwrap();
            let shifted = run.select(&ev, Esa::Forward, 5, SHIFT_SEVERITY).unwrap();
            println!(
                "search {mix:?}, test severity {sev}: selected on clean {:.4}, on shifted {:.4}",
                run.pool.evaluate(&clean, Split::Test, sev, &y).unwrap().nll,
                run.pool.evaluate(&shifted, Split::Test, sev, &y).unwrap().nll
            );
        }
    }
}
