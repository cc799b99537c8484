// Regularized evolution over the cell space with networks trained on the
// toy task. Evaluations are cached in a store, so a rerun trains nothing.
//
//     cargo run --release --example toy_search

use std::sync::Arc;

use nes::data::{Split, ToyTaskSpec};
use nes::search::{nes_re, CachedEvaluator, Dispatch, Esa, Evaluator, SearchBudget, SearchOptions, ToyEvaluator};
use nes::space::CellSpaceSpec;
use nes::store::Store;
use nes::trainer::TrainConfig;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let task = ToyTaskSpec { n_train: 384, n_val: 128, n_test: 256, ..Default::default() };
    let cell = CellSpaceSpec { num_intermediate_nodes: 3, hidden_width: 8, macro_depth: 1, ..Default::default() };
    let inner =
        Arc::new(ToyEvaluator::new(&task, cell, TrainConfig { epochs: 5, ..Default::default() }, &[0]).unwrap());
    let budget = SearchBudget { k: 16, m: 3, population: 6, parents: 3 };
    let opts = SearchOptions { workers: 4, dispatch: Dispatch::Waves { wave_size: 4 }, ..Default::default() };

    for attempt in ["first run", "rerun"] {
        let store = Store::open_or_create(dir.path(), &inner.space().id()).unwrap();
        let ev = CachedEvaluator::new(inner.clone(), store).unwrap();
        let run = nes_re(&ev, &budget, 0, &opts).unwrap();
        let sel = run.select(&ev, Esa::Forward, 3, 0).unwrap();
        let y = ev.labels(Split::Test, 0).unwrap();
        let r = run.pool.evaluate(&sel, Split::Test, 0, &y).unwrap();
        println!("{attempt}: trained {}, cached {}; ensemble test nll {:.4}", ev.misses(), ev.hits(), r.nll);
        for id in sel.member_ids() {
            println!("  member {}", run.pool.get(*id).unwrap().arch.genome);
        }
    }
}
