// Deep ensembles of one architecture, trained plainly and with anchored
// regularization, on the toy task.
//
//     cargo run --release --example anchored_ensembles

use nes::data::{Split, ToyTaskSpec};
use nes::search::{anchored_ensemble, deep_ens_fixed, Evaluator, ToyEvaluator};
use nes::space::CellSpaceSpec;
use nes::trainer::{AnchorConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let task = ToyTaskSpec { n_train: 512, n_val: 128, n_test: 256, ..Default::default() };
    let cell = CellSpaceSpec { hidden_width: 8, macro_depth: 1, ..Default::default() };
    let ev = ToyEvaluator::new(&task, cell, TrainConfig { epochs: 8, ..Default::default() }, &[0, 3]).unwrap();
    let arch = ev.space().sample(&mut ChaCha8Rng::seed_from_u64(2));
    let plain = deep_ens_fixed(&ev, &arch, 3, 0, 3).unwrap();
    let anchored = anchored_ensemble(&ev, &arch, 3, AnchorConfig { lambda: 0.4 }, 0, 3).unwrap();
    for sev in [0, 3] {
        let y = ev.labels(Split::Test, sev).unwrap();
        for (name, run) in [("plain", &plain), ("anchored", &anchored)] {
            let r = run.pool.evaluate(&run.selection, Split::Test, sev, &y).unwrap();
            println!(
                "{name:<9} severity {sev}: nll {:.4} error {:.4} disagreement {:.3}",
                r.nll, r.error, r.pred_disagreement
            );
        }
    }
}
