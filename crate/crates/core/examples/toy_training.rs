// Train one cell network on the toy task and watch it degrade under shift.
//
//     cargo run --release --example toy_training

use nes::data::{make_toy_task, severity_ladder, CorruptionFamily, ToyTaskSpec};
use nes::metrics::{classification_error, nll};
use nes::space::{CellSpace, CellSpaceSpec, SearchSpace};
use nes::trainer::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let spec = ToyTaskSpec { n_train: 1024, n_val: 256, n_test: 512, ..Default::default() };
    let task = make_toy_task(&spec).unwrap();
    let cell = CellSpaceSpec { hidden_width: 12, ..Default::default() };
    let genome = CellSpace::new(cell.clone()).unwrap().sample_genome(&mut ChaCha8Rng::seed_from_u64(3));
    let config = TrainConfig { epochs: 15, ..Default::default() };
    let net = train(&cell, &genome, &task.train, spec.num_classes, &config, 0).unwrap();
    println!("genome {genome}, {} parameters", net.network.num_params());
    println!("training loss {:.3} -> {:.3}", net.epoch_losses.first().unwrap(), net.epoch_losses.last().unwrap());
    let ladder = severity_ladder(&task.test, CorruptionFamily::Test, 5).unwrap();
    for data in &ladder {
        let p = net.predict(data).unwrap();
        println!(
            "severity {}: nll {:.3} error {:.3}",
            data.severity,
            nll(&p, &data.labels).unwrap(),
            classification_error(&p, &data.labels).unwrap()
        );
    }
}
