// Sampling, mutating and encoding architectures.
//
//     cargo run --example search_spaces

use nes::space::{mutate, space_from_id, CellSpace, CellSpaceSpec, SearchSpace, TabularSpace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let cell = CellSpace::new(CellSpaceSpec::default()).unwrap();
    println!("{}: {} genomes", cell.id(), cell.size().unwrap());
    let mut arch = cell.sample(&mut rng);
    println!("sampled {arch}");
    for _ in 0..5 {
        let (child, kind) = mutate(&cell, &arch, &mut rng);
        println!("  {kind:?} -> {}", child.genome);
        arch = child;
    }

    let nb201 = TabularSpace::nas_bench_201();
    println!("{}: {} architectures", nb201.id(), nb201.size().unwrap());
    let g = nb201.sample_genome(&mut rng);
    let text = TabularSpace::to_nb201_string(&g).unwrap();
    println!("  {g} is {text}");
    assert_eq!(TabularSpace::parse_nb201_string(&text).unwrap(), g);

    // space ids round-trip, which is how stores remember their space
    let dag = space_from_id("dag:4x3").unwrap();
    println!("{}: {} architectures", dag.id(), dag.size().unwrap());
}
