// Writing, reading, recovering and exporting a prediction store.
//
//     cargo run --example prediction_store

use nes::data::Split;
use nes::metrics::{LabelVector, PredictionMatrix};
use nes::space::Genome;
use nes::store::{CrashPoint, Store, StoreKey};
use nes::tabular::{export_store, import_tabular, NB201_JSONL};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    let mut store = Store::create(&root, "tabular:3,4").unwrap();
    store.put_labels(Split::Val, 0, &LabelVector::new(vec![0, 1])).unwrap();
    let m = PredictionMatrix::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap();
    let genome: Genome = "2,1".parse().unwrap();
    store.put(StoreKey::new(&genome, 0, Split::Val, 0), &m).unwrap();
    println!(
        "stored {} matrix; reads back {:?}",
        store.len(),
        store.get(&StoreKey::new(&genome, 0, Split::Val, 0)).unwrap()
    );

    // a writer dies after renaming the payload but before the manifest line
    store.put_interrupted(StoreKey::new(&genome, 1, Split::Val, 0), &m, CrashPoint::BeforeManifest).unwrap();
    drop(store);
    let store = Store::open(&root).unwrap();
    println!("reopened: {} entries, recovery {:?}", store.len(), store.recovery());
    println!("verify: {} checked, ok = {}", store.verify().entries_checked, store.verify().is_ok());

    // an importable export needs clean labels for both evaluation splits
    let mut store = store;
    store.put_labels(Split::Test, 0, &LabelVector::new(vec![1, 1])).unwrap();
    let export = dir.path().join("export.jsonl");
    export_store(&store, &export).unwrap();
    let copy = import_tabular(&export, NB201_JSONL, &dir.path().join("copy")).unwrap();
    println!("re-imported {} entries for space {}", copy.len(), copy.space_id());
}
