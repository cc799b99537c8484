//! Pre-evaluated benchmarks: any source that can return the predictions of
//! an `(architecture, seed)` pair without training.
//!
//! The JSONL exchange format (`nb201-jsonl`) has one JSON object per line:
//!
//! ```text
//! {"format": "nb201-jsonl", "space": "nb201"}                      optional header
//! {"labels": {"split": "val", "severity": 0, "y": [3, 1, ...]}}
//! {"arch": "|nor_conv_3x3~0|+|...|", "seed": 0, "split": "val", "severity": 0, "probs": [[...], ...]}
//! {"arch": "...", "seed": 1, "split": "test", "severity": 0, "logits": [[...], ...]}
//! ```
//!
//! For the `nb201` space, `arch` is the NAS-Bench-201 architecture string;
//! for other spaces it is the canonical genome text. Logits are softmaxed
//! on import. A missing header means `nb201`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::{LabelVector, PredictionMatrix};
use crate::space::{space_from_id, Genome, TabularSpace};
use crate::store::{Store, StoreKey};

/// Name of the only supported exchange format.
pub const NB201_JSONL: &str = "nb201-jsonl";

/// Lookup interface shared by in-memory, stored and generated benchmarks.
pub trait PredictionSource: Send + Sync {
    fn space_id(&self) -> String;

    fn labels(&self, split: Split, severity: u8) -> Result<LabelVector>;

    /// Predictions of one trained network.
    fn predictions(&self, genome: &Genome, seed: u64, split: Split, severity: u8) -> Result<Arc<PredictionMatrix>>;

    /// Seeds available for `genome`, ascending.
    fn seeds(&self, genome: &Genome) -> Result<Vec<u64>>;

    /// Every genome the source holds.
    fn genomes(&self) -> Result<Vec<Genome>>;

    /// Severities available on both evaluation splits.
    fn severities(&self) -> Vec<u8>;
}

/// Fully materialised benchmark.
#[derive(Clone, Debug, Default)]
pub struct TabularBenchmark {
    space_id: String,
    labels: BTreeMap<(Split, u8), LabelVector>,
    preds: HashMap<StoreKey, Arc<PredictionMatrix>>,
    seeds: BTreeMap<String, BTreeSet<u64>>,
}

impl TabularBenchmark {
    pub fn new(space_id: impl Into<String>) -> Self {
        Self { space_id: space_id.into(), ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn num_architectures(&self) -> usize {
        self.seeds.len()
    }

    pub fn insert_labels(&mut self, split: Split, severity: u8, labels: LabelVector) -> Result<()> {
        match self.labels.get(&(split, severity)) {
            Some(old) if *old != labels => Err(Error::DuplicateKey(format!("labels for {split}/{severity}"))),
            _ => {
                self.labels.insert((split, severity), labels);
                Ok(())
            }
        }
    }

    pub fn insert(&mut self, key: StoreKey, matrix: PredictionMatrix) -> Result<()> {
        if self.preds.contains_key(&key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        self.seeds.entry(key.genome.clone()).or_default().insert(key.seed);
        self.preds.insert(key, Arc::new(matrix));
        Ok(())
    }

    pub fn get(&self, key: &StoreKey) -> Option<&Arc<PredictionMatrix>> {
        self.preds.get(key)
    }

    /// Keys in sorted order.
    pub fn keys(&self) -> Vec<&StoreKey> {
        let mut keys: Vec<&StoreKey> = self.preds.keys().collect();
        keys.sort();
        keys
    }

    pub fn label_sets(&self) -> impl Iterator<Item = (&(Split, u8), &LabelVector)> {
        self.labels.iter()
    }

    /// Loads every entry of `store`, verifying checksums.
    pub fn load(store: &Store) -> Result<Self> {
        let mut bench = Self::new(store.space_id());
        for (&(split, sev), labels) in store.label_sets() {
            bench.insert_labels(split, sev, labels.clone())?;
        }
        for key in store.keys() {
            bench.insert(key.clone(), store.get(key)?)?;
        }
        Ok(bench)
    }

    /// Writes labels and matrices into `store` (which must hold the same space).
    pub fn save(&self, store: &mut Store) -> Result<()> {
        if store.space_id() != self.space_id {
            return Err(Error::Config(format!("store space `{}` != `{}`", store.space_id(), self.space_id)));
        }
        for (&(split, sev), labels) in &self.labels {
            store.put_labels(split, sev, labels)?;
        }
        for key in self.keys() {
            store.put(key.clone(), &self.preds[key])?;
        }
        Ok(())
    }
}

impl PredictionSource for TabularBenchmark {
    fn space_id(&self) -> String {
        self.space_id.clone()
    }

    fn labels(&self, split: Split, severity: u8) -> Result<LabelVector> {
        self.labels
            .get(&(split, severity))
            .cloned()
            .ok_or_else(|| Error::MissingKey(format!("labels for {split}/{severity}")))
    }

    fn predictions(&self, genome: &Genome, seed: u64, split: Split, severity: u8) -> Result<Arc<PredictionMatrix>> {
        let key = StoreKey::new(genome, seed, split, severity);
        self.preds.get(&key).cloned().ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    fn seeds(&self, genome: &Genome) -> Result<Vec<u64>> {
        self.seeds
            .get(&genome.to_string())
            .map(|s| s.iter().copied().collect())
            .ok_or_else(|| Error::MissingKey(format!("architecture {genome}")))
    }

    fn genomes(&self) -> Result<Vec<Genome>> {
        self.seeds.keys().map(|g| g.parse()).collect()
    }

    fn severities(&self) -> Vec<u8> {
        let val: BTreeSet<u8> = self.labels.keys().filter(|k| k.0 == Split::Val).map(|k| k.1).collect();
        self.labels.keys().filter(|k| k.0 == Split::Test && val.contains(&k.1)).map(|k| k.1).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    format: String,
    space: String,
}

#[derive(Serialize, Deserialize)]
struct LabelBody {
    split: Split,
    severity: u8,
    y: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    labels: LabelBody,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    arch: String,
    seed: u64,
    split: Split,
    severity: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Header(HeaderLine),
    Labels(LabelLine),
    Record(RecordLine),
}

fn check_format(format: &str) -> Result<()> {
    if format != NB201_JSONL {
        return Err(Error::Config(format!("unknown export format `{format}` (supported: {NB201_JSONL})")));
    }
    Ok(())
}

fn rows_to_matrix(rows: &[Vec<f64>], logits: bool) -> Result<PredictionMatrix> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::InvalidMatrix("ragged rows".into()));
    }
    if logits {
        PredictionMatrix::from_logits(rows.len(), c, &rows.concat())
    } else {
        PredictionMatrix::from_rows(rows)
    }
}

/// Parses an export into memory.
pub fn read_export(path: &Path, format: &str) -> Result<TabularBenchmark> {
    check_format(format)?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bench: Option<TabularBenchmark> = None;
    let mut space = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if let Line::Header(h) = &parsed {
            check_format(&h.format)?;
            if bench.is_some() {
                return Err(Error::Format(format!("{}:{}: header after data", path.display(), i + 1)));
            }
        }
        let b = bench.get_or_insert_with(|| {
            let id = match &parsed {
                Line::Header(h) => h.space.clone(),
                _ => "nb201".to_string(),
            };
            TabularBenchmark::new(id)
        });
        let sp = match &space {
            Some(s) => s,
            None => space.insert(space_from_id(&b.space_id)?),
        };
        match parsed {
            Line::Header(_) => {}
            Line::Labels(l) => {
                let y = LabelVector::new(l.labels.y);
                b.insert_labels(l.labels.split, l.labels.severity, y)?;
            }
            Line::Record(r) => {
                let genome =
                    if b.space_id == "nb201" { TabularSpace::parse_nb201_string(&r.arch)? } else { r.arch.parse()? };
                sp.validate(&genome)?;
                let matrix = match (&r.probs, &r.logits) {
                    (Some(p), None) => rows_to_matrix(p, false)?,
                    (None, Some(l)) => rows_to_matrix(l, true)?,
                    _ => {
                        return Err(Error::Format(format!(
                            "{}:{}: record needs exactly one of probs/logits",
                            path.display(),
                            i + 1
                        )))
                    }
                };
                b.insert(StoreKey::new(&genome, r.seed, r.split, r.severity), matrix)?;
            }
        }
    }
    let bench = bench.ok_or_else(|| Error::Dataset(format!("{} holds no records", path.display())))?;
    for split in [Split::Val, Split::Test] {
        if bench.labels(split, 0).is_err() {
            return Err(Error::Dataset(format!("export lacks clean {split} labels")));
        }
    }
    for (key, matrix) in &bench.preds {
        let labels = bench
            .labels(key.split, key.severity)
            .map_err(|_| Error::Dataset(format!("no labels for split {}/{} used by {key}", key.split, key.severity)))?;
        if labels.len() != matrix.num_points() || labels.iter().any(|y| y >= matrix.num_classes()) {
            return Err(Error::Dataset(format!("{key}: predictions do not match the labels")));
        }
    }
    Ok(bench)
}

/// Converts an export into a new store at `root`.
pub fn import_tabular(path: &Path, format: &str, root: &Path) -> Result<Store> {
    let bench = read_export(path, format)?;
    let mut store = Store::create(root, &bench.space_id)?;
    bench.save(&mut store)?;
    Ok(store)
}

fn write_line<T: Serialize>(out: &mut impl Write, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Writes `bench` as `nb201-jsonl`.
pub fn write_export(bench: &TabularBenchmark, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_line(&mut out, &HeaderLine { format: NB201_JSONL.into(), space: bench.space_id.clone() }, path)?;
    for (&(split, severity), y) in &bench.labels {
        let line = LabelLine { labels: LabelBody { split, severity, y: y.as_slice().to_vec() } };
        write_line(&mut out, &line, path)?;
    }
    let nb201 = bench.space_id == "nb201";
    for key in bench.keys() {
        let genome: Genome = key.genome.parse()?;
        let arch = if nb201 { TabularSpace::to_nb201_string(&genome)? } else { key.genome.clone() };
        let probs = bench.preds[key].rows().map(<[f64]>::to_vec).collect();
        let line = RecordLine {
            arch,
            seed: key.seed,
            split: key.split,
            severity: key.severity,
            probs: Some(probs),
            logits: None,
        };
        write_line(&mut out, &line, path)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Exports the contents of a store.
pub fn export_store(store: &Store, path: &Path) -> Result<()> {
    write_export(&TabularBenchmark::load(store)?, path)
}
