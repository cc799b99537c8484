//! On-disk prediction store.
//!
//! Layout of a store directory:
//!
//! ```text
//! MANIFEST              line-delimited text index
//! matrices/<hash>.nesp  one binary matrix per entry
//! ```
//!
//! Manifest lines:
//!
//! ```text
//! nes-store 1
//! space <space-id>
//! label <split> <severity> <y0,y1,...>
//! entry <genome> <seed> <split> <severity> <file> <sha256-hex>
//! ```
//!
//! A matrix file is `b"NESP"`, `u32` version 1, `u32` N, `u32` C, then
//! `N * C` little-endian `f32` values in row-major order.
//!
//! Matrix files are written to a temporary name and renamed into place
//! before the manifest line that references them is appended, so a reader
//! never sees an entry whose payload is incomplete. Each manifest line is
//! appended with a single write; a trailing line without its newline is a
//! torn write and is dropped when the store is reopened, together with any
//! matrix file no entry references.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::{LabelVector, PredictionMatrix};
use crate::space::Genome;

pub const MATRIX_MAGIC: [u8; 4] = *b"NESP";
pub const MATRIX_VERSION: u32 = 1;
pub const MATRIX_HEADER_LEN: usize = 16;
pub const STORE_VERSION: u32 = 1;

const MANIFEST: &str = "MANIFEST";
const MATRICES: &str = "matrices";
const TMP_PREFIX: &str = ".tmp-";

/// Serialises a matrix in the `NESP` layout (probabilities rounded to `f32`).
pub fn encode_matrix(matrix: &PredictionMatrix) -> Vec<u8> {
    let (n, c) = matrix.shape();
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + 4 * n * c);
    out.extend_from_slice(&MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    for &p in matrix.as_slice() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

/// Parses an `NESP` payload.
pub fn decode_matrix(bytes: &[u8]) -> Result<PredictionMatrix> {
    if bytes.len() < MATRIX_HEADER_LEN || bytes[..4] != MATRIX_MAGIC {
        return Err(Error::Format("not an NESP matrix file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != MATRIX_VERSION {
        return Err(Error::Format(format!("unsupported matrix version {version}")));
    }
    let (n, c) = (word(8) as usize, word(12) as usize);
    let expected = n.checked_mul(c).and_then(|v| v.checked_mul(4)).and_then(|v| v.checked_add(MATRIX_HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!("matrix file is {} bytes, header declares {n}x{c}", bytes.len())));
    }
    let probs = bytes[MATRIX_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    PredictionMatrix::new(n, c, probs)
}

/// Lowercase hex SHA-256.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Identity of one stored matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StoreKey {
    /// Canonical genome text.
    pub genome: String,
    pub seed: u64,
    pub split: Split,
    pub severity: u8,
}

impl StoreKey {
    pub fn new(genome: &Genome, seed: u64, split: Split, severity: u8) -> Self {
        Self { genome: genome.to_string(), seed, split, severity }
    }

    /// Deterministic payload file name.
    pub fn file_name(&self) -> String {
        format!("{}.nesp", &checksum(self.to_string().as_bytes())[..32])
    }
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.genome, self.seed, self.split, self.severity)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub key: StoreKey,
    pub file: String,
    pub checksum: String,
}

/// What [`Store::open`] had to clean up.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Recovery {
    pub dropped_partial_line: bool,
    pub removed_files: Vec<String>,
}

impl Recovery {
    pub fn is_clean(&self) -> bool {
        !self.dropped_partial_line && self.removed_files.is_empty()
    }
}

/// Outcome of [`Store::verify`].
#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub entries_checked: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Where [`Store::put_interrupted`] stops, simulating a crash.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrashPoint {
    /// Payload written to its temporary name only.
    BeforeRename,
    /// Payload renamed into place, manifest untouched.
    BeforeManifest,
    /// Manifest line written without its trailing newline.
    TornManifestLine,
}

/// Single-writer handle on a store directory.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    space_id: String,
    labels: BTreeMap<(Split, u8), LabelVector>,
    entries: BTreeMap<StoreKey, ManifestEntry>,
    recovery: Recovery,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!("{TMP_PREFIX}{name}"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parse_u<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("manifest line {line}: bad number `{s}`")))
}

fn format_labels(labels: &LabelVector) -> String {
    labels.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(",")
}

impl Store {
    /// Creates an empty store; fails if `root` already holds one.
    pub fn create(root: impl AsRef<Path>, space_id: &str) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if space_id.is_empty() || space_id.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid space id `{space_id}`")));
        }
        let manifest = root.join(MANIFEST);
        if manifest.exists() {
            return Err(Error::Config(format!("{} already contains a store", root.display())));
        }
        fs::create_dir_all(root.join(MATRICES)).map_err(|e| Error::io(&root, e))?;
        write_atomic(&manifest, format!("nes-store {STORE_VERSION}\nspace {space_id}\n").as_bytes())?;
        Ok(Self {
            root,
            space_id: space_id.to_string(),
            labels: BTreeMap::new(),
            entries: BTreeMap::new(),
            recovery: Recovery::default(),
        })
    }

    /// Opens an existing store, dropping a torn manifest tail and
    /// unreferenced payload files.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = root.join(MANIFEST);
        let mut text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut recovery = Recovery::default();
        if !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            log::warn!("dropping torn manifest line in {}", manifest.display());
            text.truncate(keep);
            write_atomic(&manifest, text.as_bytes())?;
            recovery.dropped_partial_line = true;
        }
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == format!("nes-store {STORE_VERSION}") => {}
            other => return Err(Error::Format(format!("unrecognised manifest header {:?}", other.map(|o| o.1)))),
        }
        let space_id = match lines.next() {
            Some((_, l)) => l.strip_prefix("space ").map(str::to_string),
            None => None,
        }
        .ok_or_else(|| Error::Format("manifest lacks a space line".into()))?;
        let mut store = Self { root, space_id, labels: BTreeMap::new(), entries: BTreeMap::new(), recovery };
        for (i, line) in lines {
            let no = i + 1;
            let fields: Vec<&str> = line.split(' ').collect();
            match fields.as_slice() {
                ["label", split, sev, ys] => {
                    let key = (split.parse()?, parse_u(sev, no)?);
                    let ys = if ys.is_empty() {
                        Vec::new()
                    } else {
                        ys.split(',').map(|y| parse_u(y, no)).collect::<Result<_>>()?
                    };
                    if store.labels.insert(key, LabelVector::new(ys)).is_some() {
                        return Err(Error::Format(format!("manifest line {no}: labels repeated")));
                    }
                }
                ["entry", genome, seed, split, sev, file, sum] => {
                    let key = StoreKey {
                        genome: genome.to_string(),
                        seed: parse_u(seed, no)?,
                        split: split.parse()?,
                        severity: parse_u(sev, no)?,
                    };
                    let entry = ManifestEntry { key: key.clone(), file: file.to_string(), checksum: sum.to_string() };
                    if store.entries.insert(key.clone(), entry).is_some() {
                        return Err(Error::Format(format!("manifest line {no}: duplicate key {key}")));
                    }
                }
                [] | [""] => {}
                _ => return Err(Error::Format(format!("manifest line {no}: unrecognised `{line}`"))),
            }
        }
        store.collect_garbage()?;
        Ok(store)
    }

    /// Opens `root` if it holds a store for `space_id`, else creates one.
    pub fn open_or_create(root: impl AsRef<Path>, space_id: &str) -> Result<Self> {
        if root.as_ref().join(MANIFEST).exists() {
            let store = Self::open(root)?;
            if store.space_id != space_id {
                return Err(Error::Config(format!("store holds space `{}`, expected `{space_id}`", store.space_id)));
            }
            Ok(store)
        } else {
            Self::create(root, space_id)
        }
    }

    fn collect_garbage(&mut self) -> Result<()> {
        let dir = self.root.join(MATRICES);
        let referenced: BTreeSet<&str> = self.entries.values().map(|e| e.file.as_str()).collect();
        let listing = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut removed = Vec::new();
        for item in listing {
            let item = item.map_err(|e| Error::io(&dir, e))?;
            let name = item.file_name().to_string_lossy().into_owned();
            if !referenced.contains(name.as_str()) {
                fs::remove_file(item.path()).map_err(|e| Error::io(item.path(), e))?;
                removed.push(name);
            }
        }
        if !removed.is_empty() {
            log::warn!("removed {} unreferenced matrix files from {}", removed.len(), dir.display());
        }
        removed.sort();
        self.recovery.removed_files = removed;
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    /// Cleanup performed when this handle was opened.
    pub fn recovery(&self) -> &Recovery {
        &self.recovery
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &StoreKey) -> bool {
        self.entries.contains_key(key)
    }

    /// Entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &StoreKey> {
        self.entries.keys()
    }

    /// Distinct genome strings.
    pub fn genomes(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|k| k.genome.as_str()).collect()
    }

    /// Seeds stored for `genome` on `(split, severity)`, ascending.
    pub fn seeds(&self, genome: &str, split: Split, severity: u8) -> Vec<u64> {
        self.entries
            .keys()
            .filter(|k| k.genome == genome && k.split == split && k.severity == severity)
            .map(|k| k.seed)
            .collect()
    }

    pub fn labels(&self, split: Split, severity: u8) -> Option<&LabelVector> {
        self.labels.get(&(split, severity))
    }

    pub fn label_sets(&self) -> impl Iterator<Item = (&(Split, u8), &LabelVector)> {
        self.labels.iter()
    }

    fn append_line(&self, line: &str, terminate: bool) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let mut file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut buf = String::with_capacity(line.len() + 1);
        buf.push_str(line);
        if terminate {
            buf.push('\n');
        }
        file.write_all(buf.as_bytes()).map_err(|e| Error::io(&path, e))
    }

    /// Records the labels of `(split, severity)`. Re-recording identical
    /// labels is a no-op.
    pub fn put_labels(&mut self, split: Split, severity: u8, labels: &LabelVector) -> Result<()> {
        if let Some(existing) = self.labels.get(&(split, severity)) {
            if existing == labels {
                return Ok(());
            }
            return Err(Error::DuplicateKey(format!("labels for {split}/{severity}")));
        }
        if labels.is_empty() {
            return Err(Error::Empty("labels"));
        }
        if let Some(e) = self.entries.values().find(|e| e.key.split == split && e.key.severity == severity) {
            let n = self.get(&e.key)?.num_points();
            if n != labels.len() {
                return Err(Error::ShapeMismatch(format!("{} labels for {n}-point matrices", labels.len())));
            }
        }
        self.append_line(&format!("label {split} {severity} {}", format_labels(labels)), true)?;
        self.labels.insert((split, severity), labels.clone());
        Ok(())
    }

    fn check_put(&self, key: &StoreKey, matrix: &PredictionMatrix) -> Result<()> {
        if self.entries.contains_key(key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        if key.genome.is_empty() || key.genome.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("genome `{}` cannot be stored", key.genome)));
        }
        if let Some(labels) = self.labels(key.split, key.severity) {
            if labels.len() != matrix.num_points() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} rows for {} labels",
                    key,
                    matrix.num_points(),
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    fn entry_line(entry: &ManifestEntry) -> String {
        let k = &entry.key;
        format!("entry {} {} {} {} {} {}", k.genome, k.seed, k.split, k.severity, entry.file, entry.checksum)
    }

    /// Stores `matrix` under `key`.
    pub fn put(&mut self, key: StoreKey, matrix: &PredictionMatrix) -> Result<()> {
        self.check_put(&key, matrix)?;
        let bytes = encode_matrix(matrix);
        let file = key.file_name();
        write_atomic(&self.root.join(MATRICES).join(&file), &bytes)?;
        let entry = ManifestEntry { key: key.clone(), file, checksum: checksum(&bytes) };
        self.append_line(&Self::entry_line(&entry), true)?;
        self.entries.insert(key, entry);
        Ok(())
    }

    /// Runs [`Store::put`] up to `crash` and stops, leaving the directory as
    /// a crashed writer would. The handle must be dropped and the store
    /// reopened afterwards.
    #[doc(hidden)]
    pub fn put_interrupted(&mut self, key: StoreKey, matrix: &PredictionMatrix, crash: CrashPoint) -> Result<()> {
        self.check_put(&key, matrix)?;
        let bytes = encode_matrix(matrix);
        let file = key.file_name();
        let dir = self.root.join(MATRICES);
        let tmp = dir.join(format!("{TMP_PREFIX}{file}"));
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        if crash == CrashPoint::BeforeRename {
            return Ok(());
        }
        fs::rename(&tmp, dir.join(&file)).map_err(|e| Error::io(&tmp, e))?;
        if crash == CrashPoint::BeforeManifest {
            return Ok(());
        }
        let entry = ManifestEntry { key, file, checksum: checksum(&bytes) };
        self.append_line(&Self::entry_line(&entry), false)
    }

    fn read_verified(&self, entry: &ManifestEntry) -> Result<Vec<u8>> {
        let path = self.root.join(MATRICES).join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let found = checksum(&bytes);
        if found != entry.checksum {
            return Err(Error::ChecksumMismatch { path, expected: entry.checksum.clone(), found });
        }
        Ok(bytes)
    }

    /// Loads and checksum-verifies the matrix stored under `key`.
    pub fn get(&self, key: &StoreKey) -> Result<PredictionMatrix> {
        let entry = self.entries.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))?;
        decode_matrix(&self.read_verified(entry)?)
    }

    /// Checks every entry's payload, checksum and shape.
    pub fn verify(&self) -> VerifyReport {
        let mut report = VerifyReport::default();
        for entry in self.entries.values() {
            report.entries_checked += 1;
            let matrix = match self.read_verified(entry).and_then(|b| decode_matrix(&b)) {
                Ok(m) => m,
                Err(e) => {
                    report.problems.push(format!("{}: {e}", entry.key));
                    continue;
                }
            };
            match self.labels(entry.key.split, entry.key.severity) {
                None => report.problems.push(format!("{}: no labels for its split", entry.key)),
                Some(l) if l.len() != matrix.num_points() => {
                    report.problems.push(format!("{}: {} rows for {} labels", entry.key, matrix.num_points(), l.len()))
                }
                Some(l) if l.iter().any(|y| y >= matrix.num_classes()) => {
                    report.problems.push(format!("{}: label exceeds class count", entry.key))
                }
                Some(_) => {}
            }
        }
        report
    }
}
