//! Synthetic classification tasks and feature-space corruptions.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LabelVector;

/// Highest shift severity.
pub const MAX_SEVERITY: u8 = 5;

/// Evaluation split of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split `{s}`"))),
        }
    }
}

/// Which disjoint operator set a corruption draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionFamily {
    Validation,
    Test,
}

impl CorruptionFamily {
    pub fn operators(self) -> &'static [CorruptionOp] {
        match self {
            CorruptionFamily::Validation => {
                &[CorruptionOp::GaussianNoise, CorruptionOp::FeatureDropout, CorruptionOp::SmoothWarp]
            }
            CorruptionFamily::Test => {
                &[CorruptionOp::MultiplicativeNoise, CorruptionOp::BlockPermutation, CorruptionOp::HeavyTailNoise]
            }
        }
    }

    /// The family used for a split's shifted copies.
    pub fn for_split(split: Split) -> Option<Self> {
        match split {
            Split::Train => None,
            Split::Val => Some(CorruptionFamily::Validation),
            Split::Test => Some(CorruptionFamily::Test),
        }
    }
}

/// A per-point feature corruption whose magnitude grows with severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorruptionOp {
    /// `x + 0.4 s z`, `z ~ N(0, I)`
    GaussianNoise,
    /// Each feature zeroed with probability `0.1 s`.
    FeatureDropout,
    /// `x + 0.4 s sin(1.5 x)`
    SmoothWarp,
    /// `x * (1 + 0.2 s z)`
    MultiplicativeNoise,
    /// Each block of 4 features is rotated by one with probability `0.2 s`.
    BlockPermutation,
    /// `x + 0.3 s t`, `t ~ Student-t(2)` clipped to `[-20, 20]`.
    HeavyTailNoise,
}

impl CorruptionOp {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionOp::GaussianNoise => "gaussian-noise",
            CorruptionOp::FeatureDropout => "feature-dropout",
            CorruptionOp::SmoothWarp => "smooth-warp",
            CorruptionOp::MultiplicativeNoise => "multiplicative-noise",
            CorruptionOp::BlockPermutation => "block-permutation",
            CorruptionOp::HeavyTailNoise => "heavy-tail-noise",
        }
    }
}

const BLOCK: usize = 4;

/// Features, labels and provenance of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub features: Array2<f64>,
    pub labels: LabelVector,
    pub split: Split,
    pub severity: u8,
    pub corruption_family: Option<CorruptionFamily>,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Gaussian-mixture task parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTaskSpec {
    pub task_seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub num_classes: usize,
    pub dim: usize,
    /// Standard deviation of points around their mode; 0 means no overlap.
    pub overlap: f64,
    /// Mixture modes per class, placed on a sphere.
    pub modes_per_class: usize,
    /// Radius of the sphere holding the modes.
    pub radius: f64,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        Self {
            task_seed: 0,
            n_train: 2048,
            n_val: 512,
            n_test: 2048,
            num_classes: 10,
            dim: 16,
            overlap: 1.0,
            modes_per_class: 2,
            radius: 3.0,
        }
    }
}

/// Clean train, validation and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTask {
    pub spec: ToyTaskSpec,
    pub train: ToyDataset,
    pub val: ToyDataset,
    pub test: ToyDataset,
}

impl ToyTask {
    pub fn split(&self, split: Split) -> &ToyDataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Draws a Gaussian-mixture classification task, deterministic in
/// `spec.task_seed`.
pub fn make_toy_task(spec: &ToyTaskSpec) -> Result<ToyTask> {
    if spec.num_classes < 2 || spec.dim < 2 {
        return Err(Error::InvalidArgument("toy task needs at least 2 classes and 2 dimensions".into()));
    }
    if spec.modes_per_class == 0 || !(spec.overlap >= 0.0) || !(spec.radius > 0.0) {
        return Err(Error::InvalidArgument("invalid mixture parameters".into()));
    }
    if spec.n_train == 0 || spec.n_val == 0 || spec.n_test == 0 {
        return Err(Error::InvalidArgument("every split needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.task_seed);
    let modes: Vec<Vec<f64>> = (0..spec.num_classes * spec.modes_per_class)
        .map(|_| {
            let v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| spec.radius * x / norm).collect()
        })
        .collect();
    let mut draw = |n: usize, split: Split| {
        let mut features = Array2::zeros((n, spec.dim));
        let mut labels = Vec::with_capacity(n);
        for mut row in features.axis_iter_mut(Axis(0)) {
            let y = rng.random_range(0..spec.num_classes);
            let mode = &modes[y * spec.modes_per_class + rng.random_range(0..spec.modes_per_class)];
            for (x, c) in row.iter_mut().zip(mode) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = c + spec.overlap * z;
            }
            labels.push(y);
        }
        ToyDataset { features, labels: LabelVector::new(labels), split, severity: 0, corruption_family: None }
    };
    let train = draw(spec.n_train, Split::Train);
    let val = draw(spec.n_val, Split::Val);
    let test = draw(spec.n_test, Split::Test);
    Ok(ToyTask { spec: spec.clone(), train, val, test })
}

/// Applies one operator per point, sampled from `family`, at `severity`.
///
/// The random draws do not depend on severity, so corrupting the same
/// dataset with equally seeded generators at increasing severities yields
/// coupled copies whose displacement grows monotonically.
pub fn corrupt(
    dataset: &ToyDataset,
    family: CorruptionFamily,
    severity: u8,
    rng: &mut dyn RngCore,
) -> Result<ToyDataset> {
    if dataset.severity != 0 || dataset.corruption_family.is_some() {
        return Err(Error::Dataset("dataset is already corrupted".into()));
    }
    if !(1..=MAX_SEVERITY).contains(&severity) {
        return Err(Error::InvalidArgument(format!("severity must be in 1..=5, got {severity}")));
    }
    let s = f64::from(severity);
    let ops = family.operators();
    let heavy = StudentT::new(2.0).expect("valid degrees of freedom");
    let mut features = dataset.features.clone();
    let dim = features.ncols();
    for mut row in features.axis_iter_mut(Axis(0)) {
        let op = ops[rng.random_range(0..ops.len())];
        // one draw per feature regardless of operator keeps streams aligned
        let noise: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let unif: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let tails: Vec<f64> = (0..dim).map(|_| heavy.sample(rng)).collect();
        match op {
            CorruptionOp::GaussianNoise => row.iter_mut().zip(&noise).for_each(|(x, z)| *x += 0.4 * s * z),
            CorruptionOp::FeatureDropout => {
                row.iter_mut().zip(&unif).filter(|(_, u)| **u < 0.1 * s).for_each(|(x, _)| *x = 0.0)
            }
            CorruptionOp::SmoothWarp => row.iter_mut().for_each(|x| *x += 0.4 * s * (1.5 * *x).sin()),
            CorruptionOp::MultiplicativeNoise => row.iter_mut().zip(&noise).for_each(|(x, z)| *x *= 1.0 + 0.2 * s * z),
            CorruptionOp::BlockPermutation => {
                for (b, start) in (0..dim).step_by(BLOCK).enumerate() {
                    let end = (start + BLOCK).min(dim);
                    if end - start >= 2 && unif[b] < 0.2 * s {
                        let mut block: Vec<f64> = (start..end).map(|j| row[j]).collect();
                        block.rotate_left(1);
                        for (j, v) in (start..end).zip(block) {
                            row[j] = v;
                        }
                    }
                }
            }
            CorruptionOp::HeavyTailNoise => {
                row.iter_mut().zip(&tails).for_each(|(x, t)| *x += 0.3 * s * t.clamp(-20.0, 20.0))
            }
        }
    }
    Ok(ToyDataset {
        features,
        labels: dataset.labels.clone(),
        split: dataset.split,
        severity,
        corruption_family: Some(family),
    })
}

/// Every severity 0..=5 of a split, corrupted with coupled draws.
pub fn severity_ladder(dataset: &ToyDataset, family: CorruptionFamily, seed: u64) -> Result<Vec<ToyDataset>> {
    let mut out = vec![dataset.clone()];
    for s in 1..=MAX_SEVERITY {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        out.push(corrupt(dataset, family, s, &mut rng)?);
    }
    Ok(out)
}
