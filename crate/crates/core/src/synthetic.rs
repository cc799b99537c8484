//! Synthetic tabular benchmark with planted architecture families.
//!
//! The space is `tabular:G,A`: edge 0 picks one of `G` families, edge 1 one
//! of `A` variants. For a point `i` with label `y_i`, network `(g, v, seed)`
//! produces logits
//!
//! ```text
//! z_i = margin * q_a * e_{y_i} + family_sigma * P_{g,i} + sigma_w * E_{a,i} + sigma_s * S_{a,seed,i}
//! ```
//!
//! with independent standard normal patterns `P` (shared by a family), `E`
//! (per architecture) and `S` (per seed). Networks of one family therefore
//! err on the same points, while different families err independently.
//!
//! Quality `u_a` adds a family effect, a variant effect shared across
//! families, and an architecture residual. Strength `q_a` grows with `u_a`;
//! robustness `r_a` shrinks with it, so the cleanly strongest architectures
//! suffer most under shift. At severity `s` the true-class margin shrinks
//! and a corruption pattern is added, both scaled by `s / 5 * (1 - r_a)`.
//! Validation corruption is Gaussian, test corruption Laplace.
//!
//! Probabilities are rounded to `f32` so generated and stored values agree.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Split, MAX_SEVERITY};
use crate::error::{Error, Result};
use crate::metrics::{softmax_in_place, LabelVector, PredictionMatrix};
use crate::rng::derive_seed;
use crate::space::{Genome, SearchSpace, TabularSpace};
use crate::store::{Store, StoreKey};
use crate::tabular::{PredictionSource, TabularBenchmark};

const TAG_LABELS: u64 = 1;
const TAG_FAMILY: u64 = 2;
const TAG_ARCH: u64 = 3;
const TAG_SEED: u64 = 4;
const TAG_SHIFT: u64 = 5;
const TAG_LATENT: u64 = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub gen_seed: u64,
    pub num_families: usize,
    pub archs_per_family: usize,
    pub seeds_per_arch: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub num_classes: usize,
    /// True-class logit boost of an average architecture.
    pub margin: f64,
    /// Scale of the family pattern (cross-family separation).
    pub family_sigma: f64,
    /// Scale of the architecture pattern within a family.
    pub sigma_w: f64,
    /// Scale of the seed pattern.
    pub sigma_s: f64,
    /// Relative spread of strength across architectures.
    pub quality_spread: f64,
    /// How strongly robustness falls with clean quality.
    pub robustness_coupling: f64,
    /// Fraction of the margin lost at severity 5 by a non-robust network.
    pub shift_margin: f64,
    /// Corruption pattern scale at severity 5 for a non-robust network.
    pub shift_noise: f64,
    pub max_severity: u8,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            gen_seed: 0,
            num_families: 5,
            archs_per_family: 64,
            seeds_per_arch: 3,
            n_val: 250,
            n_test: 250,
            num_classes: 10,
            margin: 4.0,
            family_sigma: 3.0,
            sigma_w: 0.9,
            sigma_s: 0.3,
            quality_spread: 0.3,
            robustness_coupling: 1.5,
            shift_margin: 0.6,
            shift_noise: 2.0,
            max_severity: MAX_SEVERITY,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic benchmark: {m}")));
        if self.num_families == 0 || self.archs_per_family == 0 || self.seeds_per_arch == 0 {
            return bad("families, variants and seeds must be >= 1");
        }
        if self.n_val == 0 || self.n_test == 0 || self.num_classes < 2 {
            return bad("need points on both splits and at least 2 classes");
        }
        if self.max_severity > MAX_SEVERITY {
            return bad("max_severity exceeds 5");
        }
        let scales = [
            self.margin,
            self.family_sigma,
            self.sigma_w,
            self.sigma_s,
            self.quality_spread,
            self.robustness_coupling,
            self.shift_margin,
            self.shift_noise,
        ];
        if scales.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("scales must be finite and >= 0");
        }
        if !(self.sigma_s < self.sigma_w && self.sigma_w < self.family_sigma) {
            return bad("requires sigma_s < sigma_w < family_sigma");
        }
        if self.shift_margin > 1.0 {
            return bad("shift_margin must be <= 1");
        }
        Ok(())
    }

    pub fn space(&self) -> TabularSpace {
        TabularSpace::with_arities(vec![self.num_families, self.archs_per_family]).expect("validated arities")
    }

    pub fn space_id(&self) -> String {
        self.space().id()
    }

    fn n(&self, split: Split) -> Result<usize> {
        match split {
            Split::Val => Ok(self.n_val),
            Split::Test => Ok(self.n_test),
            Split::Train => Err(Error::Dataset("synthetic benchmarks have no training split".into())),
        }
    }
}

/// Latent properties of one architecture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchTraits {
    pub family: usize,
    pub variant: usize,
    /// Standardised quality.
    pub quality: f64,
    pub strength: f64,
    pub robustness: f64,
}

/// Lazily generated benchmark; every lookup is recomputed deterministically.
#[derive(Clone, Debug)]
pub struct SyntheticBenchmark {
    spec: SyntheticSpec,
    space: TabularSpace,
    family_effect: Vec<f64>,
    variant_effect: Vec<f64>,
    labels: [LabelVector; 2],
}

fn normals(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn split_tag(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

impl SyntheticBenchmark {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let g = spec.gen_seed;
        let family_effect = normals(derive_seed(g, &[TAG_LATENT, 0]), spec.num_families);
        let variant_effect = normals(derive_seed(g, &[TAG_LATENT, 1]), spec.archs_per_family);
        let label_set = |split: Split, n: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(g, &[TAG_LABELS, split_tag(split)]));
            LabelVector::new((0..n).map(|_| rng.random_range(0..spec.num_classes)).collect())
        };
        let labels = [label_set(Split::Val, spec.n_val), label_set(Split::Test, spec.n_test)];
        Ok(Self { space: spec.space(), spec, family_effect, variant_effect, labels })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn space(&self) -> &TabularSpace {
        &self.space
    }

    fn decode(&self, genome: &Genome) -> Result<(usize, usize)> {
        self.space.validate(genome)?;
        match genome {
            Genome::Fixed(ops) => Ok((ops[0], ops[1])),
            Genome::Cell(_) => unreachable!("validated as fixed"),
        }
    }

    pub fn traits(&self, genome: &Genome) -> Result<ArchTraits> {
        let (family, variant) = self.decode(genome)?;
        let resid = normals(derive_seed(self.spec.gen_seed, &[TAG_LATENT, 2, family as u64, variant as u64]), 2);
        let quality = (self.family_effect[family] + self.variant_effect[variant] + 0.5 * resid[0]) / 1.5;
        let strength = (1.0 + self.spec.quality_spread * quality).max(0.2);
        let robustness = 1.0 / (1.0 + (self.spec.robustness_coupling * quality - 0.5 * resid[1]).exp());
        Ok(ArchTraits { family, variant, quality, strength, robustness })
    }

    fn labels_of(&self, split: Split) -> Result<&LabelVector> {
        match split {
            Split::Val => Ok(&self.labels[0]),
            Split::Test => Ok(&self.labels[1]),
            Split::Train => Err(Error::Dataset("synthetic benchmarks have no training split".into())),
        }
    }

    /// Generates the predictions of `(genome, seed)` on `(split, severity)`.
    pub fn generate(&self, genome: &Genome, seed: u64, split: Split, severity: u8) -> Result<PredictionMatrix> {
        let t = self.traits(genome)?;
        let spec = &self.spec;
        if seed >= spec.seeds_per_arch as u64 {
            return Err(Error::MissingKey(format!("seed {seed} of {genome}")));
        }
        if severity > spec.max_severity {
            return Err(Error::MissingKey(format!("severity {severity}")));
        }
        let n = spec.n(split)?;
        let c = spec.num_classes;
        let labels = self.labels_of(split)?;
        let g = spec.gen_seed;
        let sp = split_tag(split);
        let (fam, var) = (t.family as u64, t.variant as u64);
        let p = normals(derive_seed(g, &[TAG_FAMILY, sp, fam]), n * c);
        let e = normals(derive_seed(g, &[TAG_ARCH, sp, fam, var]), n * c);
        let s = normals(derive_seed(g, &[TAG_SEED, sp, fam, var, seed]), n * c);
        let shift = f64::from(severity) / f64::from(MAX_SEVERITY) * (1.0 - t.robustness);
        let corruption = if severity > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(g, &[TAG_SHIFT, sp, fam, var]));
            (0..n * c)
                .map(|_| match split {
                    Split::Test => {
                        // unit-variance Laplace
                        let u: f64 = rng.random_range(-0.5..0.5);
                        -u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln() / std::f64::consts::SQRT_2
                    }
                    _ => StandardNormal.sample(&mut rng),
                })
                .collect()
        } else {
            vec![0.0; n * c]
        };
        let boost = spec.margin * t.strength * (1.0 - spec.shift_margin * shift);
        let mut probs = Vec::with_capacity(n * c);
        let mut row = vec![0.0; c];
        for (i, y) in labels.iter().enumerate() {
            for (k, r) in row.iter_mut().enumerate() {
                let j = i * c + k;
                *r = spec.family_sigma * p[j]
                    + spec.sigma_w * e[j]
                    + spec.sigma_s * s[j]
                    + spec.shift_noise * shift * corruption[j];
            }
            row[y] += boost;
            softmax_in_place(&mut row);
            probs.extend(row.iter().map(|&v| f64::from(v as f32)));
        }
        PredictionMatrix::new(n, c, probs)
    }

    /// Materialises every matrix.
    pub fn to_tabular(&self) -> Result<TabularBenchmark> {
        let mut bench = TabularBenchmark::new(self.space_id());
        for split in [Split::Val, Split::Test] {
            for sev in 0..=self.spec.max_severity {
                bench.insert_labels(split, sev, self.labels_of(split)?.clone())?;
            }
        }
        for genome in self.genomes()? {
            for seed in 0..self.spec.seeds_per_arch as u64 {
                for split in [Split::Val, Split::Test] {
                    for sev in 0..=self.spec.max_severity {
                        bench.insert(
                            StoreKey::new(&genome, seed, split, sev),
                            self.generate(&genome, seed, split, sev)?,
                        )?;
                    }
                }
            }
        }
        Ok(bench)
    }
}

impl PredictionSource for SyntheticBenchmark {
    fn space_id(&self) -> String {
        self.space.id()
    }

    fn labels(&self, split: Split, severity: u8) -> Result<LabelVector> {
        if severity > self.spec.max_severity {
            return Err(Error::MissingKey(format!("labels for {split}/{severity}")));
        }
        self.labels_of(split).cloned()
    }

    fn predictions(&self, genome: &Genome, seed: u64, split: Split, severity: u8) -> Result<Arc<PredictionMatrix>> {
        self.generate(genome, seed, split, severity).map(Arc::new)
    }

    fn seeds(&self, genome: &Genome) -> Result<Vec<u64>> {
        self.space.validate(genome)?;
        Ok((0..self.spec.seeds_per_arch as u64).collect())
    }

    fn genomes(&self) -> Result<Vec<Genome>> {
        self.space.enumerate().ok_or_else(|| Error::Config("synthetic space too large to enumerate".into()))
    }

    fn severities(&self) -> Vec<u8> {
        (0..=self.spec.max_severity).collect()
    }
}

/// Generates the benchmark described by `spec` into a new store at `root`.
pub fn generate_synthetic_benchmark(spec: &SyntheticSpec, root: &std::path::Path) -> Result<Store> {
    let bench = SyntheticBenchmark::new(spec.clone())?.to_tabular()?;
    let mut store = Store::create(root, &bench.space_id())?;
    bench.save(&mut store)?;
    Ok(store)
}
