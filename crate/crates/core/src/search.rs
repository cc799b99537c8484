//! Pool building (random search, regularized evolution), baselines and the
//! evaluators that turn `(architecture, seed)` jobs into predictions.
//!
//! Search decisions use a dedicated ChaCha stream derived from the run
//! seed; training seeds come from [`job_seed`] by job index. Training jobs
//! are pure, so any worker count gives the same pool in wave mode.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_toy_task, severity_ladder, CorruptionFamily, Split, ToyDataset, ToyTask, ToyTaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{nll, EvalReport, LabelVector, PredictionMatrix};
use crate::rng::{derive_seed, job_seed};
use crate::selection::{
    bma_reweight, forward_select, forward_select_diverse, quick_and_greedy, stacking_select, top_m, BmaScheme,
    Candidate, EnsembleSelection, LearnerId,
};
use crate::space::{mutate_with, Architecture, CellSpace, CellSpaceSpec, Genome, MutationKind, SearchSpace};
use crate::store::{Store, StoreKey};
use crate::tabular::PredictionSource;
use crate::trainer::{train, AnchorConfig, TrainConfig};

/// Severity used for shifted validation during search.
pub const SHIFT_SEVERITY: u8 = 5;

const SEARCH_STREAM: u64 = 0x5EA2C4;

/// Predictions of one network keyed by `(split, severity)`.
pub type LearnerPredictions = BTreeMap<(Split, u8), Arc<PredictionMatrix>>;

/// Turns an `(architecture, seed)` job into predictions on every
/// evaluation split and severity.
pub trait Evaluator: Send + Sync {
    fn space(&self) -> Arc<dyn SearchSpace>;

    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<LearnerPredictions>;

    fn labels(&self, split: Split, severity: u8) -> Result<LabelVector>;

    /// Severities every evaluation covers.
    fn severities(&self) -> Vec<u8>;
}

fn eval_error(arch: &Architecture, seed: u64, e: Error) -> Error {
    match e {
        e @ Error::Evaluation { .. } => e,
        other => Error::Evaluation { genome: arch.key(), seed, reason: other.to_string() },
    }
}

/// Looks predictions up in a pre-evaluated benchmark. A requested seed maps
/// to the stored seed at position `seed % stored_count`.
pub struct TabularEvaluator {
    source: Arc<dyn PredictionSource>,
    space: Arc<dyn SearchSpace>,
    severities: Vec<u8>,
}

impl TabularEvaluator {
    pub fn new(source: Arc<dyn PredictionSource>) -> Result<Self> {
        let space = crate::space::space_from_id(&source.space_id())?;
        let severities = source.severities();
        if !severities.contains(&0) {
            return Err(Error::Dataset("benchmark lacks clean validation/test labels".into()));
        }
        Ok(Self { source, space, severities })
    }

    /// Restricts evaluations to `severities`.
    pub fn with_severities(mut self, severities: &[u8]) -> Result<Self> {
        if let Some(s) = severities.iter().find(|s| !self.severities.contains(s)) {
            return Err(Error::Dataset(format!("benchmark has no severity {s}")));
        }
        self.severities = severities.to_vec();
        self.severities.sort_unstable();
        self.severities.dedup();
        Ok(self)
    }

    pub fn source(&self) -> &Arc<dyn PredictionSource> {
        &self.source
    }

    /// Predictions of a stored seed, without the modulo mapping.
    pub fn evaluate_stored(&self, genome: &Genome, stored_seed: u64) -> Result<LearnerPredictions> {
        let mut out = BTreeMap::new();
        for split in [Split::Val, Split::Test] {
            for &sev in &self.severities {
                out.insert((split, sev), self.source.predictions(genome, stored_seed, split, sev)?);
            }
        }
        Ok(out)
    }
}

impl Evaluator for TabularEvaluator {
    fn space(&self) -> Arc<dyn SearchSpace> {
        Arc::clone(&self.space)
    }

    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<LearnerPredictions> {
        let run = || {
            self.space.validate_arch(arch)?;
            let seeds = self.source.seeds(&arch.genome)?;
            if seeds.is_empty() {
                return Err(Error::MissingKey(format!("no seeds for {arch}")));
            }
            self.evaluate_stored(&arch.genome, seeds[(seed % seeds.len() as u64) as usize])
        };
        run().map_err(|e| eval_error(arch, seed, e))
    }

    fn labels(&self, split: Split, severity: u8) -> Result<LabelVector> {
        self.source.labels(split, severity)
    }

    fn severities(&self) -> Vec<u8> {
        self.severities.clone()
    }
}

/// Trains cell networks on a toy task and predicts on its clean and
/// corrupted evaluation splits.
pub struct ToyEvaluator {
    cell_spec: CellSpaceSpec,
    space: Arc<CellSpace>,
    task: Arc<ToyTask>,
    ladders: Arc<BTreeMap<Split, Vec<ToyDataset>>>,
    config: TrainConfig,
    severities: Vec<u8>,
}

impl ToyEvaluator {
    /// Builds the task and its corruption ladders (seeded by `task_spec.task_seed`).
    pub fn new(
        task_spec: &ToyTaskSpec,
        cell_spec: CellSpaceSpec,
        config: TrainConfig,
        severities: &[u8],
    ) -> Result<Self> {
        config.validate()?;
        let space = Arc::new(CellSpace::new(cell_spec.clone())?);
        let task = make_toy_task(task_spec)?;
        let mut ladders = BTreeMap::new();
        for split in [Split::Val, Split::Test] {
            let family = CorruptionFamily::for_split(split).expect("evaluation split");
            let seed = derive_seed(task_spec.task_seed, &[0xC0, split as u64]);
            ladders.insert(split, severity_ladder(task.split(split), family, seed)?);
        }
        let mut severities = severities.to_vec();
        severities.sort_unstable();
        severities.dedup();
        if severities.iter().any(|&s| s > crate::data::MAX_SEVERITY) || !severities.contains(&0) {
            return Err(Error::Config("severities must lie in 0..=5 and include 0".into()));
        }
        Ok(Self { cell_spec, space, task: Arc::new(task), ladders: Arc::new(ladders), config, severities })
    }

    /// Same task and ladders, different training configuration.
    pub fn with_train_config(&self, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            cell_spec: self.cell_spec.clone(),
            space: Arc::clone(&self.space),
            task: Arc::clone(&self.task),
            ladders: Arc::clone(&self.ladders),
            config,
            severities: self.severities.clone(),
        })
    }

    pub fn task(&self) -> &ToyTask {
        &self.task
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dataset(&self, split: Split, severity: u8) -> &ToyDataset {
        &self.ladders[&split][severity as usize]
    }
}

impl Evaluator for ToyEvaluator {
    fn space(&self) -> Arc<dyn SearchSpace> {
        self.space.clone()
    }

    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<LearnerPredictions> {
        let run = || {
            self.space.validate_arch(arch)?;
            let classes = self.task.spec.num_classes;
            let net = train(&self.cell_spec, &arch.genome, &self.task.train, classes, &self.config, seed)?;
            let mut out = BTreeMap::new();
            for split in [Split::Val, Split::Test] {
                for &sev in &self.severities {
                    out.insert((split, sev), Arc::new(net.predict(self.dataset(split, sev))?));
                }
            }
            Ok(out)
        };
        run().map_err(|e| eval_error(arch, seed, e))
    }

    fn labels(&self, split: Split, severity: u8) -> Result<LabelVector> {
        match split {
            Split::Train => Ok(self.task.train.labels.clone()),
            _ if self.severities.contains(&severity) => Ok(self.dataset(split, severity).labels.clone()),
            _ => Err(Error::MissingKey(format!("labels for {split}/{severity}"))),
        }
    }

    fn severities(&self) -> Vec<u8> {
        self.severities.clone()
    }
}

/// Persists every evaluation into a store and answers repeated jobs from
/// it, so an interrupted search resumes without retraining. Results are
/// always returned as stored (`f32`-rounded), fresh or cached alike.
pub struct CachedEvaluator {
    inner: Arc<dyn Evaluator>,
    store: Mutex<Store>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl CachedEvaluator {
    pub fn new(inner: Arc<dyn Evaluator>, store: Store) -> Result<Self> {
        let space_id = inner.space().id();
        if store.space_id() != space_id {
            return Err(Error::Config(format!("store holds `{}`, search runs `{space_id}`", store.space_id())));
        }
        Ok(Self { inner, store: Mutex::new(store), hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) })
    }

    /// Jobs answered from the store.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// Jobs that had to be evaluated.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn into_store(self) -> Store {
        self.store.into_inner().unwrap_or_else(|p| p.into_inner())
    }

    fn keys(&self, arch: &Architecture, seed: u64) -> Vec<StoreKey> {
        let sevs = self.inner.severities();
        [Split::Val, Split::Test]
            .into_iter()
            .flat_map(|split| sevs.iter().map(move |&sev| StoreKey::new(&arch.genome, seed, split, sev)))
            .collect()
    }

    fn load(store: &Store, keys: &[StoreKey]) -> Result<LearnerPredictions> {
        keys.iter().map(|k| Ok(((k.split, k.severity), Arc::new(store.get(k)?)))).collect()
    }
}

impl Evaluator for CachedEvaluator {
    fn space(&self) -> Arc<dyn SearchSpace> {
        self.inner.space()
    }

    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<LearnerPredictions> {
        let keys = self.keys(arch, seed);
        {
            let store = self.store.lock().expect("store lock");
            if keys.iter().all(|k| store.contains(k)) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Self::load(&store, &keys).map_err(|e| eval_error(arch, seed, e));
            }
        }
        let preds = self.inner.evaluate(arch, seed)?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        let mut store = self.store.lock().expect("store lock");
        for key in &keys {
            if !store.contains(key) {
                let labels = self.inner.labels(key.split, key.severity)?;
                store.put_labels(key.split, key.severity, &labels)?;
                store.put(key.clone(), &preds[&(key.split, key.severity)])?;
            }
        }
        Self::load(&store, &keys)
    }

    fn labels(&self, split: Split, severity: u8) -> Result<LabelVector> {
        self.inner.labels(split, severity)
    }

    fn severities(&self) -> Vec<u8> {
        self.inner.severities()
    }
}

/// One trained network of a pool.
#[derive(Clone, Debug)]
pub struct BaseLearner {
    pub id: LearnerId,
    pub arch: Architecture,
    pub seed: u64,
    pub preds: LearnerPredictions,
}

impl BaseLearner {
    pub fn predictions(&self, split: Split, severity: u8) -> Result<&PredictionMatrix> {
        self.preds
            .get(&(split, severity))
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::MissingKey(format!("{} has no {split}/{severity} predictions", self.id)))
    }
}

/// Every network trained by a run, in completion order. Ids are positions.
#[derive(Clone, Debug, Default)]
pub struct Pool {
    learners: Vec<BaseLearner>,
}

impl Pool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, arch: Architecture, seed: u64, preds: LearnerPredictions) -> LearnerId {
        let id = LearnerId(self.learners.len());
        self.learners.push(BaseLearner { id, arch, seed, preds });
        id
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    pub fn learners(&self) -> &[BaseLearner] {
        &self.learners
    }

    pub fn get(&self, id: LearnerId) -> Result<&BaseLearner> {
        self.learners.get(id.0).ok_or_else(|| Error::MissingKey(format!("learner {id}")))
    }

    /// The first `k` learners.
    pub fn prefix(&self, k: usize) -> Pool {
        Pool { learners: self.learners[..k.min(self.len())].to_vec() }
    }

    pub fn candidates(&self, split: Split, severity: u8) -> Result<Vec<Candidate<'_>>> {
        self.learners.iter().map(|l| Ok((l.id, l.predictions(split, severity)?))).collect()
    }

    pub fn candidates_of(&self, ids: &[LearnerId], split: Split, severity: u8) -> Result<Vec<Candidate<'_>>> {
        ids.iter().map(|&id| Ok((id, self.get(id)?.predictions(split, severity)?))).collect()
    }

    /// Metrics of `selection` on `(split, severity)`.
    pub fn evaluate(
        &self,
        selection: &EnsembleSelection,
        split: Split,
        severity: u8,
        labels: &LabelVector,
    ) -> Result<EvalReport> {
        let members = selection.resolve(&self.candidates(split, severity)?)?;
        EvalReport::compute(&members, selection.weights(), labels)
    }
}

/// Fixed-capacity FIFO of learner ids.
#[derive(Clone, Debug)]
pub struct Population {
    capacity: usize,
    members: VecDeque<LearnerId>,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, members: VecDeque::with_capacity(capacity) }
    }

    /// Appends `id`, evicting and returning the oldest member when full.
    pub fn push(&mut self, id: LearnerId) -> Option<LearnerId> {
        let evicted = (self.members.len() == self.capacity).then(|| self.members.pop_front()).flatten();
        self.members.push_back(id);
        evicted
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Members, oldest first.
    pub fn members(&self) -> Vec<LearnerId> {
        self.members.iter().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchBudget {
    /// Networks trained.
    pub k: usize,
    /// Ensemble size.
    pub m: usize,
    /// Population size.
    pub population: usize,
    /// Parent candidates selected per evolution step.
    pub parents: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { k: 200, m: 10, population: 50, parents: 10 }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        let ok = self.m >= 1
            && self.k >= self.m
            && self.population >= 1
            && self.population <= self.k
            && self.parents >= 1
            && self.parents <= self.population;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("budget needs 1 <= M <= K, 1 <= P <= K and 1 <= m <= P; got {self:?}")))
        }
    }
}

/// Validation data used to pick parents during evolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeverityMix {
    #[default]
    Clean,
    Shifted,
    /// Clean or shifted with probability one half each, per step.
    Alternating,
}

impl SeverityMix {
    fn draw(self, rng: &mut ChaCha8Rng) -> u8 {
        match self {
            SeverityMix::Clean => 0,
            SeverityMix::Shifted => SHIFT_SEVERITY,
            SeverityMix::Alternating => {
                if rng.random_bool(0.5) {
                    SHIFT_SEVERITY
                } else {
                    0
                }
            }
        }
    }
}

/// How training jobs are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Dispatch {
    /// Deterministic: children of a wave are generated from one population
    /// snapshot, trained in parallel and merged in job order. A wave size of
    /// 1 is the sequential algorithm.
    Waves { wave_size: usize },
    /// Master–worker: each finished job immediately yields a new one from
    /// the current population. Nondeterministic when `workers > 1`.
    Async,
}

impl Default for Dispatch {
    fn default() -> Self {
        Dispatch::Waves { wave_size: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub workers: usize,
    pub dispatch: Dispatch,
    pub severity_mix: SeverityMix,
    /// Overrides the space's mutation kinds.
    pub mutation_kinds: Option<Vec<MutationKind>>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { workers: 1, dispatch: Dispatch::default(), severity_mix: SeverityMix::Clean, mutation_kinds: None }
    }
}

impl SearchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || matches!(self.dispatch, Dispatch::Waves { wave_size: 0 }) {
            return Err(Error::Config("workers and wave size must be >= 1".into()));
        }
        if self.mutation_kinds.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("mutation_kinds must not be empty".into()));
        }
        Ok(())
    }
}

/// Ensemble selection algorithm applied to a pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "variant")]
pub enum Esa {
    #[default]
    Forward,
    ForwardWithReplacement,
    TopM,
    QuickAndGreedy,
    Stacking {
        #[serde(default)]
        weighted: bool,
    },
    /// Forward selection, then likelihood-proportional weights.
    BmaLikelihood,
    /// Forward selection, then accuracy-proportional weights.
    BmaAccuracy,
    Diverse {
        lambda: f64,
    },
}

impl Esa {
    pub fn select(self, candidates: &[Candidate<'_>], labels: &LabelVector, m: usize) -> Result<EnsembleSelection> {
        match self {
            Esa::Forward => forward_select(candidates, labels, m, false),
            Esa::ForwardWithReplacement => forward_select(candidates, labels, m, true),
            Esa::TopM => top_m(candidates, labels, m),
            Esa::QuickAndGreedy => quick_and_greedy(candidates, labels, m),
            Esa::Stacking { weighted } => stacking_select(candidates, labels, m, weighted),
            Esa::BmaLikelihood | Esa::BmaAccuracy => {
                let scheme = if self == Esa::BmaLikelihood { BmaScheme::Likelihood } else { BmaScheme::Accuracy };
                bma_reweight(&forward_select(candidates, labels, m, false)?, candidates, labels, scheme)
            }
            Esa::Diverse { lambda } => forward_select_diverse(candidates, labels, m, lambda),
        }
    }
}

/// Pool built by a search, plus what it cost.
#[derive(Clone, Debug)]
pub struct SearchRun {
    pub pool: Pool,
    /// Evaluator calls made.
    pub nets_trained: usize,
}

impl SearchRun {
    /// Selects `m` members on validation data at `severity`.
    pub fn select(&self, evaluator: &dyn Evaluator, esa: Esa, m: usize, severity: u8) -> Result<EnsembleSelection> {
        select_on_validation(&self.pool, evaluator, esa, m, severity)
    }
}

/// Applies `esa` to the whole pool on validation data at `severity`.
pub fn select_on_validation(
    pool: &Pool,
    evaluator: &dyn Evaluator,
    esa: Esa,
    m: usize,
    severity: u8,
) -> Result<EnsembleSelection> {
    let labels = evaluator.labels(Split::Val, severity)?;
    esa.select(&pool.candidates(Split::Val, severity)?, &labels, m)
}

fn search_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SEARCH_STREAM]))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Evaluates jobs on `workers` threads; results come back in job order.
fn run_jobs(
    evaluator: &dyn Evaluator,
    jobs: &[(Architecture, u64)],
    workers: &rayon::ThreadPool,
) -> Result<Vec<LearnerPredictions>> {
    if workers.current_num_threads() <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(|(a, s)| evaluator.evaluate(a, *s).map_err(|e| eval_error(a, *s, e))).collect();
    }
    workers
        .install(|| jobs.par_iter().map(|(a, s)| evaluator.evaluate(a, *s).map_err(|e| eval_error(a, *s, e))).collect())
}

/// Random search: `K` architectures sampled uniformly with replacement,
/// one network each.
pub fn nes_rs(evaluator: &dyn Evaluator, budget: &SearchBudget, seed: u64, opts: &SearchOptions) -> Result<SearchRun> {
    budget.validate()?;
    opts.validate()?;
    let space = evaluator.space();
    let mut rng = search_rng(seed);
    let jobs: Vec<(Architecture, u64)> =
        (0..budget.k).map(|i| (space.sample(&mut rng), job_seed(seed, i as u64))).collect();
    let preds = run_jobs(evaluator, &jobs, &thread_pool(opts.workers)?)?;
    let mut pool = Pool::new();
    for ((arch, s), p) in jobs.into_iter().zip(preds) {
        pool.push(arch, s, p);
    }
    Ok(SearchRun { pool, nets_trained: budget.k })
}

struct Evolution<'a> {
    evaluator: &'a dyn Evaluator,
    space: Arc<dyn SearchSpace>,
    kinds: Vec<MutationKind>,
    budget: &'a SearchBudget,
    mix: SeverityMix,
    seed: u64,
    rng: ChaCha8Rng,
    pool: Pool,
    population: Population,
    labels: BTreeMap<u8, LabelVector>,
    issued: usize,
}

impl Evolution<'_> {
    fn next_job(&mut self) -> Result<(Architecture, u64)> {
        let arch = if self.issued < self.budget.population || self.population.is_empty() {
            self.space.sample(&mut self.rng)
        } else {
            let severity = self.mix.draw(&mut self.rng);
            if !self.labels.contains_key(&severity) {
                self.labels.insert(severity, self.evaluator.labels(Split::Val, severity)?);
            }
            let ids = self.population.members();
            let m = self.budget.parents.min(ids.len());
            let cands = self.pool.candidates_of(&ids, Split::Val, severity)?;
            let parents = forward_select(&cands, &self.labels[&severity], m, false)?;
            let parent = parents.member_ids()[self.rng.random_range(0..m)];
            let parent_arch = self.pool.get(parent)?.arch.clone();
            mutate_with(self.space.as_ref(), &parent_arch, &self.kinds, &mut self.rng).0
        };
        let job = (arch, job_seed(self.seed, self.issued as u64));
        self.issued += 1;
        Ok(job)
    }

    fn complete(&mut self, arch: Architecture, seed: u64, preds: LearnerPredictions) {
        let id = self.pool.push(arch, seed, preds);
        self.population.push(id);
    }
}

/// Regularized evolution over a FIFO population of size `P`; parents are
/// drawn uniformly from the `m` members forward selection picks from the
/// population.
pub fn nes_re(evaluator: &dyn Evaluator, budget: &SearchBudget, seed: u64, opts: &SearchOptions) -> Result<SearchRun> {
    budget.validate()?;
    opts.validate()?;
    if opts.severity_mix != SeverityMix::Clean && !evaluator.severities().contains(&SHIFT_SEVERITY) {
        return Err(Error::Config(format!("severity mix {:?} needs severity {SHIFT_SEVERITY}", opts.severity_mix)));
    }
    let space = evaluator.space();
    let kinds = opts.mutation_kinds.clone().unwrap_or_else(|| space.mutation_kinds().to_vec());
    let mut evo = Evolution {
        evaluator,
        space,
        kinds,
        budget,
        mix: opts.severity_mix,
        seed,
        rng: search_rng(seed),
        pool: Pool::new(),
        population: Population::new(budget.population),
        labels: BTreeMap::new(),
        issued: 0,
    };
    match opts.dispatch {
        Dispatch::Waves { wave_size } => {
            let workers = thread_pool(opts.workers)?;
            // the initial population forms one wave
            let initial: Vec<_> = (0..budget.population).map(|_| evo.next_job()).collect::<Result<_>>()?;
            for ((a, s), p) in initial.clone().into_iter().zip(run_jobs(evaluator, &initial, &workers)?) {
                evo.complete(a, s, p);
            }
            while evo.issued < budget.k {
                let n = wave_size.min(budget.k - evo.issued);
                let wave: Vec<_> = (0..n).map(|_| evo.next_job()).collect::<Result<_>>()?;
                for ((a, s), p) in wave.clone().into_iter().zip(run_jobs(evaluator, &wave, &workers)?) {
                    evo.complete(a, s, p);
                }
            }
        }
        Dispatch::Async => run_async(&mut evo, opts.workers)?,
    }
    Ok(SearchRun { pool: evo.pool, nets_trained: budget.k })
}

type JobResult = (Architecture, u64, Result<LearnerPredictions>);

fn run_async(evo: &mut Evolution<'_>, workers: usize) -> Result<()> {
    let evaluator = evo.evaluator;
    let k = evo.budget.k;
    std::thread::scope(|scope| -> Result<()> {
        let (job_tx, job_rx) = mpsc::channel::<Option<(Architecture, u64)>>();
        let (res_tx, res_rx) = mpsc::channel::<JobResult>();
        let job_rx = Arc::new(Mutex::new(job_rx));
        for _ in 0..workers {
            let rx = Arc::clone(&job_rx);
            let tx = res_tx.clone();
            scope.spawn(move || loop {
                let job = rx.lock().expect("job queue").recv();
                match job {
                    Ok(Some((arch, seed))) => {
                        let out = evaluator.evaluate(&arch, seed).map_err(|e| eval_error(&arch, seed, e));
                        if tx.send((arch, seed, out)).is_err() {
                            break;
                        }
                    }
                    _ => break,
                }
            });
        }
        drop(res_tx);
        let mut in_flight = 0;
        let mut failure = None;
        let shutdown = |tx: &mpsc::Sender<Option<(Architecture, u64)>>| {
            for _ in 0..workers {
                let _ = tx.send(None);
            }
        };
        while in_flight < workers && evo.issued < k {
            let job = evo.next_job()?;
            job_tx.send(Some(job)).expect("workers alive");
            in_flight += 1;
        }
        while in_flight > 0 {
            let (arch, seed, out) = res_rx.recv().expect("workers alive");
            in_flight -= 1;
            match out {
                Ok(p) if failure.is_none() => evo.complete(arch, seed, p),
                Ok(_) => {}
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
            if failure.is_none() && evo.issued < k {
                match evo.next_job() {
                    Ok(job) => {
                        job_tx.send(Some(job)).expect("workers alive");
                        in_flight += 1;
                    }
                    Err(e) => failure = Some(e),
                }
            }
        }
        shutdown(&job_tx);
        failure.map_or(Ok(()), Err)
    })
}

/// A baseline's pool together with its fixed or selected ensemble.
#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub pool: Pool,
    pub selection: EnsembleSelection,
    pub nets_trained: usize,
}

fn train_seeds(
    evaluator: &dyn Evaluator,
    arch: &Architecture,
    seeds: impl Iterator<Item = u64>,
    workers: usize,
) -> Result<Pool> {
    let jobs: Vec<_> = seeds.map(|s| (arch.clone(), s)).collect();
    let preds = run_jobs(evaluator, &jobs, &thread_pool(workers)?)?;
    let mut pool = Pool::new();
    for ((a, s), p) in jobs.into_iter().zip(preds) {
        pool.push(a, s, p);
    }
    Ok(pool)
}

/// `M` seeds of one architecture, uniformly averaged.
pub fn deep_ens_fixed(
    evaluator: &dyn Evaluator,
    arch: &Architecture,
    m: usize,
    seed: u64,
    workers: usize,
) -> Result<BaselineRun> {
    if m == 0 {
        return Err(Error::Config("ensemble size must be >= 1".into()));
    }
    evaluator.space().validate_arch(arch)?;
    let pool = train_seeds(evaluator, arch, (0..m as u64).map(|i| job_seed(seed, i)), workers)?;
    let selection = EnsembleSelection::uniform((0..m).map(LearnerId).collect())?;
    Ok(BaselineRun { pool, selection, nets_trained: m })
}

/// `K` seeds of one architecture, then forward selection of `M`.
pub fn deep_ens_plus_es(
    evaluator: &dyn Evaluator,
    arch: &Architecture,
    k: usize,
    m: usize,
    severity: u8,
    seed: u64,
    workers: usize,
) -> Result<BaselineRun> {
    if m == 0 || k < m {
        return Err(Error::PoolTooSmall { pool: k, requested: m });
    }
    evaluator.space().validate_arch(arch)?;
    let pool = train_seeds(evaluator, arch, (0..k as u64).map(|i| job_seed(seed, i)), workers)?;
    let selection = select_on_validation(&pool, evaluator, Esa::Forward, m, severity)?;
    Ok(BaselineRun { pool, selection, nets_trained: k })
}

/// Learner with the lowest validation NLL (smallest id on ties).
fn best_learner<'a>(pool: &'a Pool, labels: &LabelVector, severity: u8) -> Result<&'a BaseLearner> {
    let mut best: Option<(f64, &BaseLearner)> = None;
    for l in pool.learners() {
        let v = nll(l.predictions(Split::Val, severity)?, labels)?;
        if best.is_none_or(|(b, _)| v < b) {
            best = Some((v, l));
        }
    }
    best.map(|b| b.1).ok_or(Error::Empty("pool"))
}

/// Random search over `K` single networks; the best by validation NLL at
/// `severity` is retrained with `M` fresh seeds.
pub fn deep_ens_rs(
    evaluator: &dyn Evaluator,
    k: usize,
    m: usize,
    severity: u8,
    seed: u64,
    workers: usize,
) -> Result<(BaselineRun, Architecture)> {
    if m == 0 {
        return Err(Error::Config("ensemble size must be >= 1".into()));
    }
    let budget = SearchBudget { k, m: 1, population: 1, parents: 1 };
    let search = nes_rs(evaluator, &budget, seed, &SearchOptions { workers, ..Default::default() })?;
    let labels = evaluator.labels(Split::Val, severity)?;
    let arch = best_learner(&search.pool, &labels, severity)?.arch.clone();
    let pool = train_seeds(evaluator, &arch, (0..m as u64).map(|i| job_seed(seed, (k + i as usize) as u64)), workers)?;
    let selection = EnsembleSelection::uniform((0..m).map(LearnerId).collect())?;
    Ok((BaselineRun { pool, selection, nets_trained: k + m }, arch))
}

/// Scans every architecture of a tabular benchmark by the validation NLL of
/// its first stored seed and ensembles the winner's first `M` stored seeds.
pub fn deep_ens_best_arch(evaluator: &TabularEvaluator, m: usize, severity: u8) -> Result<(BaselineRun, Architecture)> {
    if m == 0 {
        return Err(Error::Config("ensemble size must be >= 1".into()));
    }
    let source = evaluator.source();
    let labels = source.labels(Split::Val, severity)?;
    let genomes = source.genomes()?;
    let scores: Vec<Result<f64>> = genomes
        .par_iter()
        .map(|g| {
            let first = *source.seeds(g)?.first().ok_or_else(|| Error::MissingKey(format!("seeds of {g}")))?;
            nll(&*source.predictions(g, first, Split::Val, severity)?, &labels)
        })
        .collect();
    let mut best: Option<(f64, &Genome)> = None;
    for (g, s) in genomes.iter().zip(scores) {
        let s = s?;
        if best.is_none_or(|(b, _)| s < b) {
            best = Some((s, g));
        }
    }
    let genome = best.ok_or(Error::Empty("benchmark"))?.1.clone();
    let seeds = source.seeds(&genome)?;
    if seeds.len() < m {
        return Err(Error::Dataset(format!("{genome} has {} stored seeds, {m} needed", seeds.len())));
    }
    let arch = Architecture::new(evaluator.space().id(), genome);
    let mut pool = Pool::new();
    for &s in &seeds[..m] {
        pool.push(arch.clone(), s, evaluator.evaluate_stored(&arch.genome, s)?);
    }
    let selection = EnsembleSelection::uniform((0..m).map(LearnerId).collect())?;
    Ok((BaselineRun { pool, selection, nets_trained: genomes.len() + m - 1 }, arch))
}

/// Deep ensemble of anchored networks (weight decay off, pull toward a
/// per-seed anchor sample).
pub fn anchored_ensemble(
    evaluator: &ToyEvaluator,
    arch: &Architecture,
    m: usize,
    anchor: AnchorConfig,
    seed: u64,
    workers: usize,
) -> Result<BaselineRun> {
    let config = TrainConfig { anchored: Some(anchor), ..evaluator.train_config().clone() };
    deep_ens_fixed(&evaluator.with_train_config(config)?, arch, m, seed, workers)
}

/// Validation NLL of the ensemble selected from each pool prefix of size
/// `k` in `ks`.
pub fn k_curve(
    pool: &Pool,
    evaluator: &dyn Evaluator,
    esa: Esa,
    m: usize,
    severity: u8,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let labels = evaluator.labels(Split::Val, severity)?;
    ks.iter()
        .map(|&k| {
            let prefix = pool.prefix(k);
            let sel = esa.select(&prefix.candidates(Split::Val, severity)?, &labels, m)?;
            Ok((k, prefix.evaluate(&sel, Split::Val, severity, &labels)?.nll))
        })
        .collect()
}

/// Method names accepted in configs and CSV output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "nes-rs")]
    NesRs,
    #[serde(rename = "nes-re")]
    NesRe,
    #[serde(rename = "deepens-fixed")]
    DeepEnsFixed,
    #[serde(rename = "deepens-rs")]
    DeepEnsRs,
    #[serde(rename = "deepens-best")]
    DeepEnsBest,
    #[serde(rename = "deepens+es")]
    DeepEnsPlusEs,
    #[serde(rename = "anchored")]
    Anchored,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::NesRs,
        Method::NesRe,
        Method::DeepEnsFixed,
        Method::DeepEnsRs,
        Method::DeepEnsBest,
        Method::DeepEnsPlusEs,
        Method::Anchored,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NesRs => "nes-rs",
            Method::NesRe => "nes-re",
            Method::DeepEnsFixed => "deepens-fixed",
            Method::DeepEnsRs => "deepens-rs",
            Method::DeepEnsBest => "deepens-best",
            Method::DeepEnsPlusEs => "deepens+es",
            Method::Anchored => "anchored",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}
