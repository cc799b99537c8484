//! Config-driven experiment runner and result summaries.
//!
//! A run writes `results.csv` (one row per seed, ensemble size and
//! severity) and a resolved `config.toml` into its output directory. Toy
//! runs also keep a prediction store per seed under `pools/`, which lets an
//! interrupted run resume without retraining.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Split, ToyTaskSpec};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::search::{
    deep_ens_best_arch, deep_ens_fixed, deep_ens_plus_es, deep_ens_rs, nes_re, nes_rs, select_on_validation,
    BaselineRun, CachedEvaluator, Esa, Evaluator, Method, Pool, SearchBudget, SearchOptions, SeverityMix,
    TabularEvaluator, ToyEvaluator, SHIFT_SEVERITY,
};
use crate::selection::EnsembleSelection;
use crate::space::{Architecture, CellSpaceSpec};
use crate::store::Store;
use crate::synthetic::{SyntheticBenchmark, SyntheticSpec};
use crate::tabular::{PredictionSource, TabularBenchmark};
use crate::trainer::{AnchorConfig, TrainConfig};

pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// Where base-learner predictions come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Generated on the fly; with `regenerate_per_seed` each run seed uses
    /// its own benchmark (`gen_seed = seed`).
    Synthetic {
        #[serde(default)]
        spec: SyntheticSpec,
        #[serde(default)]
        regenerate_per_seed: bool,
    },
    /// A prediction store on disk.
    Store { path: PathBuf },
    /// Networks trained on a toy task.
    Toy {
        #[serde(default)]
        task: ToyTaskSpec,
        #[serde(default)]
        cell: CellSpaceSpec,
        #[serde(default)]
        train: TrainConfig,
    },
}

impl SourceConfig {
    fn is_tabular(&self) -> bool {
        !matches!(self, SourceConfig::Toy { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub ensemble_sizes: Vec<usize>,
    #[serde(default = "default_severities")]
    pub severities: Vec<u8>,
    pub output_dir: PathBuf,
    /// Fixed architecture (canonical genome text) for the fixed-architecture baselines.
    #[serde(default)]
    pub arch: Option<String>,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub esa: Esa,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub anchor: AnchorConfig,
    /// Write measured wall time; off gives byte-identical reruns.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    pub source: SourceConfig,
}

fn default_severities() -> Vec<u8> {
    vec![0]
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub k: usize,
    pub population: usize,
    pub parents: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let b = SearchBudget::default();
        Self { k: b.k, population: b.population, parents: b.parents }
    }
}

impl ExperimentConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.output_dir);
        if let SourceConfig::Store { path } = &mut config.source {
            resolve(path);
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    fn max_m(&self) -> usize {
        self.ensemble_sizes.iter().copied().max().unwrap_or(0)
    }

    fn budget(&self) -> SearchBudget {
        SearchBudget {
            k: self.budget.k,
            m: self.max_m(),
            population: self.budget.population.min(self.budget.k),
            parents: self.budget.parents.min(self.budget.population).min(self.budget.k),
        }
    }

    fn uses_budget(&self) -> bool {
        matches!(self.method, Method::NesRs | Method::NesRe | Method::DeepEnsRs | Method::DeepEnsPlusEs)
    }

    /// Severities the evaluator must cover.
    fn needed_severities(&self) -> Vec<u8> {
        let mut s: BTreeSet<u8> = self.severities.iter().copied().collect();
        s.insert(0);
        if self.method == Method::NesRe && self.search.severity_mix != SeverityMix::Clean {
            s.insert(SHIFT_SEVERITY);
        }
        s.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("`seeds` must not be empty".into());
        }
        if self.ensemble_sizes.is_empty() || self.ensemble_sizes.contains(&0) {
            return bad("`ensemble_sizes` must be non-empty and positive".into());
        }
        if self.severities.is_empty() || self.severities.iter().any(|&s| s > crate::data::MAX_SEVERITY) {
            return bad("`severities` must be non-empty and within 0..=5".into());
        }
        if self.uses_budget() {
            if self.budget.k < self.max_m() {
                return Err(Error::PoolTooSmall { pool: self.budget.k, requested: self.max_m() });
            }
            if self.method == Method::NesRe {
                SearchBudget { population: self.budget.population, parents: self.budget.parents, ..self.budget() }
                    .validate()?;
            }
        }
        self.search.validate()?;
        let needs_arch = matches!(self.method, Method::DeepEnsFixed | Method::DeepEnsPlusEs | Method::Anchored);
        if needs_arch && self.arch.is_none() {
            return bad(format!("method {} needs `arch`", self.method));
        }
        if self.method == Method::DeepEnsBest && !self.source.is_tabular() {
            return bad("deepens-best needs a tabular source (synthetic or store)".into());
        }
        if self.method == Method::Anchored && self.source.is_tabular() {
            return bad("anchored ensembles need the toy source".into());
        }
        if let Esa::Diverse { lambda } = self.esa {
            if !(lambda >= 0.0) {
                return bad("diversity strength must be >= 0".into());
            }
        }
        match &self.source {
            SourceConfig::Synthetic { spec, .. } => spec.validate(),
            SourceConfig::Store { path } if !path.join("MANIFEST").exists() => {
                bad(format!("no store at {}", path.display()))
            }
            SourceConfig::Store { .. } => Ok(()),
            SourceConfig::Toy { task, cell, train } => {
                cell.validate()?;
                train.validate()?;
                if task.num_classes < 2 || task.dim < 2 {
                    return bad("toy task needs >= 2 classes and >= 2 features".into());
                }
                Ok(())
            }
        }
    }
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub method: String,
    pub space: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub severity: u8,
    pub nll: f64,
    pub error: f64,
    pub ece: f64,
    pub oracle_nll: f64,
    pub avg_bsl_nll: f64,
    pub pred_disagreement: f64,
    pub nets_trained: usize,
    pub wall_seconds: f64,
}

/// Column order of `results.csv`.
pub const CSV_COLUMNS: [&str; 14] = [
    "seed",
    "method",
    "space",
    "K",
    "M",
    "severity",
    "nll",
    "error",
    "ece",
    "oracle_nll",
    "avg_bsl_nll",
    "pred_disagreement",
    "nets_trained",
    "wall_seconds",
];

/// Result of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub rows: Vec<ResultRow>,
}

enum Built {
    Tabular(Arc<TabularEvaluator>),
    Toy(Arc<CachedEvaluator>),
}

impl Built {
    fn evaluator(&self) -> &dyn Evaluator {
        match self {
            Built::Tabular(t) => t.as_ref(),
            Built::Toy(cached) => cached.as_ref(),
        }
    }
}

struct Runner<'a> {
    config: &'a ExperimentConfig,
    stored: Option<Arc<TabularBenchmark>>,
}

impl Runner<'_> {
    fn build(&self, seed: u64) -> Result<Built> {
        let sevs = self.config.needed_severities();
        let tabular = |source: Arc<dyn PredictionSource>| -> Result<Built> {
            Ok(Built::Tabular(Arc::new(TabularEvaluator::new(source)?.with_severities(&sevs)?)))
        };
        match &self.config.source {
            SourceConfig::Synthetic { spec, regenerate_per_seed } => {
                let spec =
                    SyntheticSpec { gen_seed: if *regenerate_per_seed { seed } else { spec.gen_seed }, ..spec.clone() };
                tabular(Arc::new(SyntheticBenchmark::new(spec)?))
            }
            SourceConfig::Store { .. } => {
                tabular(self.stored.clone().expect("store loaded") as Arc<dyn PredictionSource>)
            }
            SourceConfig::Toy { task, cell, train } => {
                let base = Arc::new(ToyEvaluator::new(task, cell.clone(), train.clone(), &sevs)?);
                let space_id = base.space().id();
                let dir =
                    self.config.output_dir.join("pools").join(format!("seed-{seed}")).join(self.config.method.as_str());
                let store = Store::open_or_create(&dir, &space_id)?;
                let inner: Arc<dyn Evaluator> = match self.config.method {
                    Method::Anchored => Arc::new(base.with_train_config(TrainConfig {
                        anchored: Some(self.config.anchor.clone()),
                        ..train.clone()
                    })?),
                    _ => base.clone(),
                };
                Ok(Built::Toy(Arc::new(CachedEvaluator::new(inner, store)?)))
            }
        }
    }

    fn arch(&self, ev: &dyn Evaluator) -> Result<Architecture> {
        let text = self.config.arch.as_deref().ok_or_else(|| Error::Config("`arch` missing".into()))?;
        let space = ev.space();
        let arch = Architecture::new(space.id(), text.parse()?);
        space.validate_arch(&arch).map_err(|e| Error::Config(format!("`arch`: {e}")))?;
        Ok(arch)
    }

    fn run_seed(&self, seed: u64) -> Result<Vec<ResultRow>> {
        let cfg = self.config;
        let built = self.build(seed)?;
        let ev = built.evaluator();
        let space = ev.space().id();
        let workers = cfg.search.workers;
        let start = Instant::now();
        let max_m = cfg.max_m();
        // (val severity, M) -> (pool, selection, nets trained, K)
        let mut cells: Vec<(u8, usize, Arc<Pool>, EnsembleSelection, usize, usize)> = Vec::new();
        let first = |run: &BaselineRun, m: usize| -> Result<EnsembleSelection> {
            let ids = run.selection.member_ids()[..m.min(run.selection.len())].to_vec();
            EnsembleSelection::uniform(ids)
        };
        match cfg.method {
            Method::NesRs | Method::NesRe => {
                let budget = cfg.budget();
                let search = if cfg.method == Method::NesRs {
                    nes_rs(ev, &budget, seed, &cfg.search)?
                } else {
                    nes_re(ev, &budget, seed, &cfg.search)?
                };
                let pool = Arc::new(search.pool);
                for &sev in &cfg.severities {
                    for &m in &cfg.ensemble_sizes {
                        let sel = select_on_validation(&pool, ev, cfg.esa, m, sev)?;
                        cells.push((sev, m, pool.clone(), sel, search.nets_trained, budget.k));
                    }
                }
            }
            Method::DeepEnsFixed | Method::Anchored => {
                let arch = self.arch(ev)?;
                // For anchored runs the evaluator already trains with the anchor term.
                let run = deep_ens_fixed(ev, &arch, max_m, seed, workers)?;
                let pool = Arc::new(run.pool.clone());
                for &sev in &cfg.severities {
                    for &m in &cfg.ensemble_sizes {
                        cells.push((sev, m, pool.clone(), first(&run, m)?, m, m));
                    }
                }
            }
            Method::DeepEnsPlusEs => {
                let arch = self.arch(ev)?;
                let run = deep_ens_plus_es(ev, &arch, cfg.budget.k, max_m, 0, seed, workers)?;
                let pool = Arc::new(run.pool);
                for &sev in &cfg.severities {
                    for &m in &cfg.ensemble_sizes {
                        let sel = select_on_validation(&pool, ev, cfg.esa, m, sev)?;
                        cells.push((sev, m, pool.clone(), sel, cfg.budget.k, cfg.budget.k));
                    }
                }
            }
            Method::DeepEnsRs => {
                for &sev in &cfg.severities {
                    let (run, _) = deep_ens_rs(ev, cfg.budget.k, max_m, sev, seed, workers)?;
                    let pool = Arc::new(run.pool.clone());
                    for &m in &cfg.ensemble_sizes {
                        cells.push((sev, m, pool.clone(), first(&run, m)?, cfg.budget.k + m, cfg.budget.k));
                    }
                }
            }
            Method::DeepEnsBest => {
                let Built::Tabular(tab) = &built else {
                    return Err(Error::Config("deepens-best needs a tabular source".into()));
                };
                for &sev in &cfg.severities {
                    let (run, _) = deep_ens_best_arch(tab, max_m, sev)?;
                    let pool = Arc::new(run.pool.clone());
                    let scanned = run.nets_trained + 1 - max_m;
                    for &m in &cfg.ensemble_sizes {
                        cells.push((sev, m, pool.clone(), first(&run, m)?, scanned + m - 1, scanned));
                    }
                }
            }
        }
        let wall = if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
        let mut rows = Vec::with_capacity(cells.len());
        for (val_sev, m, pool, sel, nets, k) in cells {
            // selection and evaluation use the same severity
            let test_sev = val_sev;
            let labels = ev.labels(Split::Test, test_sev)?;
            let r: EvalReport = pool.evaluate(&sel, Split::Test, test_sev, &labels)?;
            rows.push(ResultRow {
                seed,
                method: cfg.method.to_string(),
                space: space.clone(),
                k,
                m,
                severity: test_sev,
                nll: r.nll,
                error: r.error,
                ece: r.ece,
                oracle_nll: r.oracle_nll,
                avg_bsl_nll: r.avg_bsl_nll,
                pred_disagreement: r.pred_disagreement,
                nets_trained: nets,
                wall_seconds: wall,
            });
        }
        Ok(rows)
    }
}

/// Runs every seed of `config` and writes `results.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml()).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
    let stored = match &config.source {
        SourceConfig::Store { path } => Some(Arc::new(TabularBenchmark::load(&Store::open(path)?)?)),
        _ => None,
    };
    let runner = Runner { config, stored };
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        log::info!("{}: seed {seed}", config.method);
        rows.extend(runner.run_seed(seed)?);
    }
    write_rows(&dir.join(RESULTS_FILE), &rows)?;
    Ok(RunOutput { dir, rows })
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers != CSV_COLUMNS {
        return Err(Error::Format(format!("{}: unexpected columns {headers:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean and 95% normal-approximation half-width across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci: f64,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Self { mean, ci: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, ci: 1.96 * (var / n).sqrt() }
    }
}

pub const METRICS: [&str; 6] = ["nll", "error", "ece", "oracle_nll", "avg_bsl_nll", "pred_disagreement"];

fn metric(row: &ResultRow, name: &str) -> f64 {
    match name {
        "nll" => row.nll,
        "error" => row.error,
        "ece" => row.ece,
        "oracle_nll" => row.oracle_nll,
        "avg_bsl_nll" => row.avg_bsl_nll,
        "pred_disagreement" => row.pred_disagreement,
        _ => unreachable!("unknown metric {name}"),
    }
}

/// Aggregated cell of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryCell {
    pub method: String,
    pub space: String,
    pub k: usize,
    pub m: usize,
    pub severity: u8,
    pub seeds: usize,
    pub metrics: BTreeMap<&'static str, MeanCi>,
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub cells: Vec<SummaryCell>,
    pub files: Vec<PathBuf>,
}

/// Aggregates rows per `(method, space, K, M, severity)`.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryCell> {
    let mut groups: BTreeMap<(String, String, usize, usize, u8), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.space.clone(), r.k, r.m, r.severity)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, space, k, m, severity), rs)| SummaryCell {
            method,
            space,
            k,
            m,
            severity,
            seeds: rs.len(),
            metrics: METRICS
                .iter()
                .map(|&name| (name, MeanCi::of(&rs.iter().map(|r| metric(r, name)).collect::<Vec<_>>())))
                .collect(),
        })
        .collect()
}

/// Reads the runs in `run_dirs`, writes `summary.csv`, plot series and SVG
/// charts into `out_dir`.
pub fn summarize(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Summary> {
    if run_dirs.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    let mut rows = Vec::new();
    let mut grid: Option<(BTreeSet<usize>, BTreeSet<u8>, PathBuf)> = None;
    for dir in run_dirs {
        let run = read_rows(&dir.join(RESULTS_FILE))?;
        if run.is_empty() {
            return Err(Error::Dataset(format!("{} has no result rows", dir.display())));
        }
        let ms: BTreeSet<usize> = run.iter().map(|r| r.m).collect();
        let sevs: BTreeSet<u8> = run.iter().map(|r| r.severity).collect();
        match &grid {
            None => grid = Some((ms, sevs, dir.clone())),
            Some((m0, s0, d0)) if *m0 != ms || *s0 != sevs => {
                return Err(Error::Config(format!(
                    "grid of {} (M {ms:?}, severities {sevs:?}) differs from {} (M {m0:?}, severities {s0:?})",
                    dir.display(),
                    d0.display()
                )))
            }
            Some(_) => {}
        }
        rows.extend(run);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cells = aggregate(&rows);
    let mut files = Vec::new();

    let path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header =
        vec!["method".to_string(), "space".into(), "K".into(), "M".into(), "severity".into(), "seeds".into()];
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_ci95"));
    }
    w.write_record(&header)?;
    for c in &cells {
        let mut rec = vec![
            c.method.clone(),
            c.space.clone(),
            c.k.to_string(),
            c.m.to_string(),
            c.severity.to_string(),
            c.seeds.to_string(),
        ];
        for m in METRICS {
            rec.push(c.metrics[m].mean.to_string());
            rec.push(c.metrics[m].ci.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    files.push(path);

    let max_m = cells.iter().map(|c| c.m).max().unwrap_or(0);
    let min_sev = cells.iter().map(|c| c.severity).min().unwrap_or(0);
    let max_k = |method: &str| cells.iter().filter(|c| c.method == method).map(|c| c.k).max().unwrap_or(0);
    type Pick = Box<dyn Fn(&SummaryCell) -> Option<f64>>;
    let axes: [(&str, Pick); 3] = [
        ("M", Box::new(move |c: &SummaryCell| (c.severity == min_sev).then_some(c.m as f64))),
        ("severity", Box::new(move |c: &SummaryCell| (c.m == max_m).then_some(f64::from(c.severity)))),
        ("K", Box::new(move |c: &SummaryCell| (c.m == max_m && c.severity == min_sev).then_some(c.k as f64))),
    ];
    for (axis, pick) in axes {
        let mut series: BTreeMap<String, Vec<(f64, &SummaryCell)>> = BTreeMap::new();
        for c in &cells {
            if axis != "K" && c.k != max_k(&c.method) {
                continue;
            }
            if let Some(x) = pick(c) {
                series.entry(c.method.clone()).or_default().push((x, c));
            }
        }
        if series.values().all(|s| s.len() < 2) {
            continue;
        }
        let path = out_dir.join(format!("series_vs_{axis}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["method", axis, "metric", "mean", "ci95"])?;
        for (method, pts) in &series {
            for (x, c) in pts {
                for m in METRICS {
                    w.write_record([
                        method.clone(),
                        x.to_string(),
                        m.to_string(),
                        c.metrics[m].mean.to_string(),
                        c.metrics[m].ci.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push(path);
        for m in ["nll", "error", "ece"] {
            let data: Vec<(String, Vec<(f64, MeanCi)>)> = series
                .iter()
                .map(|(name, pts)| (name.clone(), pts.iter().map(|(x, c)| (*x, c.metrics[m])).collect()))
                .collect();
            let path = out_dir.join(format!("{m}_vs_{axis}.svg"));
            fs::write(&path, line_chart(&format!("{m} vs {axis}"), axis, m, &data)).map_err(|e| Error::io(&path, e))?;
            files.push(path);
        }
    }
    Ok(Summary { cells, files })
}

const PALETTE: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];

/// Minimal SVG line chart with 95% error bars.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, MeanCi)>)]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, v) in pts {
        if !v.mean.is_finite() {
            continue;
        }
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(v.mean - v.ci);
        y1 = y1.max(v.mean + v.ci);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1e-3;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{title}</text>"#,
        (w - right + left) / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{b}" stroke="black"/>"#,
        b = h - bottom,
        r = w - right
    );
    for i in 0..=4 {
        let fy = y0 + (y1 - y0) * f64::from(i) / 4.0;
        let fx = x0 + (x1 - x0) * f64::from(i) / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{fy:.3}</text>"#, left - 6.0, sy(fy) + 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{fx:.4}</text>"#, sx(fx), h - bottom + 16.0);
    }
    let _ =
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (w - right + left) / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<&(f64, MeanCi)> = pts.iter().filter(|p| p.1.mean.is_finite()).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|(x, v)| format!("{:.2},{:.2}", sx(*x), sy(v.mean))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for (x, v) in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/><line x1="{0:.2}" y1="{:.2}" x2="{0:.2}" y2="{:.2}" stroke="{color}"/>"#,
                sx(*x),
                sy(v.mean),
                sy(v.mean - v.ci),
                sy(v.mean + v.ci)
            );
        }
        let ly = top + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/><text x="{}" y="{}">{name}</text>"#,
            w - right + 14.0,
            ly,
            w - right + 30.0,
            ly + 10.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_single_seed_is_zero() {
        assert_eq!(MeanCi::of(&[0.5]), MeanCi { mean: 0.5, ci: 0.0 });
        let c = MeanCi::of(&[1.0, 3.0]);
        assert_eq!(c.mean, 2.0);
        assert!((c.ci - 1.96).abs() < 1e-12);
    }

    #[test]
    fn config_parses_and_validates() {
        let text = r#"
            method = "nes-re"
            seeds = [0, 1]
            ensemble_sizes = [3]
            severities = [0, 5]
            output_dir = "out"
            [budget]
            k = 20
            population = 8
            parents = 4
            [search]
            workers = 2
            severity_mix = "alternating"
            [search.dispatch]
            mode = "waves"
            wave_size = 2
            [source]
            kind = "synthetic"
            regenerate_per_seed = true
            [source.spec]
            archs_per_family = 4
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let bad = ExperimentConfig { method: Method::Anchored, ..cfg.clone() };
        assert!(bad.validate().unwrap_err().is_config_error());
        let bad = ExperimentConfig { seeds: vec![], ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "method = \"nes-rs\"\nseeds=[0]\nensemble_sizes=[1]\noutput_dir=\"x\"\ntypo=1\n[source]\nkind=\"synthetic\"\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }
}
