//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The optional external-data criterion runs when `NES_NB201_EXPORT` names a
//! JSON-lines export of a NAS-Bench-201 dataset; it is skipped otherwise.

mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::oracles::*;
use common::{candidates, random_labels, random_matrix, random_pool, rng};
use nes::data::Split;
use nes::metrics::*;
use nes::search::*;
use nes::selection::*;
use nes::space::{CellOp, CellSpace, CellSpaceSpec, SearchSpace, TabularSpace};
use nes::store::*;
use nes::synthetic::{SyntheticBenchmark, SyntheticSpec};
use nes::tabular::{import_tabular, write_export, PredictionSource, TabularBenchmark, NB201_JSONL};
use nes::trainer::{regularizer_for, AnchorConfig, Network, Regularizer, TrainConfig};
use rand::Rng;
use tempfile::tempdir;

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

struct Report {
    lines: Vec<(String, Outcome)>,
}

impl Report {
    fn check(&mut self, name: &str, limit: Option<Duration>, f: impl FnOnce() -> (bool, String)) {
        let start = Instant::now();
        let (ok, detail) = f();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let detail = format!("{detail}; {:.1}s", took.as_secs_f64());
        let outcome = if ok && in_time {
            Outcome::Pass(detail)
        } else if ok {
            Outcome::Fail(format!("{detail} exceeds {:.0}s", limit.unwrap().as_secs_f64()))
        } else {
            Outcome::Fail(detail)
        };
        self.print(name, &outcome);
        self.lines.push((name.to_string(), outcome));
    }

    fn skip(&mut self, name: &str, why: &str) {
        let outcome = Outcome::Skipped(why.to_string());
        self.print(name, &outcome);
        self.lines.push((name.to_string(), outcome));
    }

    fn print(&self, name: &str, outcome: &Outcome) {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skipped(d) => ("SKIPPED", d),
        };
        println!("{tag:<8} {name:<28} {detail}");
    }
}

fn loss_chain() -> (bool, String) {
    let mut r = rng(1);
    let mut bad = 0;
    for _ in 0..10_000 {
        let k = r.random_range(1..=8);
        let n = r.random_range(1..=64);
        let c = r.random_range(2..=10);
        let ms: Vec<_> = (0..k).map(|_| varied_matrix(&mut r, n, c)).collect();
        let refs: Vec<_> = ms.iter().collect();
        let y = random_labels(&mut r, n, c);
        let o = oracle_nll(&refs, &y).unwrap();
        let e = nll(&ensemble_average(&refs, None, AveragingMode::Probability).unwrap(), &y).unwrap();
        let a = avg_base_learner_nll(&refs, &y).unwrap();
        if !(o <= e + 1e-9 && e <= a + 1e-9) {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad}/10000 violations"))
}

fn greedy() -> (bool, String) {
    let mut r = rng(2);
    let (mut wrong, mut worse) = (0, 0);
    for _ in 0..1000 {
        let k = r.random_range(1..=12);
        let m = r.random_range(1..=k.min(4));
        let (n, c) = (r.random_range(5..40), r.random_range(2..6));
        let (pool, y) = random_pool(&mut r, k, n, c);
        let cands = candidates(&pool);
        let sel: Vec<usize> = forward_select(&cands, &y, m, false).unwrap().member_ids().iter().map(|i| i.0).collect();
        wrong += usize::from(first_wrong_greedy_step(&pool, &y, &sel, false).is_some());
        let ex: Vec<usize> = exhaustive_select(&cands, &y, m).unwrap().member_ids().iter().map(|i| i.0).collect();
        // the same members summed in another order may differ by rounding
        worse += usize::from(ens_nll(&pool, &sel, &y) < ens_nll(&pool, &ex, &y) - 1e-12);
    }
    (wrong == 0 && worse == 0, format!("{wrong} non-minimal steps, {worse} below exhaustive, 1000 pools"))
}

fn esa_reductions() -> (bool, String) {
    let mut r = rng(3);
    let (mut differ, mut flat) = (0, 0);
    for _ in 0..200 {
        let k = r.random_range(2..12);
        let (pool, y) = random_pool(&mut r, k, 30, 4);
        let cands = candidates(&pool);
        let m = r.random_range(1..=k);
        differ += usize::from(
            forward_select_diverse(&cands, &y, m, 0.0).unwrap() != forward_select(&cands, &y, m, false).unwrap(),
        );
        let s: Vec<usize> = quick_and_greedy(&cands, &y, m).unwrap().member_ids().iter().map(|i| i.0).collect();
        flat += (1..s.len()).filter(|&t| ens_nll(&pool, &s[..=t], &y) >= ens_nll(&pool, &s[..t], &y)).count();
    }
    (differ == 0 && flat == 0, format!("{differ} diverse(0) mismatches, {flat} non-improving prefixes, 200 pools"))
}

fn metric_oracles() -> (bool, String) {
    let mut r = rng(4);
    let mut bad = 0;
    let close = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-12;
    for _ in 0..500 {
        let n = r.random_range(1..120);
        let c = r.random_range(2..10);
        let k = r.random_range(2..7);
        let ms: Vec<_> = (0..k).map(|_| varied_matrix(&mut r, n, c)).collect();
        let refs: Vec<_> = ms.iter().collect();
        let y = random_labels(&mut r, n, c);
        let ok = close(nll(&ms[0], &y).unwrap(), oracle_nll_single(&ms[0], &y))
            && close(classification_error(&ms[0], &y).unwrap(), oracle_error(&ms[0], &y))
            && close(ece(&ms[0], &y, 15).unwrap(), oracle_ece(&ms[0], &y, 15))
            && close(oracle_nll(&refs, &y).unwrap(), oracle_oracle_nll(&refs, &y))
            && close(predictive_disagreement(&refs, &y).unwrap(), oracle_disagreement(&refs, &y));
        bad += usize::from(!ok);
    }
    (bad == 0, format!("{bad}/500 instances off by more than 1e-12"))
}

fn trainer_gradients() -> (bool, String) {
    let mut r = rng(5);
    let task = nes::data::make_toy_task(&nes::data::ToyTaskSpec {
        n_train: 64,
        n_val: 8,
        n_test: 8,
        dim: 6,
        num_classes: 3,
        ..Default::default()
    })
    .unwrap();
    let x = task.train.features.slice(ndarray::s![..16, ..]).to_owned();
    let y = &task.train.labels.as_slice()[..16];
    let mut worst: f64 = 0.0;
    let (mut checks, mut rejected) = (0, 0);
    for op in CellOp::ALL {
        for depth in [1, 2] {
            let spec =
                CellSpaceSpec { num_intermediate_nodes: 2, op_set: vec![op], hidden_width: 2, macro_depth: depth };
            let net = Network::new(&spec, &uniform_genome(2, 0, &mut r), 6, 3).unwrap();
            let reg = Regularizer { l2: 1e-2, anchor: None };
            let (params, r0) = smooth_params(&net, &mut r, 0.05, &x, y, &reg);
            worst = worst.max(gradient_error(&net, &params, &x, y, &reg));
            rejected += r0;
            checks += 1;
        }
    }
    let spec =
        CellSpaceSpec { num_intermediate_nodes: 2, op_set: CellOp::ALL.to_vec(), hidden_width: 2, macro_depth: 1 };
    for _ in 0..5 {
        let genome = CellSpace::new(spec.clone()).unwrap().sample_genome(&mut r);
        let net = Network::new(&spec, &genome, 6, 3).unwrap();
        let config = TrainConfig { anchored: Some(AnchorConfig { lambda: 0.4 }), ..Default::default() };
        let reg = regularizer_for(&net, &config, 16, 9);
        let (params, r0) = smooth_params(&net, &mut r, 0.0, &x, y, &reg);
        worst = worst.max(gradient_error(&net, &params, &x, y, &reg));
        rejected += r0;
        checks += 1;
    }
    let detail = format!(
        "max relative error {worst:.2e} over {checks} networks incl. anchored, {rejected} kink-crossing draws redrawn"
    );
    (worst < 1e-4, detail)
}

/// Paired statistics of the planted benchmark: one generated benchmark and
/// one search per seed.
struct SeedStats {
    nes_test: f64,
    best_test: f64,
    nes_bsl: f64,
    best_bsl: f64,
    shifted_sel: f64,
    clean_sel: f64,
    re_val: f64,
    rs_val: f64,
}

fn planted(seed: u64, with_re: bool) -> SeedStats {
    let bench = Arc::new(SyntheticBenchmark::new(SyntheticSpec { gen_seed: seed, ..Default::default() }).unwrap());
    let ev = TabularEvaluator::new(bench).unwrap().with_severities(&[0, 5]).unwrap();
    let budget = SearchBudget { k: 200, m: 3, population: 50, parents: 10 };
    let opts = SearchOptions::default();
    let rs = nes_rs(&ev, &budget, seed, &opts).unwrap();
    let y0 = ev.labels(Split::Test, 0).unwrap();
    let y5 = ev.labels(Split::Test, 5).unwrap();
    let clean = rs.select(&ev, Esa::Forward, 3, 0).unwrap();
    let nes = rs.pool.evaluate(&clean, Split::Test, 0, &y0).unwrap();
    let (best, _) = deep_ens_best_arch(&ev, 3, 0).unwrap();
    let best = best.pool.evaluate(&best.selection, Split::Test, 0, &y0).unwrap();
    let shifted = rs.select(&ev, Esa::Forward, 3, 5).unwrap();
    let shifted_sel = rs.pool.evaluate(&shifted, Split::Test, 5, &y5).unwrap().nll;
    let clean_sel = rs.pool.evaluate(&clean, Split::Test, 5, &y5).unwrap().nll;
    let (mut re_val, mut rs_val) = (f64::NAN, f64::NAN);
    if with_re {
        let re = nes_re(&ev, &budget, seed, &opts).unwrap();
        let yv = ev.labels(Split::Val, 0).unwrap();
        let mean_val = |run: &SearchRun| {
            [3, 5, 10]
                .iter()
                .map(|&m| {
                    run.pool.evaluate(&run.select(&ev, Esa::Forward, m, 0).unwrap(), Split::Val, 0, &yv).unwrap().nll
                })
                .sum::<f64>()
                / 3.0
        };
        re_val = mean_val(&re);
        rs_val = mean_val(&rs);
    }
    SeedStats {
        nes_test: nes.nll,
        best_test: best.nll,
        nes_bsl: nes.avg_bsl_nll,
        best_bsl: best.avg_bsl_nll,
        shifted_sel,
        clean_sel,
        re_val,
        rs_val,
    }
}

fn family_share_precondition() -> (f64, f64) {
    let spec = SyntheticSpec::default();
    let bench = Arc::new(SyntheticBenchmark::new(spec.clone()).unwrap());
    let ev = TabularEvaluator::new(bench.clone()).unwrap();
    let y = ev.labels(Split::Val, 0).unwrap();
    let family_nll: Vec<f64> = (0..spec.num_families)
        .map(|f| {
            (0..spec.archs_per_family)
                .map(|v| {
                    nll(&bench.generate(&nes::space::Genome::Fixed(vec![f, v]), 0, Split::Val, 0).unwrap(), &y).unwrap()
                })
                .sum()
        })
        .collect();
    let best = (0..spec.num_families).min_by(|&a, &b| family_nll[a].total_cmp(&family_nll[b])).unwrap();
    let share = |run: &SearchRun| {
        run.pool.learners().iter().filter(|l| bench.traits(&l.arch.genome).unwrap().family == best).count() as f64
            / run.pool.len() as f64
    };
    let budget = SearchBudget { k: 200, m: 10, population: 50, parents: 10 };
    let (mut re, mut rs) = (0.0, 0.0);
    for seed in 0..10 {
        re += share(&nes_re(&ev, &budget, seed, &SearchOptions::default()).unwrap()) / 10.0;
        rs += share(&nes_rs(&ev, &budget, seed, &SearchOptions::default()).unwrap()) / 10.0;
    }
    (re, rs)
}

fn store_format() -> (bool, String) {
    let dir = tempdir().unwrap();
    let mut r = rng(6);
    let mut problems = Vec::new();

    // round trip
    let root = dir.path().join("rt");
    let mut store = Store::create(&root, "tabular:4").unwrap();
    let mut written = Vec::new();
    for seed in 0..50u64 {
        let m = random_matrix(&mut r, 7, 3, 5.0);
        let key = StoreKey::new(&nes::space::Genome::Fixed(vec![(seed % 4) as usize]), seed, Split::Val, 0);
        store.put(key.clone(), &m).unwrap();
        written.push((key, m));
    }
    drop(store);
    let store = Store::open(&root).unwrap();
    let exact = written.iter().all(|(k, m)| {
        let got = store.get(k).unwrap();
        got.as_slice()
            .iter()
            .zip(m.as_slice())
            .all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits() && *a == f64::from(*b as f32))
    });
    if !exact {
        problems.push("round trip not bit-exact".to_string());
    }

    // fault injection
    for crash in [CrashPoint::BeforeRename, CrashPoint::BeforeManifest, CrashPoint::TornManifestLine] {
        let root = dir.path().join(format!("{crash:?}"));
        let mut store = Store::create(&root, "tabular:4").unwrap();
        store.put_labels(Split::Val, 0, &random_labels(&mut r, 4, 2)).unwrap();
        for seed in 0..3 {
            store
                .put(
                    StoreKey::new(&nes::space::Genome::Fixed(vec![0]), seed, Split::Val, 0),
                    &random_matrix(&mut r, 4, 2, 1.0),
                )
                .unwrap();
        }
        let key = StoreKey::new(&nes::space::Genome::Fixed(vec![1]), 0, Split::Val, 0);
        store.put_interrupted(key.clone(), &random_matrix(&mut r, 4, 2, 1.0), crash).unwrap();
        drop(store);
        let store = Store::open(&root).unwrap();
        let files = fs::read_dir(root.join("matrices")).unwrap().count();
        if store.len() != 3 || store.contains(&key) || files != 3 || !store.verify().is_ok() {
            problems.push(format!("{crash:?} left an inconsistent store"));
        }
    }

    // full enumeration of the 4-node, 5-op cell
    let space = TabularSpace::nas_bench_201();
    let genomes = space.enumerate().unwrap();
    let mut bench = TabularBenchmark::new(space.id());
    for split in [Split::Val, Split::Test] {
        bench.insert_labels(split, 0, LabelVector::new(vec![1])).unwrap();
    }
    let m = PredictionMatrix::new(1, 2, vec![0.25, 0.75]).unwrap();
    for g in &genomes {
        bench.insert(StoreKey::new(g, 0, Split::Val, 0), m.clone()).unwrap();
    }
    let export = dir.path().join("nb201.jsonl");
    write_export(&bench, &export).unwrap();
    let imported = import_tabular(&export, NB201_JSONL, &dir.path().join("nb201")).unwrap();
    let count = imported.genomes().len();
    if count != 15_625 {
        problems.push(format!("enumeration imported {count} architectures"));
    }
    let ok = problems.is_empty();
    (
        ok,
        if ok {
            format!("50 matrices bit-exact, 3 crash points recovered, {count} architectures")
        } else {
            problems.join("; ")
        },
    )
}

fn external_benchmark(path: &Path) -> (bool, String) {
    let dir = tempdir().unwrap();
    let store = import_tabular(path, NB201_JSONL, &dir.path().join("store")).unwrap();
    let bench = Arc::new(TabularBenchmark::load(&store).unwrap());
    let ev = TabularEvaluator::new(bench.clone() as Arc<dyn PredictionSource>).unwrap().with_severities(&[0]).unwrap();
    let y = ev.labels(Split::Test, 0).unwrap();
    let budget = SearchBudget { k: 1000, m: 3, population: 50, parents: 10 };
    let seeds: Vec<u64> = (0..3).collect();
    let mut errs = [Vec::new(), Vec::new()];
    for &seed in &seeds {
        for (i, search) in [nes_rs, nes_re].into_iter().enumerate() {
            let run = search(&ev, &budget, seed, &SearchOptions::default()).unwrap();
            let sel = run.select(&ev, Esa::Forward, 3, 0).unwrap();
            errs[i].push(100.0 * run.pool.evaluate(&sel, Split::Test, 0, &y).unwrap().error);
        }
    }
    let (best, _) = deep_ens_best_arch(&ev, 3, 0).unwrap();
    let best = 100.0 * best.pool.evaluate(&best.selection, Split::Test, 0, &y).unwrap().error;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (rs, re) = (mean(&errs[0]), mean(&errs[1]));
    let ok = (rs - 48.1).abs() <= 1.0 && (re - 47.9).abs() <= 0.4 && (best - 49.9).abs() <= 1.0;
    (ok, format!("error % NES-RS {rs:.1}, NES-RE {re:.1}, best arch {best:.1}"))
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    let secs = Duration::from_secs;
    report.check("loss-chain", Some(secs(10)), loss_chain);
    report.check("greedy-correctness", Some(secs(60)), greedy);
    report.check("esa-reductions", None, esa_reductions);
    report.check("metric-oracles", None, metric_oracles);
    report.check("trainer-gradients", Some(secs(30)), trainer_gradients);

    let stats: Vec<SeedStats> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..10u64).map(|seed| s.spawn(move || planted(seed, true))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let count = |f: &dyn Fn(&SeedStats) -> bool| stats.iter().filter(|s| f(s)).count();
    report.check("nes-vs-best-arch", Some(secs(300)), || {
        // timed on its own, sequentially
        let start = Instant::now();
        for seed in 0..10 {
            planted(seed, false);
        }
        let ens = count(&|s| s.nes_test < s.best_test);
        let bsl = count(&|s| s.best_bsl < s.nes_bsl);
        (
            ens >= 8 && bsl >= 8,
            format!(
                "lower ensemble NLL {ens}/10, weaker base learners {bsl}/10 ({:.1}s sequential)",
                start.elapsed().as_secs_f64()
            ),
        )
    });
    report.check("shift-selection", None, || {
        let wins = count(&|s| s.shifted_sel < s.clean_sel);
        (wins >= 8, format!("shifted selection better {wins}/10"))
    });
    report.check("re-vs-rs", None, || {
        let wins = count(&|s| s.re_val <= s.rs_val);
        let (re, rs) = family_share_precondition();
        (wins >= 7 && re >= rs, format!("NES-RE <= NES-RS {wins}/10; best-family share {re:.2} vs {rs:.2}"))
    });
    report.check("store-format", None, store_format);
    match std::env::var_os("NES_NB201_EXPORT") {
        Some(path) => report.check("external-nb201", None, || external_benchmark(Path::new(&path))),
        None => report.skip("external-nb201", "set NES_NB201_EXPORT to an nb201-jsonl export"),
    }

    let failed: Vec<&str> =
        report.lines.iter().filter(|(_, o)| matches!(o, Outcome::Fail(_))).map(|(n, _)| n.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
