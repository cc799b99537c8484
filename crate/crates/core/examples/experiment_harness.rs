// Config-driven experiments: run two methods, then aggregate the results
// into tables and charts.
//
//     cargo run --release --example experiment_harness

use nes::harness::{run_experiment, summarize, ExperimentConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for method in ["nes-re", "deepens-best"] {
        let text = format!(
            r#"
method = "{method}"
seeds = [0, 1, 2]
ensemble_sizes = [2, 3, 5]
severities = [0, 5]
output_dir = "{}"
budget = {{ k = 60, population = 20, parents = 5 }}

[source]
kind = "synthetic"
regenerate_per_seed = true
spec = {{ archs_per_family = 16, seeds_per_arch = 5, n_val = 120, n_test = 120 }}
"#,
            dir.path().join(method).display()
        );
        let config = ExperimentConfig::from_toml(&text).unwrap();
        let out = run_experiment(&config).unwrap();
        println!("{method}: {} rows in {}", out.rows.len(), out.dir.display());
        runs.push(out.dir);
    }
    let summary = summarize(&runs, &dir.path().join("summary")).unwrap();
    for c in &summary.cells {
        let nll = c.metrics["nll"];
        println!("{:<13} M={} severity={} nll {:.4} ± {:.4}", c.method, c.m, c.severity, nll.mean, nll.ci);
    }
    for f in &summary.files {
        println!("wrote {}", f.file_name().unwrap().to_string_lossy());
    }
}
