use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nes::error::{Error, Result};
use nes::harness::{run_experiment, summarize, ExperimentConfig};
use nes::store::Store;
use nes::synthetic::{generate_synthetic_benchmark, SyntheticSpec};
use nes::tabular::{import_tabular, NB201_JSONL};

#[derive(Parser)]
#[command(name = "nes", version, about = "Neural ensemble search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic tabular benchmark into a new prediction store.
    GenerateBenchmark {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator parameters; defaults are used otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        gen_seed: Option<u64>,
    },
    /// Import a JSON-lines benchmark export into a new prediction store.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = NB201_JSONL)]
        format: String,
    },
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate result directories into tables and charts.
    Summarize {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check every checksum in a prediction store.
    VerifyStore {
        #[arg(long)]
        store: PathBuf,
    },
}

fn load_spec(path: Option<PathBuf>) -> Result<SyntheticSpec> {
    let Some(path) = path else { return Ok(SyntheticSpec::default()) };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenerateBenchmark { out, spec, gen_seed } => {
            let mut spec = load_spec(spec)?;
            if let Some(s) = gen_seed {
                spec.gen_seed = s;
            }
            let store = generate_synthetic_benchmark(&spec, &out)?;
            println!("wrote {} matrices for space {} to {}", store.len(), store.space_id(), out.display());
        }
        Command::Import { input, out, format } => {
            let store = import_tabular(&input, &format, &out)?;
            println!("imported {} matrices for space {} into {}", store.len(), store.space_id(), out.display());
        }
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config)?;
            let out = run_experiment(&config)?;
            println!("wrote {} rows to {}", out.rows.len(), out.dir.join(nes::harness::RESULTS_FILE).display());
        }
        Command::Summarize { runs, out } => {
            let summary = summarize(&runs, &out)?;
            for c in &summary.cells {
                let nll = c.metrics["nll"];
                println!(
                    "{:<14} K={:<5} M={:<3} sev={} nll={:.4}±{:.4} error={:.4}",
                    c.method, c.k, c.m, c.severity, nll.mean, nll.ci, c.metrics["error"].mean
                );
            }
            println!("wrote {} files to {}", summary.files.len(), out.display());
        }
        Command::VerifyStore { store } => {
            let report = Store::open(&store)?.verify();
            for p in &report.problems {
                eprintln!("{p}");
            }
            println!("checked {} entries, {} problems", report.entries_checked, report.problems.len());
            if !report.is_ok() {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
