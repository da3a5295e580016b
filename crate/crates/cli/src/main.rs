use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use lrdyn::experiment::{self, ExperimentConfig};
use lrdyn::Error;

/// Runs lattice-fermion dynamics experiments from TOML configs.
#[derive(Parser)]
#[command(name = "lrdyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file, or a bundled preset by name.
    Run {
        config: String,
        /// Output directory; overrides the environment and the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List bundled presets, or print one as TOML.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

fn load(config: &str) -> Result<ExperimentConfig, Error> {
    let path = Path::new(config);
    if !path.exists() {
        if let Some(p) = experiment::preset(config) {
            return experiment::parse_config(p.toml);
        }
    }
    experiment::load_config(path)
}

fn run(config: &str, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> Result<i32, Error> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if threads == Some(0) {
        return Err(Error::config("--threads", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.or(cfg.threads).unwrap_or(0))
        .build()
        .map_err(|e| Error::ResourceLimit(format!("threads: {e}")))?;
    let clock = Instant::now();
    let outcome = pool.install(|| experiment::execute(&cfg))?;
    let dir = experiment::output_dir(&cfg, out.as_deref());
    let (csv, json) =
        pool.install(|| experiment::write_reports(&cfg, &outcome, &dir, clock.elapsed().as_secs_f64()))?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for p in &outcome.properties {
        println!("{} {}: {}", if p.passes { "PASS" } else { "FAIL" }, p.name, p.detail);
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Presets { show: Some(name) } => match experiment::preset(&name) {
            Some(p) => {
                print!("{}", p.toml);
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: no preset named `{name}`");
                ExitCode::from(2)
            }
        },
        Command::Presets { show: None } => {
            for p in experiment::presets() {
                println!("{:<20} {} (budget {} s)", p.name, p.description, p.budget_seconds);
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => match run(&config, out, threads, seed) {
            Ok(code) => ExitCode::from(code as u8),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
