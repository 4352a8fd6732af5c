//! `cloudwalker` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cloudwalker::config::{self, RunConfig};
use cloudwalker::error::ErrorClass;

#[derive(Debug, Parser)]
#[command(name = "cloudwalker", version, about = "Random-walk point cloud classification and retrieval")]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-exact single-threaded runs, 0 uses all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Config override, repeatable: `--set k=32 --set walks=16`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic sphere/cube/cylinder/torus dataset and its manifests.
    Synth(SynthArgs),
    /// Generate walks for every shape of a manifest.
    Walks(WalksArgs),
    /// Train a model; writes `ckpt_{iter}.cw` and `train_log.csv`.
    Train,
    /// Instance and class accuracy on the test manifest; writes `predictions.csv`.
    Eval(ModelArgs),
    /// Retrieval mAP on the test manifest; writes `rankings.csv`.
    Retrieve(ModelArgs),
    /// Fit the complexity line on the training manifest and report on the test
    /// manifest; writes `complexity.csv`.
    Complexity(ModelArgs),
    /// Finite-difference gradient check on random tiny models.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Training shapes per class.
    #[arg(long, default_value_t = 200)]
    train_per_class: usize,
    /// Test shapes per class.
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    /// Points per shape.
    #[arg(long, default_value_t = 512)]
    points: usize,
    /// Extra heavily-noised shapes, as a fraction of each split.
    #[arg(long, default_value_t = 0.0)]
    noisy_fraction: f64,
    /// Noise deviation for the noisy shapes, in shape units.
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
}

#[derive(Debug, Args)]
struct WalksArgs {
    /// Manifest to walk; defaults to the configured training manifest.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Checkpoint to load.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Number of random tiny models.
    #[arg(long, default_value_t = 20)]
    cases: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn build_config(cli: &Cli) -> cloudwalker::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => config::load_config(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> cloudwalker::Result<()> {
    let cfg = build_config(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| cloudwalker::Error::ConfigValue(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => commands::synth(&cfg, a.train_per_class, a.test_per_class, a.points, a.noisy_fraction, a.noise_sigma),
        Command::Walks(a) => commands::walks(&cfg, a.manifest.as_deref()),
        Command::Train => commands::train(&cfg),
        Command::Eval(a) => commands::eval(&cfg, &a.checkpoint),
        Command::Retrieve(a) => commands::retrieve(&cfg, &a.checkpoint),
        Command::Complexity(a) => commands::complexity(&cfg, &a.checkpoint),
        Command::Gradcheck(a) => commands::gradcheck(&cfg, a.cases, a.tolerance),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            })
        }
    }
}
