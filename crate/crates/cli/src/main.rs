//! `sigbsde run <experiment>`: resolve settings, run, write a CSV and a manifest.
//!
//! Exit codes: 0 success, 1 i/o, 2 configuration or usage, 3 unknown experiment,
//! 4 numeric failure, 5 failed self-test checks.

mod experiments;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use experiments::CliError;
use settings::{Overrides, Settings, EXPERIMENTS};

/// Environment variable naming the default output directory.
const OUT_DIR_VAR: &str = "SIGBSDE_OUT_DIR";

#[derive(Parser)]
#[command(name = "sigbsde", version, about = "Signature backward schemes for path-dependent option pricing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write <out>/<experiment>.csv and a manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// amerasian, moving_avg, shiryaev, european_check, sig_selftest or convergence.
    experiment: String,
    /// TOML file with [model], [payoff], [scheme] and [training] tables, or a
    /// previous run's manifest.json to repeat that run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 lets the runtime decide).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; defaults to $SIGBSDE_OUT_DIR, then ./results.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of assets.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    strike: Option<f64>,
    /// Solve the reflected equation (American/Bermudan price).
    #[arg(long)]
    reflected: Option<bool>,
    /// Observation delay of the stopping problem.
    #[arg(long)]
    eps: Option<f64>,
    /// Fine time steps n.
    #[arg(long)]
    steps: Option<usize>,
    /// Segment counts, comma separated; several values run a study.
    #[arg(long, value_delimiter = ',')]
    segments: Option<Vec<usize>>,
    /// Signature degrees, comma separated; several values run a study.
    #[arg(long, value_delimiter = ',')]
    degree: Option<Vec<usize>>,
    /// signature or raw_augmented.
    #[arg(long)]
    feature_mode: Option<String>,
    /// Paths per run (Monte Carlo paths for european_check).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Random paths per identity for sig_selftest.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    first_step_epochs: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides {
            seed: self.seed,
            threads: self.threads,
            out: self.out.clone(),
            ..Overrides::default()
        };
        o.model.d = self.d;
        o.model.x0 = self.x0;
        o.model.rate = self.rate;
        o.model.sigma = self.sigma;
        o.model.horizon = self.horizon;
        o.payoff.strike = self.strike;
        o.payoff.reflected = self.reflected;
        o.payoff.eps = self.eps;
        o.scheme.steps = self.steps;
        o.scheme.segments = self.segments.clone();
        o.scheme.degree = self.degree.clone();
        o.scheme.feature_mode = self.feature_mode.clone();
        o.scheme.batch = self.batch;
        o.scheme.runs = self.runs;
        o.scheme.trials = self.trials;
        o.training.epochs = self.epochs;
        o.training.first_step_epochs = self.first_step_epochs;
        o.training.minibatch = self.minibatch;
        o.training.lr = self.lr;
        o.training.hidden = self.hidden.clone();
        o
    }
}

fn read_config(path: Option<&Path>) -> Result<Overrides, CliError> {
    let Some(path) = path else {
        return Ok(Overrides::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        Overrides::from_manifest(&text)
    } else {
        Overrides::from_toml(&text)
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn execute(args: &RunArgs) -> Result<(), CliError> {
    if !EXPERIMENTS.contains(&args.experiment.as_str()) {
        return Err(CliError::UnknownExperiment(args.experiment.clone()));
    }
    let file = read_config(args.config.as_deref())?;
    if let Some(other) = file.experiment.as_deref().filter(|&e| e != args.experiment) {
        return Err(CliError::Config(format!(
            "config is for experiment {other:?}, not {:?}",
            args.experiment
        )));
    }
    let default_out = std::env::var_os(OUT_DIR_VAR).map_or_else(|| PathBuf::from("results"), PathBuf::from);
    let settings = Settings::resolve(&args.experiment, &file, &args.overrides(), default_out);
    settings.validate().map_err(CliError::Config)?;
    if settings.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(settings.threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }

    let start = Instant::now();
    let outcome = experiments::run(&settings)?;
    let wall = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&settings.out).map_err(|e| CliError::Io(format!("{}: {e}", settings.out.display())))?;
    let csv_path = settings.out.join(format!("{}.csv", settings.experiment));
    let manifest_path = settings.out.join(format!("{}.manifest.json", settings.experiment));
    write(&csv_path, &outcome.csv)?;
    let manifest = json!({
        "experiment": settings.experiment,
        "version": env!("CARGO_PKG_VERSION"),
        "git_describe": env!("SIGBSDE_GIT_DESCRIBE"),
        "seed": settings.seed,
        "config": settings,
        "feature_dim": outcome.feature_dim,
        "wall_time_seconds": wall,
        "csv": csv_path,
        "runs": outcome.runs,
        "failed_checks": outcome.failed_checks,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    write(&manifest_path, &(text + "\n"))?;

    for line in &outcome.summary {
        println!("{line}");
    }
    println!("wrote {} and {} ({wall:.1}s)", csv_path.display(), manifest_path.display());
    if outcome.failed_checks > 0 {
        return Err(CliError::ChecksFailed(outcome.failed_checks));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sigbsde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
