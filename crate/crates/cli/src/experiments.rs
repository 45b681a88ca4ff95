//! Experiment dispatch and report assembly.

use serde::Serialize;
use sigbsde::oracles::mc_european;
use sigbsde::selftest::run_signature_selftest;
use sigbsde::solver::{runs_csv, study_csv, ExperimentReport};
use sigbsde::{
    convergence_study, run_experiment, sig_dimension, AdamConfig, FeatureMode, ModelSpec, PayoffSpec, SchemeConfig,
    StudySetting, TimeGrid, TrainingConfig,
};

use crate::settings::Settings;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Config(String),
    UnknownExperiment(String),
    Numeric(String),
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::UnknownExperiment(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::ChecksFailed(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::UnknownExperiment(name) => write!(
                f,
                "unknown experiment {name:?}; expected one of {}",
                crate::settings::EXPERIMENTS.join(", ")
            ),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::ChecksFailed(n) => write!(f, "{n} self-test check(s) failed"),
        }
    }
}

impl From<sigbsde::Error> for CliError {
    fn from(e: sigbsde::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else if let sigbsde::Error::Io(io) = e {
            CliError::Io(io.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

/// Per-run details kept out of the CSV so that it stays byte-reproducible.
#[derive(Debug, Serialize)]
pub struct RunDetail {
    pub setting: String,
    pub run: usize,
    pub seed: u64,
    pub y0: f64,
    pub wall_time_seconds: f64,
}

pub struct Outcome {
    pub csv: String,
    /// Human-readable lines for stdout.
    pub summary: Vec<String>,
    pub runs: Vec<RunDetail>,
    pub feature_dim: Option<usize>,
    /// Failed self-test checks, if any.
    pub failed_checks: usize,
}

fn pricing_model(s: &Settings) -> Result<ModelSpec, CliError> {
    let m = &s.model;
    if s.experiment == "shiryaev" {
        return Ok(ModelSpec::brownian(m.d)?);
    }
    Ok(ModelSpec::black_scholes_uniform(m.d, m.x0, m.rate, m.sigma)?)
}

fn pricing_payoff(s: &Settings, reflected: bool) -> PayoffSpec {
    let (d, k, r) = (s.model.d, s.payoff.strike, s.model.rate);
    match s.experiment.as_str() {
        "moving_avg" => PayoffSpec::moving_average_put(d, k, r, reflected),
        "shiryaev" => PayoffSpec::shiryaev(s.payoff.eps),
        _ => PayoffSpec::amerasian(d, k, r, reflected),
    }
}

fn scheme(s: &Settings) -> Result<SchemeConfig, CliError> {
    let c = &s.scheme;
    let t = &s.training;
    let grid = TimeGrid::with_segments(s.model.horizon, c.steps, c.segments[0])?;
    let mut cfg = SchemeConfig::new(grid, c.degree[0]);
    cfg.feature_mode = c.feature_mode.parse::<FeatureMode>()?;
    cfg.batch = c.batch;
    cfg.runs = c.runs;
    cfg.seed = s.seed;
    cfg.training = TrainingConfig {
        epochs: t.epochs,
        first_step_epochs: t.first_step_epochs,
        minibatch: t.minibatch,
        adam: AdamConfig {
            lr: t.lr,
            ..AdamConfig::default()
        },
        hidden: t.hidden.clone(),
        warm_start: t.warm_start,
        refit_heads: t.refit_heads,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn study_settings(s: &Settings) -> Vec<StudySetting> {
    if s.scheme.degree.len() > 1 {
        s.scheme.degree.iter().map(|&m| StudySetting::Degree(m)).collect()
    } else {
        s.scheme.segments.iter().map(|&n| StudySetting::Segments(n)).collect()
    }
}

fn details(setting: &str, report: &ExperimentReport) -> Vec<RunDetail> {
    report
        .runs
        .iter()
        .map(|r| RunDetail {
            setting: setting.to_string(),
            run: r.run,
            seed: r.seed,
            y0: r.y0,
            wall_time_seconds: r.wall_time.as_secs_f64(),
        })
        .collect()
}

fn estimate_line(label: &str, report: &ExperimentReport) -> String {
    let e = &report.estimate;
    format!(
        "{label}: {:.6} (stderr {:.6}, 95% CI [{:.6}, {:.6}], runs {})",
        e.mean, e.stderr, e.ci_low, e.ci_high, e.samples
    )
}

fn pricing(s: &Settings, force_study: bool) -> Result<Outcome, CliError> {
    let model = pricing_model(s)?;
    let payoff = pricing_payoff(s, s.payoff.reflected);
    payoff.validate(model.dim())?;
    let cfg = scheme(s)?;
    let feature_dim = cfg.feature_dim(model.dim()).ok();
    let settings = study_settings(s);
    if force_study || settings.len() > 1 {
        let rows = convergence_study(&cfg, &settings, &model, &payoff)?;
        return Ok(Outcome {
            csv: study_csv(&rows),
            summary: rows.iter().map(|r| estimate_line(&r.setting.label(), &r.report)).collect(),
            runs: rows.iter().flat_map(|r| details(&r.setting.label(), &r.report)).collect(),
            feature_dim,
            failed_checks: 0,
        });
    }
    let report = run_experiment(&cfg, &model, &payoff)?;
    Ok(Outcome {
        csv: runs_csv(&report),
        summary: vec![estimate_line(&s.experiment, &report)],
        runs: details(&settings[0].label(), &report),
        feature_dim,
        failed_checks: 0,
    })
}

fn european_check(s: &Settings) -> Result<Outcome, CliError> {
    let model = pricing_model(s)?;
    let payoff = pricing_payoff(s, false);
    let grid = TimeGrid::with_segments(s.model.horizon, s.scheme.steps, s.scheme.segments[0])?;
    let e = mc_european(&model, &payoff, &grid, s.scheme.batch, s.seed)?;
    let csv = format!(
        "experiment,mean,stderr,ci_low,ci_high,paths\neuropean_check,{:?},{:?},{:?},{:?},{}\n",
        e.mean, e.stderr, e.ci_low, e.ci_high, e.samples
    );
    Ok(Outcome {
        csv,
        summary: vec![format!(
            "european_check: {:.6} (stderr {:.6}, 95% CI [{:.6}, {:.6}], paths {})",
            e.mean, e.stderr, e.ci_low, e.ci_high, e.samples
        )],
        runs: Vec::new(),
        feature_dim: None,
        failed_checks: 0,
    })
}

fn sig_selftest(s: &Settings) -> Result<Outcome, CliError> {
    let degree = s.scheme.degree[0];
    let report = run_signature_selftest(s.model.d, degree, s.scheme.trials, s.seed)?;
    let mut summary: Vec<String> = report
        .checks
        .iter()
        .map(|c| {
            let status = if c.passed() { "pass" } else { "FAIL" };
            format!("{}: {status} (max error {:.2e}, tolerance {:.0e})", c.name, c.max_error, c.tolerance)
        })
        .collect();
    summary.push(format!("sig_selftest: {} passed, {} failed", report.passed(), report.failed()));
    Ok(Outcome {
        csv: report.to_csv(),
        summary,
        runs: Vec::new(),
        feature_dim: sig_dimension(s.model.d, degree).ok(),
        failed_checks: report.failed(),
    })
}

pub fn run(s: &Settings) -> Result<Outcome, CliError> {
    match s.experiment.as_str() {
        "amerasian" | "moving_avg" | "shiryaev" => pricing(s, false),
        "convergence" => pricing(s, true),
        "european_check" => european_check(s),
        "sig_selftest" => sig_selftest(s),
        other => Err(CliError::UnknownExperiment(other.to_string())),
    }
}
