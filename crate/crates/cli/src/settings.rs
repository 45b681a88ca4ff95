//! Resolved run settings: experiment defaults, then the TOML file, then flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub const EXPERIMENTS: [&str; 6] = [
    "amerasian",
    "moving_avg",
    "shiryaev",
    "european_check",
    "sig_selftest",
    "convergence",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub experiment: String,
    pub seed: u64,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub out: PathBuf,
    pub model: ModelSettings,
    pub payoff: PayoffSettings,
    pub scheme: SchemeSettings,
    pub training: TrainingSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSettings {
    pub d: usize,
    pub x0: f64,
    pub rate: f64,
    pub sigma: f64,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayoffSettings {
    pub strike: f64,
    pub reflected: bool,
    /// Observation delay of the stopping problem.
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeSettings {
    /// Fine steps n.
    pub steps: usize,
    /// Segment counts ñ; more than one runs a study over them.
    pub segments: Vec<usize>,
    /// Signature degrees m; more than one runs a study over them.
    pub degree: Vec<usize>,
    pub feature_mode: String,
    /// Paths per run (Monte Carlo paths for `european_check`).
    pub batch: usize,
    pub runs: usize,
    /// Random paths per identity in `sig_selftest`.
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub first_step_epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub warm_start: bool,
    pub refit_heads: bool,
}

/// Partial settings as read from a config file or collected from flags.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    /// Must match the experiment named on the command line when present.
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub model: ModelOverrides,
    pub payoff: PayoffOverrides,
    pub scheme: SchemeOverrides,
    pub training: TrainingOverrides,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub d: Option<usize>,
    pub x0: Option<f64>,
    pub rate: Option<f64>,
    pub sigma: Option<f64>,
    pub horizon: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PayoffOverrides {
    pub strike: Option<f64>,
    pub reflected: Option<bool>,
    pub eps: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeOverrides {
    pub steps: Option<usize>,
    pub segments: Option<Vec<usize>>,
    pub degree: Option<Vec<usize>>,
    pub feature_mode: Option<String>,
    pub batch: Option<usize>,
    pub runs: Option<usize>,
    pub trials: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOverrides {
    pub epochs: Option<usize>,
    pub first_step_epochs: Option<usize>,
    pub minibatch: Option<usize>,
    pub lr: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub warm_start: Option<bool>,
    pub refit_heads: Option<bool>,
}

macro_rules! take {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl Overrides {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// The `config` object of a run manifest.
    pub fn from_manifest(text: &str) -> Result<Self, String> {
        let mut manifest: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let config = manifest
            .get_mut("config")
            .map(serde_json::Value::take)
            .ok_or("manifest has no config object")?;
        serde_json::from_value(config).map_err(|e| e.to_string())
    }

    fn apply(&self, s: &mut Settings) {
        take!(s.seed, self.seed);
        take!(s.threads, self.threads);
        take!(s.out, self.out);
        let (m, p, c, t) = (&self.model, &self.payoff, &self.scheme, &self.training);
        take!(s.model.d, m.d);
        take!(s.model.x0, m.x0);
        take!(s.model.rate, m.rate);
        take!(s.model.sigma, m.sigma);
        take!(s.model.horizon, m.horizon);
        take!(s.payoff.strike, p.strike);
        take!(s.payoff.reflected, p.reflected);
        take!(s.payoff.eps, p.eps);
        take!(s.scheme.steps, c.steps);
        take!(s.scheme.segments, c.segments);
        take!(s.scheme.degree, c.degree);
        take!(s.scheme.feature_mode, c.feature_mode);
        take!(s.scheme.batch, c.batch);
        take!(s.scheme.runs, c.runs);
        take!(s.scheme.trials, c.trials);
        take!(s.training.epochs, t.epochs);
        take!(s.training.first_step_epochs, t.first_step_epochs);
        take!(s.training.minibatch, t.minibatch);
        take!(s.training.lr, t.lr);
        take!(s.training.hidden, t.hidden);
        take!(s.training.warm_start, t.warm_start);
        take!(s.training.refit_heads, t.refit_heads);
    }
}

impl Settings {
    /// Defaults for `experiment` with `d` assets, before any overrides.
    pub fn defaults(experiment: &str, d: usize, out: PathBuf) -> Self {
        let pricing = ModelSettings {
            d,
            x0: 100.0,
            rate: 0.05,
            sigma: 0.15,
            horizon: 1.0,
        };
        let mut s = Settings {
            experiment: experiment.to_string(),
            seed: 0,
            threads: 0,
            out,
            model: pricing,
            payoff: PayoffSettings {
                strike: 100.0,
                reflected: true,
                eps: 0.1,
            },
            scheme: SchemeSettings {
                steps: 1000,
                segments: vec![20],
                degree: vec![if d > 5 { 2 } else { 4 }],
                feature_mode: "signature".into(),
                batch: 10_000,
                runs: 1,
                trials: 20,
            },
            training: TrainingSettings {
                epochs: 10,
                first_step_epochs: 50,
                minibatch: 100,
                lr: 1e-3,
                hidden: vec![16; 5],
                warm_start: true,
                refit_heads: true,
            },
        };
        match experiment {
            "moving_avg" => {
                s.model.x0 = 1.0;
                s.payoff.strike = 1.0;
                s.scheme.segments = vec![10];
            }
            "shiryaev" => {
                s.model = ModelSettings {
                    d,
                    x0: 0.0,
                    rate: 0.0,
                    sigma: 1.0,
                    horizon: 1.0,
                };
                s.scheme.steps = 100;
                s.scheme.segments = vec![50];
                s.scheme.degree = vec![10];
                s.training.epochs = 3;
                s.training.first_step_epochs = 10;
            }
            "european_check" => {
                s.payoff.reflected = false;
                s.scheme.batch = 100_000;
            }
            "sig_selftest" => {
                s.model.d = d.max(2);
                s.scheme.degree = vec![4];
            }
            "convergence" => s.scheme.segments = vec![5, 10, 20],
            _ => {}
        }
        s
    }

    /// Defaults, then `file`, then `flags`.
    pub fn resolve(experiment: &str, file: &Overrides, flags: &Overrides, default_out: PathBuf) -> Self {
        let d = flags.model.d.or(file.model.d).unwrap_or(1);
        let mut s = Self::defaults(experiment, d, default_out);
        file.apply(&mut s);
        flags.apply(&mut s);
        s
    }

    pub fn validate(&self) -> Result<(), String> {
        let m = &self.model;
        if m.d == 0 {
            return Err("model.d must be at least 1".into());
        }
        if !(m.horizon > 0.0 && m.horizon.is_finite()) {
            return Err(format!("model.horizon must be positive, got {}", m.horizon));
        }
        if !(m.sigma >= 0.0 && m.sigma.is_finite() && m.rate.is_finite() && m.x0.is_finite()) {
            return Err("model parameters must be finite with sigma >= 0".into());
        }
        if self.experiment != "shiryaev" && self.experiment != "sig_selftest" && m.x0 <= 0.0 {
            return Err(format!("model.x0 must be positive, got {}", m.x0));
        }
        if !(self.payoff.strike.is_finite() && self.payoff.eps >= 0.0 && self.payoff.eps.is_finite()) {
            return Err("payoff.strike must be finite and payoff.eps nonnegative".into());
        }
        let c = &self.scheme;
        if c.steps == 0 || c.batch == 0 || c.runs == 0 || c.trials == 0 {
            return Err("scheme.steps, batch, runs and trials must be positive".into());
        }
        if c.segments.is_empty() || c.degree.is_empty() {
            return Err("scheme.segments and scheme.degree need at least one value".into());
        }
        if let Some(&s) = c.segments.iter().find(|&&s| s == 0 || !c.steps.is_multiple_of(s)) {
            return Err(format!("segments {s} must be positive and divide steps {}", c.steps));
        }
        if c.degree.contains(&0) {
            return Err("scheme.degree values must be at least 1".into());
        }
        if c.segments.len() > 1 && c.degree.len() > 1 {
            return Err("vary either segments or degree, not both".into());
        }
        let t = &self.training;
        if !(t.lr > 0.0 && t.lr.is_finite()) || t.minibatch == 0 || t.hidden.contains(&0) {
            return Err("training.lr, minibatch and hidden widths must be positive".into());
        }
        Ok(())
    }
}
