//! Backward schemes for (reflected) path-dependent BSDEs.
//!
//! Working backwards from `Û_{u_ñ} = g(X_{·∧T})`, each checkpoint `u_i` trains a
//! value network `U` and a `Z` network on the features of the path up to `u_i` by
//! minimising `E|Û_{u_{i+1}} − (U − f(u_i, U, Z) Δu_i + Z·ΔW_{u_i})|²`. The new
//! targets are `U` itself (European) or `max(U, g(u_i, X_{·∧u_i}))` (reflected).
//! At `u_0` the features are deterministic, so `U_0` and `Z_0` are plain
//! parameters fitted to the same loss by Gauss–Newton.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::PriceEstimate;
use crate::market::{derive_seed, simulate_batch, ModelSpec, PathBatch, TimeGrid};
use crate::nn::{adam_step, loss_and_grad, AdamConfig, AdamState, Driver, LossWorkspace, Mlp, StepBatch, Tape, DEFAULT_HIDDEN};
use crate::payoffs::PayoffSpec;
use crate::signature::{augmented_increment, path_signature, sig_dimension, ExpScratch, TruncatedTensor};

/// What the networks see at each checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMode {
    /// Truncated signature of the time-augmented fine-grid path up to `u_i`.
    Signature,
    /// `(X_{u_i}, ∫_0^{u_i} X ds)` per asset.
    RawAugmented,
}

impl FeatureMode {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMode::Signature => "signature",
            FeatureMode::RawAugmented => "raw_augmented",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signature" | "sig" => Ok(FeatureMode::Signature),
            "raw_augmented" | "raw" => Ok(FeatureMode::RawAugmented),
            other => Err(Error::Config(format!("unknown feature mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Passes over the batch at each checkpoint.
    pub epochs: usize,
    /// Passes at the last checkpoint, where the networks start untrained.
    pub first_step_epochs: usize,
    pub minibatch: usize,
    pub adam: AdamConfig,
    pub hidden: Vec<usize>,
    /// Start each checkpoint from the networks trained at the next one.
    pub warm_start: bool,
    /// After Adam, refit both output layers exactly on the full batch.
    pub refit_heads: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            first_step_epochs: 200,
            minibatch: 100,
            adam: AdamConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            warm_start: true,
            refit_heads: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeConfig {
    pub grid: TimeGrid,
    /// Signature truncation degree m.
    pub degree: usize,
    pub feature_mode: FeatureMode,
    /// Paths per run.
    pub batch: usize,
    /// Independent runs per experiment.
    pub runs: usize,
    pub training: TrainingConfig,
    pub seed: u64,
}

impl SchemeConfig {
    pub fn new(grid: TimeGrid, degree: usize) -> Self {
        Self {
            grid,
            degree,
            feature_mode: FeatureMode::Signature,
            batch: 10_000,
            runs: 1,
            training: TrainingConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::Config("signature degree must be at least 1".into()));
        }
        if self.training.minibatch == 0 || self.batch < self.training.minibatch {
            return Err(Error::Config(format!(
                "batch {} must be at least the minibatch {} (> 0)",
                self.batch, self.training.minibatch
            )));
        }
        if self.runs == 0 {
            return Err(Error::Config("at least one run is required".into()));
        }
        if !(self.training.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Network input width for a `dim`-asset model.
    pub fn feature_dim(&self, dim: usize) -> Result<usize> {
        match self.feature_mode {
            FeatureMode::Signature => sig_dimension(dim, self.degree),
            FeatureMode::RawAugmented => Ok(2 * dim),
        }
    }
}

/// Per-feature affine map to zero mean and unit variance, fitted on one checkpoint.
/// Features that do not vary across paths are mapped to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &[f64], dim: usize) -> Self {
        let rows = features.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
                *v += (x - m) * (x - m);
            }
        }
        let inv_std = var
            .iter()
            .zip(&mean)
            .map(|(&v, &m)| {
                let sd = (v / rows as f64).sqrt();
                if sd > 1e-9 * m.abs().max(1e-6) {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    pub fn apply(&self, features: &mut [f64]) {
        let dim = self.mean.len();
        for row in features.chunks_exact_mut(dim) {
            for ((x, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *x = (*x - m) * s;
            }
        }
    }
}

/// Networks and input scaling trained at one checkpoint.
#[derive(Clone, Debug)]
pub struct StepModel {
    pub checkpoint: usize,
    pub scaler: FeatureScaler,
    pub value_net: Mlp,
    pub z_net: Mlp,
}

impl StepModel {
    /// `(U, Z)` for raw (unscaled) features of one path.
    pub fn predict(&self, features: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut x = features.to_vec();
        self.scaler.apply(&mut x);
        Ok((self.value_net.forward(&x)?[0], self.z_net.forward(&x)?))
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub y0: f64,
    pub z0: Vec<f64>,
    /// Final full-batch step loss per checkpoint `0..ñ` (index `ñ` unused, 0).
    pub step_losses: Vec<f64>,
    /// Trained models for checkpoints `1..ñ`, last checkpoint first.
    pub models: Vec<StepModel>,
    /// Obstacle value at `u_0`.
    pub obstacle0: f64,
    pub feature_dim: usize,
    pub wall_time: Duration,
}

/// Features of every path at checkpoint `i`, `batch × feature_dim` row-major.
///
/// Signature mode streams each path prefix directly; raw mode returns the state
/// and its trapezoidal running integral.
pub fn features_at(i: usize, batch: &PathBatch, config: &SchemeConfig) -> Result<Vec<f64>> {
    let grid = batch.grid();
    if i > grid.segments() {
        return Err(Error::Config(format!("checkpoint {i} beyond {}", grid.segments())));
    }
    let end = grid.checkpoint_index(i) + 1;
    let dim = config.feature_dim(batch.dim())?;
    let rows: Vec<Result<Vec<f64>>> = (0..batch.len())
        .into_par_iter()
        .map(|p| {
            let prefix = batch.path(p).prefix(end);
            match config.feature_mode {
                FeatureMode::Signature => Ok(path_signature(prefix, config.degree)?.features().to_vec()),
                FeatureMode::RawAugmented => Ok(raw_features(prefix)),
            }
        })
        .collect();
    let mut out = Vec::with_capacity(batch.len() * dim);
    for r in rows {
        out.extend_from_slice(&r?);
    }
    Ok(out)
}

fn raw_features(prefix: crate::path::PathView<'_>) -> Vec<f64> {
    let mut f = prefix.last().to_vec();
    f.extend((0..prefix.dim()).map(|a| prefix.trapezoid(a)));
    f
}

/// Produces checkpoint features in decreasing checkpoint order.
///
/// Signature mode computes every path's signature at `T` once and then unwinds it
/// segment by segment with `S ← S ⊗ exp(−Δ)` over the fine increments in reverse,
/// so memory stays at one tensor per path.
enum FeatureStream<'a> {
    Signature {
        batch: &'a PathBatch,
        sigs: Vec<TruncatedTensor>,
        at: usize,
    },
    Raw {
        batch: &'a PathBatch,
    },
}

impl<'a> FeatureStream<'a> {
    fn new(batch: &'a PathBatch, config: &SchemeConfig) -> Result<Self> {
        match config.feature_mode {
            FeatureMode::Signature => {
                let sigs = (0..batch.len())
                    .into_par_iter()
                    .map(|p| path_signature(batch.path(p), config.degree))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::Signature {
                    batch,
                    sigs,
                    at: batch.grid().segments(),
                })
            }
            FeatureMode::RawAugmented => Ok(Self::Raw { batch }),
        }
    }

    fn features(&mut self, i: usize, config: &SchemeConfig) -> Result<Vec<f64>> {
        match self {
            Self::Raw { batch } => features_at(i, batch, config),
            Self::Signature { batch, sigs, at } => {
                if i > *at {
                    return Err(Error::Config("checkpoint features must be requested backwards".into()));
                }
                let grid = *batch.grid();
                let (from, to) = (grid.checkpoint_index(i), grid.checkpoint_index(*at));
                sigs.par_iter_mut()
                    .enumerate()
                    .for_each_init(
                        || (ExpScratch::default(), vec![0.0; batch.dim() + 1]),
                        |(scratch, delta), (p, sig)| {
                            let path = batch.path(p);
                            for j in (from + 1..=to).rev() {
                                augmented_increment(&path, j, delta);
                                delta.iter_mut().for_each(|x| *x = -*x);
                                sig.mul_segment_exp(delta, scratch);
                            }
                        },
                    );
                *at = i;
                let mut out = Vec::with_capacity(sigs.len() * sigs[0].features().len());
                for s in sigs.iter() {
                    out.extend_from_slice(s.features());
                }
                Ok(out)
            }
        }
    }
}

/// Run the backward scheme once. Reflection follows `payoff.reflected`.
pub fn backward_solve(config: &SchemeConfig, model: &ModelSpec, payoff: &PayoffSpec) -> Result<SolveResult> {
    let start = Instant::now();
    config.validate()?;
    model.validate()?;
    payoff.validate(model.dim())?;
    let grid = config.grid;
    let segments = grid.segments();
    let rows = config.batch;
    let d1 = model.noise_dim();
    let feature_dim = config.feature_dim(model.dim())?;

    let batch = simulate_batch(model, &grid, rows, derive_seed(config.seed, 1))?;
    let obstacles: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|p| payoff.obstacles(batch.path(p), &grid))
        .collect::<Result<_>>()?;
    let mut targets: Vec<f64> = obstacles.iter().map(|o| o[segments]).collect();

    let mut stream = FeatureStream::new(&batch, config)?;
    let mut step_losses = vec![0.0; segments + 1];
    let mut models: Vec<StepModel> = Vec::with_capacity(segments.saturating_sub(1));
    let driver: &dyn Driver = &payoff.generator;

    for i in (1..segments).rev() {
        let mut xs = stream.features(i, config)?;
        let scaler = FeatureScaler::fit(&xs, feature_dim);
        scaler.apply(&mut xs);
        let dw = batch.segment_increments(i);
        let (mut value_net, mut z_net, cold) = match models.last() {
            Some(prev) if config.training.warm_start => (prev.value_net.clone(), prev.z_net.clone(), false),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x1000 + i as u64));
                let mut v = Mlp::new(&Mlp::layer_dims(feature_dim, &config.training.hidden, 1), &mut rng)?;
                let z = Mlp::new(&Mlp::layer_dims(feature_dim, &config.training.hidden, d1), &mut rng)?;
                v.output_bias_mut()[0] = targets.iter().sum::<f64>() / rows as f64;
                (v, z, true)
            }
        };
        let epochs = if cold {
            config.training.first_step_epochs
        } else {
            config.training.epochs
        };
        let step = StepBatch {
            features: &xs,
            targets: &targets,
            dw: &dw,
            t: grid.checkpoint_time(i),
            du: grid.segment_length(i),
        };
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x2000 + i as u64));
        step_losses[i] = train_step(&mut value_net, &mut z_net, &step, driver, &config.training, epochs, &mut shuffle)
            .and_then(|()| {
                if config.training.refit_heads {
                    refit_heads(&mut value_net, &mut z_net, &step, driver)
                } else {
                    crate::nn::step_loss(&value_net, &z_net, &step, driver)
                }
            })
            .map_err(|e| Error::Diverged { step: i, source: Box::new(e) })?;

        let mut tape = Tape::default();
        let u = value_net.forward_batch(&xs, rows, &mut tape);
        for ((t, &ui), obs) in targets.iter_mut().zip(u).zip(&obstacles) {
            if !ui.is_finite() {
                return Err(Error::Diverged {
                    step: i,
                    source: Box::new(Error::NonFiniteLoss { sample: 0 }),
                });
            }
            *t = if payoff.reflected { ui.max(obs[i]) } else { ui };
        }
        models.push(StepModel {
            checkpoint: i,
            scaler,
            value_net,
            z_net,
        });
    }

    let dw0 = batch.segment_increments(0);
    let (y, z0, loss0) = fit_initial(&targets, &dw0, d1, grid.segment_length(0), driver)
        .map_err(|e| Error::Diverged { step: 0, source: Box::new(e) })?;
    step_losses[0] = loss0;
    let obstacle0 = obstacles[0][0];
    let y0 = if payoff.reflected { y.max(obstacle0) } else { y };
    Ok(SolveResult {
        y0,
        z0,
        step_losses,
        models,
        obstacle0,
        feature_dim,
        wall_time: start.elapsed(),
    })
}

/// Replace both output layers by their exact least-squares fit given the trained
/// hidden layers; returns the resulting full-batch loss.
fn refit_heads(value_net: &mut Mlp, z_net: &mut Mlp, step: &StepBatch<'_>, driver: &dyn Driver) -> Result<f64> {
    let rows = step.rows();
    let (mut tv, mut tz) = (Tape::default(), Tape::default());
    value_net.forward_batch(step.features, rows, &mut tv);
    z_net.forward_batch(step.features, rows, &mut tz);
    let heads = Heads::from_nets(value_net, z_net);
    let (heads, loss) = fit_heads(
        tv.penultimate(step.features),
        tz.penultimate(step.features),
        heads,
        z_net.output_dim(),
        step,
        driver,
    )?;
    heads.write_to(value_net, z_net);
    Ok(loss)
}

/// Minibatch Adam over `epochs` shuffled passes; a trailing partial minibatch is dropped.
fn train_step(
    value_net: &mut Mlp,
    z_net: &mut Mlp,
    step: &StepBatch<'_>,
    driver: &dyn Driver,
    training: &TrainingConfig,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let rows = step.rows();
    let in_dim = value_net.input_dim();
    let d1 = z_net.output_dim();
    let mb = training.minibatch;
    let mut value_adam = AdamState::new(value_net.params().len(), training.adam);
    let mut z_adam = AdamState::new(z_net.params().len(), training.adam);
    let mut ws = LossWorkspace::default();
    let mut order: Vec<usize> = (0..rows).collect();
    let (mut fx, mut ft, mut fw) = (vec![0.0; mb * in_dim], vec![0.0; mb], vec![0.0; mb * d1]);
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks_exact(mb) {
            for (slot, &r) in chunk.iter().enumerate() {
                fx[slot * in_dim..(slot + 1) * in_dim].copy_from_slice(&step.features[r * in_dim..(r + 1) * in_dim]);
                ft[slot] = step.targets[r];
                fw[slot * d1..(slot + 1) * d1].copy_from_slice(&step.dw[r * d1..(r + 1) * d1]);
            }
            let mini = StepBatch {
                features: &fx,
                targets: &ft,
                dw: &fw,
                t: step.t,
                du: step.du,
            };
            loss_and_grad(value_net, z_net, &mini, driver, &mut ws)?;
            adam_step(value_net.params_mut(), &ws.value_grad, &mut value_adam)?;
            adam_step(z_net.params_mut(), &ws.z_grad, &mut z_adam)?;
        }
    }
    Ok(())
}

/// Affine output maps `U = a·h_U + b` and `Z_j = c_j·h_Z + e_j` on fixed inputs.
#[derive(Clone, Debug, PartialEq)]
struct Heads {
    /// `a` then `b`.
    value: Vec<f64>,
    /// `(c_j, e_j)` per noise dimension.
    z: Vec<f64>,
}

impl Heads {
    fn from_nets(value_net: &Mlp, z_net: &Mlp) -> Self {
        let (vw, vb) = value_net.layer_range(value_net.layers() - 1);
        let mut value = value_net.params()[vw].to_vec();
        value.extend_from_slice(&value_net.params()[vb]);
        let (zw, zb) = z_net.layer_range(z_net.layers() - 1);
        let hz = z_net.dims()[z_net.layers() - 1];
        let mut z = Vec::new();
        for j in 0..z_net.output_dim() {
            z.extend_from_slice(&z_net.params()[zw.start + j * hz..zw.start + (j + 1) * hz]);
            z.push(z_net.params()[zb.start + j]);
        }
        Self { value, z }
    }

    fn write_to(&self, value_net: &mut Mlp, z_net: &mut Mlp) {
        let (vw, vb) = value_net.layer_range(value_net.layers() - 1);
        let hv = vw.len();
        value_net.params_mut()[vw].copy_from_slice(&self.value[..hv]);
        value_net.params_mut()[vb].copy_from_slice(&self.value[hv..]);
        let (zw, zb) = z_net.layer_range(z_net.layers() - 1);
        let hz = z_net.dims()[z_net.layers() - 1];
        for j in 0..z_net.output_dim() {
            let head = &self.z[j * (hz + 1)..(j + 1) * (hz + 1)];
            z_net.params_mut()[zw.start + j * hz..zw.start + (j + 1) * hz].copy_from_slice(&head[..hz]);
            z_net.params_mut()[zb.start + j] = head[hz];
        }
    }
}

/// Gauss–Newton on the step loss over the output heads only, with the inputs
/// `hv` (`rows × hv_dim`) and `hz` (`rows × hz_dim`) held fixed. One iteration
/// is exact when the driver is affine in `(y, z)`.
fn fit_heads(
    hv: &[f64],
    hz: &[f64],
    mut heads: Heads,
    d1: usize,
    step: &StepBatch<'_>,
    driver: &dyn Driver,
) -> Result<(Heads, f64)> {
    let rows = step.rows();
    let hv_dim = heads.value.len() - 1;
    let hz_dim = heads.z.len() / d1 - 1;
    let np = heads.value.len() + heads.z.len();
    let mut dz = vec![0.0; d1];
    let mut z = vec![0.0; d1];
    let mut jac = DMatrix::<f64>::zeros(rows, np);
    let mut res = DVector::<f64>::zeros(rows);
    let mut loss = f64::INFINITY;
    for iter in 0..=20 {
        loss = 0.0;
        for r in 0..rows {
            let h_v = &hv[r * hv_dim..(r + 1) * hv_dim];
            let h_z = &hz[r * hz_dim..(r + 1) * hz_dim];
            let y = heads.value[hv_dim] + h_v.iter().zip(&heads.value).map(|(a, b)| a * b).sum::<f64>();
            for (j, zj) in z.iter_mut().enumerate() {
                let head = &heads.z[j * (hz_dim + 1)..(j + 1) * (hz_dim + 1)];
                *zj = head[hz_dim] + h_z.iter().zip(head).map(|(a, b)| a * b).sum::<f64>();
            }
            let (f, fy) = driver.eval(step.t, y, &z, &mut dz);
            let dw = &step.dw[r * d1..(r + 1) * d1];
            let zw: f64 = z.iter().zip(dw).map(|(a, b)| a * b).sum();
            let e = step.targets[r] - (y - f * step.du + zw);
            if !e.is_finite() {
                return Err(Error::NonFiniteLoss { sample: r });
            }
            loss += e * e;
            res[r] = e;
            let gy = 1.0 - fy * step.du;
            for (c, &h) in h_v.iter().enumerate() {
                jac[(r, c)] = gy * h;
            }
            jac[(r, hv_dim)] = gy;
            for j in 0..d1 {
                let gz = dw[j] - dz[j] * step.du;
                let base = hv_dim + 1 + j * (hz_dim + 1);
                for (c, &h) in h_z.iter().enumerate() {
                    jac[(r, base + c)] = gz * h;
                }
                jac[(r, base + hz_dim)] = gz;
            }
        }
        loss /= rows as f64;
        if iter == 20 {
            break;
        }
        let mut normal = jac.tr_mul(&jac);
        let rhs = jac.tr_mul(&res);
        let ridge = 1e-12 * (0..np).map(|a| normal[(a, a)]).fold(0.0, f64::max) + 1e-300;
        for a in 0..np {
            normal[(a, a)] += ridge;
        }
        let delta = match normal.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => normal
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Shape("singular normal equations in the output refit".into()))?,
        };
        let scale = 1.0 + heads.value.iter().chain(&heads.z).fold(0.0f64, |m, x| m.max(x.abs()));
        for (p, d) in heads.value.iter_mut().chain(heads.z.iter_mut()).zip(delta.iter()) {
            *p += d;
        }
        if delta.amax() <= 1e-12 * scale {
            let mut final_loss = 0.0;
            for r in 0..rows {
                let e = res[r] - (jac.row(r) * &delta)[0];
                final_loss += e * e;
            }
            // affine drivers: the linearised residual is exact
            loss = loss.min(final_loss / rows as f64).max(0.0);
            break;
        }
    }
    Ok((heads, loss))
}

/// Constant `(y, z)` minimising the step loss at `u_0`, whose inputs are deterministic.
fn fit_initial(targets: &[f64], dw: &[f64], d1: usize, du: f64, driver: &dyn Driver) -> Result<(f64, Vec<f64>, f64)> {
    let rows = targets.len();
    let init = Heads {
        value: vec![targets.iter().sum::<f64>() / rows as f64],
        z: vec![0.0; d1],
    };
    let step = StepBatch {
        features: &[],
        targets,
        dw,
        t: 0.0,
        du,
    };
    let (heads, loss) = fit_heads(&[], &[], init, d1, &step, driver)?;
    Ok((heads.value[0], heads.z, loss))
}

/// One run inside an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub y0: f64,
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub estimate: PriceEstimate,
    pub runs: Vec<RunRecord>,
}

/// Seed of run `r` under the experiment seed.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed, 0x5EED_0000 + run as u64)
}

/// `config.runs` independent solves with derived seeds.
pub fn run_experiment(config: &SchemeConfig, model: &ModelSpec, payoff: &PayoffSpec) -> Result<ExperimentReport> {
    config.validate()?;
    let runs = (0..config.runs)
        .into_par_iter()
        .map(|r| {
            let mut cfg = config.clone();
            cfg.seed = run_seed(config.seed, r);
            let res = backward_solve(&cfg, model, payoff)?;
            Ok(RunRecord {
                run: r,
                seed: cfg.seed,
                y0: res.y0,
                wall_time: res.wall_time,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<f64> = runs.iter().map(|r| r.y0).collect();
    Ok(ExperimentReport {
        estimate: PriceEstimate::from_samples(&ys),
        runs,
    })
}

/// Parameter varied by [`convergence_study`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudySetting {
    /// Number of segments ñ at fixed fine steps n.
    Segments(usize),
    /// Signature degree m.
    Degree(usize),
}

impl StudySetting {
    pub fn label(&self) -> String {
        match self {
            StudySetting::Segments(s) => format!("segments={s}"),
            StudySetting::Degree(m) => format!("degree={m}"),
        }
    }

    fn apply(&self, base: &SchemeConfig) -> Result<SchemeConfig> {
        let mut cfg = base.clone();
        match *self {
            StudySetting::Segments(s) => {
                cfg.grid = TimeGrid::with_segments(base.grid.horizon(), base.grid.steps(), s)?;
            }
            StudySetting::Degree(m) => cfg.degree = m,
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub setting: StudySetting,
    pub report: ExperimentReport,
}

/// One experiment per setting, all sharing the base seed.
pub fn convergence_study(
    base: &SchemeConfig,
    settings: &[StudySetting],
    model: &ModelSpec,
    payoff: &PayoffSpec,
) -> Result<Vec<StudyRow>> {
    if settings.len() < 2 {
        return Err(Error::Config("a convergence study needs at least two settings".into()));
    }
    settings
        .iter()
        .map(|s| {
            let cfg = s.apply(base)?;
            Ok(StudyRow {
                setting: *s,
                report: run_experiment(&cfg, model, payoff)?,
            })
        })
        .collect()
}

/// `run,y0,stderr,ci_low,ci_high,runs`: one row per run, then a `SUMMARY` row.
pub fn runs_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("run,y0,stderr,ci_low,ci_high,runs\n");
    for r in &report.runs {
        s.push_str(&format!("{},{:?},,,,\n", r.run, r.y0));
    }
    let e = &report.estimate;
    s.push_str(&format!(
        "SUMMARY,{:?},{:?},{:?},{:?},{}\n",
        e.mean, e.stderr, e.ci_low, e.ci_high, e.samples
    ));
    s
}

/// `setting,mean,stderr,ci_low,ci_high,runs`, one row per setting.
pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut s = String::from("setting,mean,stderr,ci_low,ci_high,runs\n");
    for row in rows {
        let e = &row.report.estimate;
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{}\n",
            row.setting.label(),
            e.mean,
            e.stderr,
            e.ci_low,
            e.ci_high,
            e.samples
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoffs::Generator;
    use crate::signature::stream_checkpoints;

    fn small_config(grid: TimeGrid, degree: usize) -> SchemeConfig {
        let mut cfg = SchemeConfig::new(grid, degree);
        cfg.batch = 200;
        cfg.training.epochs = 5;
        cfg.training.first_step_epochs = 20;
        cfg.training.minibatch = 50;
        cfg
    }

    #[test]
    fn feature_dims() {
        let grid = TimeGrid::new(1.0, 10, 2).unwrap();
        let mut cfg = SchemeConfig::new(grid, 4);
        assert_eq!(cfg.feature_dim(1).unwrap(), 30);
        cfg.feature_mode = FeatureMode::RawAugmented;
        assert_eq!(cfg.feature_dim(3).unwrap(), 6);
    }

    #[test]
    fn features_at_examples() {
        let grid = TimeGrid::new(1.0, 20, 5).unwrap();
        let model = ModelSpec::black_scholes(vec![7.0], 0.0, vec![0.0]).unwrap();
        let batch = simulate_batch(&model, &grid, 3, 1).unwrap();
        let mut cfg = SchemeConfig::new(grid, 2);
        let f0 = features_at(0, &batch, &cfg).unwrap();
        assert!(f0.iter().all(|&v| v == 0.0));
        let f2 = features_at(2, &batch, &cfg).unwrap();
        assert!((f2[0] - 0.5).abs() < 1e-15);
        cfg.feature_mode = FeatureMode::RawAugmented;
        let raw = features_at(2, &batch, &cfg).unwrap();
        assert!((raw[0] - 7.0).abs() < 1e-15 && (raw[1] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn unwound_features_match_streaming() {
        let grid = TimeGrid::new(1.0, 60, 6).unwrap();
        let model = ModelSpec::black_scholes_uniform(2, 1.0, 0.05, 0.3).unwrap();
        let batch = simulate_batch(&model, &grid, 5, 2).unwrap();
        let cfg = SchemeConfig::new(grid, 4);
        let mut stream = FeatureStream::new(&batch, &cfg).unwrap();
        let dim = cfg.feature_dim(2).unwrap();
        let forward: Vec<_> = (0..5)
            .map(|p| stream_checkpoints(batch.path(p), &grid.checkpoint_times(), 4).unwrap())
            .collect();
        for i in (0..grid.segments()).rev() {
            let got = stream.features(i, &cfg).unwrap();
            for p in 0..5 {
                for (a, b) in got[p * dim..(p + 1) * dim].iter().zip(&forward[p][i].values) {
                    assert!((a - b).abs() < 1e-11, "checkpoint {i}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn scaler_zeroes_constant_columns() {
        let feats = [1.0, 5.0, 1.0, 7.0, 1.0, 9.0];
        let sc = FeatureScaler::fit(&feats, 2);
        let mut x = feats.to_vec();
        sc.apply(&mut x);
        assert_eq!((x[0], x[2], x[4]), (0.0, 0.0, 0.0));
        assert!((x[1] + x[3] + x[5]).abs() < 1e-12);
    }

    #[test]
    fn constant_terminal_without_reflection() {
        let grid = TimeGrid::new(1.0, 20, 4).unwrap();
        let model = ModelSpec::black_scholes_uniform(1, 100.0, 0.05, 0.2).unwrap();
        let payoff = PayoffSpec::constant(3.0, Generator::Zero, false);
        let res = backward_solve(&small_config(grid, 2), &model, &payoff).unwrap();
        assert!((res.y0 - 3.0).abs() < 2e-2, "{}", res.y0);
    }

    #[test]
    fn constant_obstacle_with_reflection_is_exact() {
        let grid = TimeGrid::new(1.0, 20, 4).unwrap();
        let model = ModelSpec::black_scholes_uniform(1, 100.0, 0.05, 0.2).unwrap();
        let payoff = PayoffSpec::constant(3.0, Generator::Discount { rate: 0.05 }, true);
        let res = backward_solve(&small_config(grid, 2), &model, &payoff).unwrap();
        assert_eq!(res.y0, 3.0);
    }

    #[test]
    fn initial_fit_solves_linear_least_squares() {
        let targets = [1.0, 2.0, 3.0, 2.5];
        let dw = [0.1, -0.1, 0.2, 0.05];
        let (y, z, _) = fit_initial(&targets, &dw, 1, 0.5, &Generator::Discount { rate: 0.1 }).unwrap();
        // pred = y(1 + 0.05) + z w; normal equations solved directly
        let a = DMatrix::from_fn(4, 2, |r, c| if c == 0 { 1.05 } else { dw[r] });
        let sol = (a.transpose() * &a).lu().solve(&(a.transpose() * DVector::from_row_slice(&targets))).unwrap();
        assert!((y - sol[0]).abs() < 1e-12 && (z[0] - sol[1]).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let report = ExperimentReport {
            estimate: PriceEstimate::from_samples(&[1.0, 2.0]),
            runs: vec![
                RunRecord { run: 0, seed: 1, y0: 1.0, wall_time: Duration::ZERO },
                RunRecord { run: 1, seed: 2, y0: 2.0, wall_time: Duration::ZERO },
            ],
        };
        let csv = runs_csv(&report);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "run,y0,stderr,ci_low,ci_high,runs");
        assert_eq!(lines[1], "0,1.0,,,,");
        assert!(lines[3].starts_with("SUMMARY,1.5,0.5,"));
    }

    #[test]
    fn rejects_bad_configs() {
        let grid = TimeGrid::new(1.0, 20, 4).unwrap();
        let mut cfg = SchemeConfig::new(grid, 0);
        assert!(cfg.validate().is_err());
        cfg.degree = 2;
        cfg.batch = 10;
        assert!(cfg.validate().is_err());
        assert!(TimeGrid::with_segments(1.0, 1000, 30).is_err());
    }
}
