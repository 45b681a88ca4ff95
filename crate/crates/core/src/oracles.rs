//! Independent reference values: Monte Carlo European prices from an exact
//! sampler, closed-form bounds, and a brute-force iterated-integral signature.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::PriceEstimate;
use crate::market::{derive_seed, path_rng, ModelKind, ModelSpec, TimeGrid};
use crate::path::PathView;
use crate::payoffs::PayoffSpec;
use crate::signature::TruncatedTensor;

/// Lower/upper bounds on a value, optionally with the exact value.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub lower: f64,
    pub upper: f64,
    pub exact: Option<f64>,
    pub source: &'static str,
}

/// `e^{−rT} E[g(X_{·∧T})]` by Monte Carlo over `batch` paths.
///
/// Black–Scholes paths are sampled with exact log-normal steps on the fine grid,
/// so this does not share code with the Euler engine.
pub fn mc_european(
    model: &ModelSpec,
    payoff: &PayoffSpec,
    grid: &TimeGrid,
    batch: usize,
    seed: u64,
) -> Result<PriceEstimate> {
    model.validate()?;
    payoff.validate(model.dim())?;
    if batch < 100 {
        return Err(Error::Config(format!("European Monte Carlo needs at least 100 paths, got {batch}")));
    }
    let (d, n) = (model.dim(), grid.steps());
    let times = grid.times();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let seed = derive_seed(seed, 0x0EC0);
    let drift: Vec<f64> = model
        .sigma
        .iter()
        .map(|s| (model.rate - 0.5 * s * s) * dt)
        .collect();
    let values = (0..batch)
        .into_par_iter()
        .map_init(
            || vec![0.0; (n + 1) * d],
            |xs, p| {
                let mut rng = path_rng(seed, p as u64);
                xs[..d].copy_from_slice(&model.x0);
                for j in 0..n {
                    for a in 0..d {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let prev = xs[j * d + a];
                        xs[(j + 1) * d + a] = match model.kind {
                            ModelKind::BlackScholes => {
                                prev * (drift[a] + model.sigma[a] * sqrt_dt * z).exp()
                            }
                            ModelKind::Brownian => prev + sqrt_dt * z,
                        };
                    }
                }
                payoff.terminal(PathView::new(&times, xs, d), grid)
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    let disc = (-payoff.generator.rate() * grid.horizon()).exp();
    let discounted: Vec<f64> = values.iter().map(|v| disc * v).collect();
    Ok(PriceEstimate::from_samples(&discounted))
}

/// `(e^{−rT} Σ_i w_i E[(1/T)∫_0^T X^i dt] − K e^{−rT})^+`, the Jensen lower bound of
/// the Amerasian call. `E[X_t] = x_0 e^{rt}` whatever the volatility.
pub fn jensen_lower_bound(x0: &[f64], weights: &[f64], rate: f64, horizon: f64, strike: f64) -> f64 {
    let rt = rate * horizon;
    let growth = if rt.abs() < 1e-12 { 1.0 + 0.5 * rt } else { rt.exp_m1() / rt };
    let mean_avg: f64 = weights.iter().zip(x0).map(|(w, x)| w * x * growth).sum();
    ((-rt).exp() * (mean_avg - strike)).max(0.0)
}

/// Bounds for `sup_τ E W_{(τ−ε)^+}` on `[0, T]`.
pub fn shiryaev_reference(delay: f64, horizon: f64) -> Result<BoundReport> {
    if !(horizon > 0.0) || !(0.0..=horizon).contains(&delay) {
        return Err(Error::Config(format!(
            "need 0 <= delay <= horizon, got delay {delay}, horizon {horizon}"
        )));
    }
    let c = 2.0 / std::f64::consts::PI;
    if delay < 0.5 * horizon {
        Ok(BoundReport {
            lower: (c * delay).sqrt(),
            upper: (c * horizon).sqrt(),
            exact: None,
            source: "delayed stopping bounds sqrt(2ε/π) < v <= sqrt(2T/π)",
        })
    } else {
        let v = (c * (horizon - delay)).sqrt();
        Ok(BoundReport {
            lower: v,
            upper: v,
            exact: Some(v),
            source: "delayed stopping exact value sqrt(2(T−ε)/π) for ε >= T/2",
        })
    }
}

/// Exact Bermudan value of the delayed stopping problem when `ε >= T/2` and the
/// delay is a whole number of exercise intervals `h = T/segments`.
///
/// All delayed observations are known at the first exercise date after `ε`, so the
/// value is `E max_{0≤j≤N} W_{jh}` with `N = (T−ε)/h`, which Spitzer's identity
/// gives as `√h/√(2π) Σ_{k=1..N} k^{−1/2}`.
pub fn shiryaev_bermudan_value(delay: f64, horizon: f64, segments: usize) -> Option<f64> {
    if segments == 0 || delay < 0.5 * horizon || delay > horizon {
        return None;
    }
    let h = horizon / segments as f64;
    let steps = (horizon - delay) / h;
    let n = steps.round();
    if (steps - n).abs() > 1e-9 {
        return None;
    }
    let sum: f64 = (1..=n as usize).map(|k| 1.0 / (k as f64).sqrt()).sum();
    Some(h.sqrt() / (2.0 * std::f64::consts::PI).sqrt() * sum)
}

/// Upper limit on `steps × coefficients` for [`brute_force_signature`].
pub const BRUTE_FORCE_COST_LIMIT: f64 = 5e10;

/// Signature of the time-augmented linear interpolation of `path` by iterated
/// trapezoidal sums on a refinement with `subdivisions` steps in total:
/// `I_k(t + h) = I_k(t) + ½ (I_{k−1}(t) + I_{k−1}(t + h)) ⊗ δ`.
///
/// Each linear piece gets an equal share of the steps (the first pieces take the
/// remainder). Levels 1 and 2 are exact; higher levels converge at `O(1/subdivisions²)`.
pub fn brute_force_signature(path: PathView<'_>, m: usize, subdivisions: usize) -> Result<TruncatedTensor> {
    if subdivisions < 10 {
        return Err(Error::Config("brute-force signature needs at least 10 subdivisions".into()));
    }
    if path.len() < 2 {
        return TruncatedTensor::identity(path.dim() + 1, m);
    }
    let alphabet = path.dim() + 1;
    let mut sig = TruncatedTensor::identity(alphabet, m)?;
    let cost = subdivisions as f64 * sig.coeffs().len() as f64;
    if cost > BRUTE_FORCE_COST_LIMIT {
        return Err(Error::CostGuard {
            cost,
            limit: BRUTE_FORCE_COST_LIMIT,
        });
    }
    let pieces = path.len() - 1;
    if subdivisions < pieces {
        return Err(Error::Config("fewer subdivisions than path pieces".into()));
    }
    let mut step = vec![0.0; alphabet];
    let (mut left, mut saved) = (Vec::new(), Vec::new());
    for piece in 0..pieces {
        let sub = subdivisions / pieces + usize::from(piece < subdivisions % pieces);
        step[0] = (path.time(piece + 1) - path.time(piece)) / sub as f64;
        for (s, (&b, &a)) in step[1..].iter_mut().zip(path.point(piece + 1).iter().zip(path.point(piece))) {
            *s = (b - a) / sub as f64;
        }
        for _ in 0..sub {
            // lowest level first; `left` keeps I_{k−1}(t) from before its update
            left.clear();
            left.push(1.0);
            for k in 1..=m {
                let (prev, cur) = sig.adjacent_levels_mut(k);
                saved.clear();
                saved.extend_from_slice(cur);
                for (p, (&v, &l)) in prev.iter().zip(left.iter()).enumerate() {
                    let mid = 0.5 * (v + l);
                    for (c, &s) in cur[p * alphabet..(p + 1) * alphabet].iter_mut().zip(&step) {
                        *c += mid * s;
                    }
                }
                std::mem::swap(&mut left, &mut saved);
            }
        }
    }
    Ok(sig)
}

/// Best discounted obstacle over the checkpoints of one deterministic path,
/// `max_i e^{−r u_i} g(u_i, x_{·∧u_i})`.
pub fn deterministic_stopping_oracle(
    path: PathView<'_>,
    payoff: &PayoffSpec,
    rate: f64,
    grid: &TimeGrid,
) -> Result<f64> {
    let obstacles = payoff.obstacles(path, grid)?;
    Ok(obstacles
        .iter()
        .enumerate()
        .map(|(i, g)| (-rate * grid.checkpoint_time(i)).exp() * g)
        .fold(f64::NEG_INFINITY, f64::max))
}
