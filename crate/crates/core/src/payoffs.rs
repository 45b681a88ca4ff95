//! Terminal payoffs, exercise obstacles and generators for the three products:
//! the Amerasian basket call, the Bermudan geometric moving-average put and the
//! delayed Brownian (Shiryaev) stopping problem.
//!
//! Prices are undiscounted intrinsic values; discounting enters through the
//! generator `f(t, x, y, z) = −r·y`.

use crate::error::{Error, Result};
use crate::market::TimeGrid;
use crate::nn::Driver;
use crate::path::PathView;

/// Generator of the backward equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Generator {
    /// `f = −r·y`.
    Discount { rate: f64 },
    Zero,
}

impl Generator {
    pub fn value(&self, y: f64) -> f64 {
        match *self {
            Generator::Discount { rate } => -rate * y,
            Generator::Zero => 0.0,
        }
    }

    pub fn rate(&self) -> f64 {
        match *self {
            Generator::Discount { rate } => rate,
            Generator::Zero => 0.0,
        }
    }
}

impl Driver for Generator {
    fn eval(&self, _t: f64, y: f64, _z: &[f64], dz: &mut [f64]) -> (f64, f64) {
        dz.fill(0.0);
        match *self {
            Generator::Discount { rate } => (-rate * y, -rate),
            Generator::Zero => (0.0, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PayoffKind {
    /// `(Σ_i w_i/t ∫_0^t X^i ds − K)^+`, with `t = T` at maturity.
    AmerasianCall { weights: Vec<f64>, strike: f64 },
    /// `(K − Σ_i w_i I_i)^+` with `I_i` the geometric mean of the completed
    /// segment averages of asset `i`.
    GeoMovingAvgPut { weights: Vec<f64>, strike: f64 },
    /// `W_{(t−ε)^+}` of a one-dimensional Brownian path.
    Shiryaev { delay: f64 },
    /// The same constant for every path and time.
    Constant { value: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub generator: Generator,
    pub reflected: bool,
}

impl PayoffSpec {
    /// Equally weighted Amerasian basket call discounted at `rate`.
    pub fn amerasian(d: usize, strike: f64, rate: f64, reflected: bool) -> Self {
        Self {
            kind: PayoffKind::AmerasianCall {
                weights: vec![1.0 / d as f64; d],
                strike,
            },
            generator: Generator::Discount { rate },
            reflected,
        }
    }

    pub fn moving_average_put(d: usize, strike: f64, rate: f64, reflected: bool) -> Self {
        Self {
            kind: PayoffKind::GeoMovingAvgPut {
                weights: vec![1.0 / d as f64; d],
                strike,
            },
            generator: Generator::Discount { rate },
            reflected,
        }
    }

    pub fn shiryaev(delay: f64) -> Self {
        Self {
            kind: PayoffKind::Shiryaev { delay },
            generator: Generator::Zero,
            reflected: true,
        }
    }

    pub fn constant(value: f64, generator: Generator, reflected: bool) -> Self {
        Self {
            kind: PayoffKind::Constant { value },
            generator,
            reflected,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match &self.kind {
            PayoffKind::AmerasianCall { weights, strike } | PayoffKind::GeoMovingAvgPut { weights, strike } => {
                if weights.len() != dim {
                    return Err(Error::Config(format!(
                        "{} payoff weights for a {dim}-asset model",
                        weights.len()
                    )));
                }
                if !strike.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::Config("payoff parameters must be finite".into()));
                }
            }
            PayoffKind::Shiryaev { delay } => {
                if dim != 1 {
                    return Err(Error::Config("the delayed stopping problem is one-dimensional".into()));
                }
                if !(delay.is_finite() && *delay >= 0.0) {
                    return Err(Error::Config(format!("delay must be non-negative, got {delay}")));
                }
            }
            PayoffKind::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Config("constant payoff must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// g(X_{·∧T}) on a full fine-grid path.
    pub fn terminal(&self, path: PathView<'_>, grid: &TimeGrid) -> Result<f64> {
        self.obstacle(grid.segments(), path, grid)
    }

    /// g(u_i, X_{·∧u_i}); only the prefix up to checkpoint `i` is read.
    pub fn obstacle(&self, i: usize, path: PathView<'_>, grid: &TimeGrid) -> Result<f64> {
        let prefix = path.prefix(grid.checkpoint_index(i) + 1);
        match &self.kind {
            PayoffKind::AmerasianCall { weights, strike } => amerasian_call(prefix, weights, *strike),
            PayoffKind::GeoMovingAvgPut { weights, strike } => {
                geo_moving_avg_put(prefix, *strike, weights, grid.per_segment())
            }
            PayoffKind::Shiryaev { delay } => {
                Ok(shiryaev_obstacle(prefix, grid.checkpoint_time(i), *delay))
            }
            PayoffKind::Constant { value } => Ok(*value),
        }
    }

    /// Obstacle at every checkpoint `0..=ñ` of one path.
    pub fn obstacles(&self, path: PathView<'_>, grid: &TimeGrid) -> Result<Vec<f64>> {
        let n_cp = grid.segments() + 1;
        match &self.kind {
            PayoffKind::AmerasianCall { weights, strike } => {
                let mut integrals = vec![0.0; path.dim()];
                let mut out = Vec::with_capacity(n_cp);
                out.push(amerasian_from_integrals(&integrals, 0.0, path.first(), weights, *strike));
                for i in 1..n_cp {
                    for j in grid.checkpoint_index(i - 1) + 1..=grid.checkpoint_index(i) {
                        accumulate_trapezoid(&path, j, &mut integrals);
                    }
                    let t = path.time(grid.checkpoint_index(i)) - path.time(0);
                    out.push(amerasian_from_integrals(&integrals, t, path.first(), weights, *strike));
                }
                Ok(out)
            }
            _ => (0..n_cp).map(|i| self.obstacle(i, path, grid)).collect(),
        }
    }
}

fn accumulate_trapezoid(path: &PathView<'_>, j: usize, integrals: &mut [f64]) {
    let dt = path.time(j) - path.time(j - 1);
    let (a, b) = (path.point(j - 1), path.point(j));
    for ((acc, &x0), &x1) in integrals.iter_mut().zip(a).zip(b) {
        *acc += 0.5 * dt * (x0 + x1);
    }
}

fn amerasian_from_integrals(integrals: &[f64], t: f64, x0: &[f64], weights: &[f64], strike: f64) -> f64 {
    let basket: f64 = if t > 0.0 {
        weights.iter().zip(integrals).map(|(w, i)| w * i / t).sum()
    } else {
        weights.iter().zip(x0).map(|(w, x)| w * x).sum()
    };
    (basket - strike).max(0.0)
}

/// Amerasian basket call on a path prefix; the running average divides by the
/// prefix length in time. A single-point prefix gives `(Σ w_i x_0^i − K)^+`.
pub fn amerasian_call(prefix: PathView<'_>, weights: &[f64], strike: f64) -> Result<f64> {
    if weights.len() != prefix.dim() {
        return Err(Error::Shape(format!(
            "{} weights for a {}-dimensional path",
            weights.len(),
            prefix.dim()
        )));
    }
    let mut integrals = vec![0.0; prefix.dim()];
    for j in 1..prefix.len() {
        accumulate_trapezoid(&prefix, j, &mut integrals);
    }
    let t = prefix.last_time() - prefix.time(0);
    Ok(amerasian_from_integrals(&integrals, t, prefix.first(), weights, strike))
}

/// Geometric moving-average put on a prefix made of whole windows of
/// `per_window` fine steps. With `j` completed windows the geometric mean uses
/// exponent `1/j`; with none, the spot basket is used.
pub fn geo_moving_avg_put(
    prefix: PathView<'_>,
    strike: f64,
    weights: &[f64],
    per_window: usize,
) -> Result<f64> {
    if weights.len() != prefix.dim() {
        return Err(Error::Shape(format!(
            "{} weights for a {}-dimensional path",
            weights.len(),
            prefix.dim()
        )));
    }
    if per_window == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    let windows = (prefix.len() - 1) / per_window;
    if windows == 0 {
        let spot: f64 = weights.iter().zip(prefix.first()).map(|(w, x)| w * x).sum();
        return Ok((strike - spot).max(0.0));
    }
    let averages: Vec<Vec<f64>> = (0..prefix.dim())
        .map(|asset| {
            (0..windows)
                .map(|w| {
                    let win = prefix.slice(w * per_window, (w + 1) * per_window + 1);
                    win.trapezoid(asset) / (win.last_time() - win.time(0))
                })
                .collect()
        })
        .collect();
    geometric_put_from_windows(&averages, weights, strike)
}

/// `(K − Σ_i w_i (Π_j a_{ij})^{1/J})^+` from per-asset window averages `a_{ij}`.
pub fn geometric_put_from_windows(window_averages: &[Vec<f64>], weights: &[f64], strike: f64) -> Result<f64> {
    if window_averages.len() != weights.len() {
        return Err(Error::Shape("one window-average row per asset is required".into()));
    }
    let mut basket = 0.0;
    for (asset, (avgs, w)) in window_averages.iter().zip(weights).enumerate() {
        if avgs.is_empty() {
            return Err(Error::Shape("no completed windows".into()));
        }
        let mut log_sum = 0.0;
        for (window, &a) in avgs.iter().enumerate() {
            if !(a > 0.0) {
                return Err(Error::NonPositiveAverage { asset, window, value: a });
            }
            log_sum += a.ln();
        }
        basket += w * (log_sum / avgs.len() as f64).exp();
    }
    Ok((strike - basket).max(0.0))
}

/// `W_{(t−ε)^+}` with linear interpolation between fine-grid points.
pub fn shiryaev_obstacle(prefix: PathView<'_>, t: f64, delay: f64) -> f64 {
    let s = t - delay;
    let times = prefix.times();
    if s <= times[0] {
        return prefix.first()[0];
    }
    let j = times.partition_point(|&u| u <= s);
    if j >= times.len() {
        return prefix.last()[0];
    }
    let (t0, t1) = (times[j - 1], times[j]);
    let (w0, w1) = (prefix.point(j - 1)[0], prefix.point(j)[0]);
    let lam = (s - t0) / (t1 - t0);
    if lam == 0.0 {
        w0
    } else {
        w0 + lam * (w1 - w0)
    }
}

/// f(t, X_{·∧t}, y, z) for the given spec. The implemented generators do not
/// depend on the path or on `z`.
pub fn generator_eval(spec: &PayoffSpec, _t: f64, _prefix: PathView<'_>, y: f64, _z: &[f64]) -> f64 {
    spec.generator.value(y)
}
