//! Euler–Maruyama simulation of the forward process on a fine grid.
//!
//! Every path draws its Brownian increments from its own ChaCha stream
//! (`stream = path index`) under one master seed, so a batch is bit-identical
//! regardless of how many threads generated it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::path::PathView;

/// Fine grid of `steps` Euler steps on `[0, horizon]`, grouped into segments of
/// `per_segment` steps. Checkpoints sit at segment boundaries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    per_segment: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize, per_segment: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 || per_segment == 0 {
            return Err(Error::Config("steps and points per segment must be positive".into()));
        }
        if !steps.is_multiple_of(per_segment) {
            return Err(Error::Config(format!(
                "fine steps n = {steps} is not divisible by points per segment k = {per_segment}"
            )));
        }
        Ok(Self {
            horizon,
            steps,
            per_segment,
        })
    }

    /// Grid with `segments` checkpoints intervals over `steps` fine steps.
    pub fn with_segments(horizon: f64, steps: usize, segments: usize) -> Result<Self> {
        if segments == 0 || !steps.is_multiple_of(segments) {
            return Err(Error::Config(format!(
                "fine steps n = {steps} is not divisible by the segment count {segments}"
            )));
        }
        Self::new(horizon, steps, steps / segments)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn per_segment(&self) -> usize {
        self.per_segment
    }

    /// Number of segments ñ = n / k.
    pub fn segments(&self) -> usize {
        self.steps / self.per_segment
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time of fine point `j`; the last point is the horizon exactly.
    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            self.horizon * j as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }

    /// Fine index of checkpoint `i`.
    pub fn checkpoint_index(&self, i: usize) -> usize {
        i * self.per_segment
    }

    pub fn checkpoint_time(&self, i: usize) -> f64 {
        self.time(self.checkpoint_index(i))
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        (0..=self.segments()).map(|i| self.checkpoint_time(i)).collect()
    }

    /// Δu_i = u_{i+1} - u_i.
    pub fn segment_length(&self, i: usize) -> f64 {
        self.checkpoint_time(i + 1) - self.checkpoint_time(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Independent geometric Brownian motions, `dX^i = r X^i dt + σ_i X^i dW^i`.
    BlackScholes,
    /// `X = x0 + W`.
    Brownian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub x0: Vec<f64>,
    pub rate: f64,
    pub sigma: Vec<f64>,
}

impl ModelSpec {
    pub fn black_scholes(x0: Vec<f64>, rate: f64, sigma: Vec<f64>) -> Result<Self> {
        let m = Self {
            kind: ModelKind::BlackScholes,
            x0,
            rate,
            sigma,
        };
        m.validate()?;
        Ok(m)
    }

    /// `d` identical assets with the same spot and volatility.
    pub fn black_scholes_uniform(d: usize, x0: f64, rate: f64, sigma: f64) -> Result<Self> {
        Self::black_scholes(vec![x0; d], rate, vec![sigma; d])
    }

    pub fn brownian(d: usize) -> Result<Self> {
        let m = Self {
            kind: ModelKind::Brownian,
            x0: vec![0.0; d],
            rate: 0.0,
            sigma: vec![1.0; d],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x0.is_empty() {
            return Err(Error::Config("model needs at least one asset".into()));
        }
        if self.sigma.len() != self.x0.len() {
            return Err(Error::Config(format!(
                "{} volatilities for {} assets",
                self.sigma.len(),
                self.x0.len()
            )));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("volatilities must be finite and non-negative".into()));
        }
        if !self.rate.is_finite() || self.x0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("rate and spot must be finite".into()));
        }
        Ok(())
    }

    /// State dimension d.
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Brownian dimension d1 (equal to d for both models).
    pub fn noise_dim(&self) -> usize {
        self.x0.len()
    }

    /// One Euler–Maruyama step `x + b(t,x) dt + σ(t,x) dW`.
    pub fn euler_step(&self, x: &[f64], t: f64, dw: &[f64], dt: f64) -> Vec<f64> {
        let mut out = x.to_vec();
        self.euler_step_in_place(&mut out, t, dw, dt);
        out
    }

    pub(crate) fn euler_step_in_place(&self, x: &mut [f64], _t: f64, dw: &[f64], dt: f64) {
        match self.kind {
            ModelKind::BlackScholes => {
                for ((xi, &s), &w) in x.iter_mut().zip(&self.sigma).zip(dw) {
                    *xi += self.rate * *xi * dt + s * *xi * w;
                }
            }
            ModelKind::Brownian => {
                for (xi, &w) in x.iter_mut().zip(dw) {
                    *xi += w;
                }
            }
        }
    }
}

/// `batch` simulated paths on the fine grid together with their Brownian increments.
#[derive(Clone, Debug)]
pub struct PathBatch {
    grid: TimeGrid,
    times: Vec<f64>,
    dim: usize,
    noise_dim: usize,
    batch: usize,
    seed: u64,
    states: Vec<f64>,
    dw: Vec<f64>,
}

impl PathBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// All states, `batch × (n+1) × d` row-major.
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// All increments, `batch × n × d1` row-major.
    pub fn increments(&self) -> &[f64] {
        &self.dw
    }

    pub fn path(&self, p: usize) -> PathView<'_> {
        let w = (self.grid.steps() + 1) * self.dim;
        PathView::new(&self.times, &self.states[p * w..(p + 1) * w], self.dim)
    }

    /// Fine increments of path `p`, `n × d1`.
    pub fn path_increments(&self, p: usize) -> &[f64] {
        let w = self.grid.steps() * self.noise_dim;
        &self.dw[p * w..(p + 1) * w]
    }

    /// ΔW_{u_i}: sum of the fine increments inside segment `i`.
    pub fn segment_increment(&self, p: usize, i: usize, out: &mut [f64]) {
        let k = self.grid.per_segment();
        let inc = self.path_increments(p);
        out.fill(0.0);
        for j in i * k..(i + 1) * k {
            for (o, &w) in out.iter_mut().zip(&inc[j * self.noise_dim..(j + 1) * self.noise_dim]) {
                *o += w;
            }
        }
    }

    /// ΔW_{u_i} for every path, `batch × d1`.
    pub fn segment_increments(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * self.noise_dim];
        for (p, row) in out.chunks_mut(self.noise_dim).enumerate() {
            self.segment_increment(p, i, row);
        }
        out
    }
}

/// Simulate `batch` independent Euler paths of `model` on `grid`.
pub fn simulate_batch(model: &ModelSpec, grid: &TimeGrid, batch: usize, seed: u64) -> Result<PathBatch> {
    model.validate()?;
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let (d, d1, n) = (model.dim(), model.noise_dim(), grid.steps());
    let times = grid.times();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut states = vec![0.0; batch * (n + 1) * d];
    let mut dw = vec![0.0; batch * n * d1];
    states
        .par_chunks_mut((n + 1) * d)
        .zip(dw.par_chunks_mut(n * d1))
        .enumerate()
        .for_each(|(p, (xs, ws))| {
            let mut rng = path_rng(seed, p as u64);
            for w in ws.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = z * sqrt_dt;
            }
            xs[..d].copy_from_slice(&model.x0);
            for j in 0..n {
                let (done, rest) = xs.split_at_mut((j + 1) * d);
                let next = &mut rest[..d];
                next.copy_from_slice(&done[j * d..]);
                model.euler_step_in_place(next, times[j], &ws[j * d1..(j + 1) * d1], dt);
            }
        });
    Ok(PathBatch {
        grid: *grid,
        times,
        dim: d,
        noise_dim: d1,
        batch,
        seed,
        states,
        dw,
    })
}

/// Per-path generator: ChaCha stream `path` under `seed`.
pub(crate) fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// SplitMix64 mixing of a master seed with a tag, for independent sub-seeds.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
