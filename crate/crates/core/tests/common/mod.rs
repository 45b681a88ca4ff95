#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigbsde::nn::{step_loss, Driver, Mlp, StepBatch};

/// Owned data behind a [`StepBatch`].
pub struct StepData {
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub dw: Vec<f64>,
    pub t: f64,
    pub du: f64,
}

impl StepData {
    pub fn random(rng: &mut ChaCha8Rng, rows: usize, input: usize, d1: usize) -> Self {
        let du: f64 = rng.random_range(0.01..0.2);
        Self {
            features: (0..rows * input).map(|_| rng.random_range(-2.0..2.0)).collect(),
            targets: (0..rows).map(|_| rng.random_range(-1.0..3.0)).collect(),
            dw: (0..rows * d1).map(|_| rng.random_range(-1.0..1.0) * du.sqrt()).collect(),
            t: rng.random_range(0.0..1.0),
            du,
        }
    }

    pub fn batch(&self) -> StepBatch<'_> {
        StepBatch {
            features: &self.features,
            targets: &self.targets,
            dw: &self.dw,
            t: self.t,
            du: self.du,
        }
    }
}

/// Random value and Z networks with the given hidden widths.
pub fn random_nets(rng: &mut ChaCha8Rng, input: usize, hidden: &[usize], d1: usize) -> (Mlp, Mlp) {
    let mut v = Mlp::new(&Mlp::layer_dims(input, hidden, 1), rng).unwrap();
    let mut z = Mlp::new(&Mlp::layer_dims(input, hidden, d1), rng).unwrap();
    // nonzero biases so every parameter matters
    for p in v.params_mut().iter_mut().chain(z.params_mut().iter_mut()) {
        if *p == 0.0 {
            *p = rng.random_range(-0.5..0.5);
        }
    }
    (v, z)
}

/// Central finite differences of the step loss with respect to every parameter
/// of both networks: `(value_grad, z_grad)`.
pub fn fd_gradient(value: &Mlp, z: &Mlp, batch: &StepBatch<'_>, driver: &dyn Driver, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut gv = vec![0.0; value.params().len()];
    let mut v = value.clone();
    for (k, g) in gv.iter_mut().enumerate() {
        let x = v.params()[k];
        v.params_mut()[k] = x + h;
        let up = step_loss(&v, z, batch, driver).unwrap();
        v.params_mut()[k] = x - h;
        let down = step_loss(&v, z, batch, driver).unwrap();
        v.params_mut()[k] = x;
        *g = (up - down) / (2.0 * h);
    }
    let mut gz = vec![0.0; z.params().len()];
    let mut zz = z.clone();
    for (k, g) in gz.iter_mut().enumerate() {
        let x = zz.params()[k];
        zz.params_mut()[k] = x + h;
        let up = step_loss(value, &zz, batch, driver).unwrap();
        zz.params_mut()[k] = x - h;
        let down = step_loss(value, &zz, batch, driver).unwrap();
        zz.params_mut()[k] = x;
        *g = (up - down) / (2.0 * h);
    }
    (gv, gz)
}

/// Denominator floor for comparing against [`fd_gradient`]: below this magnitude
/// the central difference is dominated by rounding (`≈ ε·loss/h`), so the
/// comparison becomes absolute at `tol · floor`.
pub fn fd_floor(loss: f64, h: f64, tol: f64) -> f64 {
    8.0 * f64::EPSILON * loss.abs().max(1.0) / h / tol
}

/// Largest coordinate-wise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
