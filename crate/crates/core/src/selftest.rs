//! Runtime checks of the signature identities on random paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::path::PathView;
use crate::signature::{path_signature, segment_signature, stream_checkpoints, TruncatedTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfTestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelfTestReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed()).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    /// `check,max_error,tolerance,status` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,max_error,tolerance,status\n");
        for c in &self.checks {
            let status = if c.passed() { "pass" } else { "fail" };
            s.push_str(&format!("{},{:e},{:e},{}\n", c.name, c.max_error, c.tolerance, status));
        }
        s
    }
}

fn random_path(rng: &mut ChaCha8Rng, dim: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut times = vec![0.0];
    for _ in 1..len {
        let last = *times.last().unwrap();
        times.push(last + rng.random_range(0.01..0.2));
    }
    let values = (0..len * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    (times, values)
}

/// Chen's identity, the linear-path closed form, streaming consistency and the
/// exponential inverse, each over `trials` random paths.
pub fn run_signature_selftest(dim: usize, degree: usize, trials: usize, seed: u64) -> Result<SelfTestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut chen, mut linear, mut stream, mut inverse) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let len = rng.random_range(3..12);
        let (times, values) = random_path(&mut rng, dim, len);
        let path = PathView::new(&times, &values, dim);
        let cut = rng.random_range(1..len - 1);
        let whole = path_signature(path, degree)?;
        let left = path_signature(path.slice(0, cut + 1), degree)?;
        let right = path_signature(path.slice(cut, len), degree)?;
        chen = chen.max(left.mul(&right)?.max_abs_diff(&whole)? / (1.0 + whole.norm()));

        let two = PathView::new(&times[..2], &values[..2 * dim], dim);
        let mut delta = vec![times[1] - times[0]];
        delta.extend((0..dim).map(|a| values[dim + a] - values[a]));
        linear = linear.max(path_signature(two, degree)?.max_abs_diff(&segment_signature(&delta, degree)?)?);

        let cps = [times[0], times[cut], times[len - 1]];
        let streamed = stream_checkpoints(path, &cps, degree)?;
        let direct = path_signature(path.prefix(cut + 1), degree)?;
        let err = streamed[1]
            .values
            .iter()
            .zip(direct.features())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        stream = stream.max(err);

        let neg: Vec<f64> = delta.iter().map(|x| -x).collect();
        let id = segment_signature(&delta, degree)?.mul(&segment_signature(&neg, degree)?)?;
        inverse = inverse.max(id.max_abs_diff(&TruncatedTensor::identity(dim + 1, degree)?)?);
    }
    Ok(SelfTestReport {
        checks: vec![
            CheckOutcome { name: "chen", max_error: chen, tolerance: 1e-12 },
            CheckOutcome { name: "linear_segment", max_error: linear, tolerance: 1e-13 },
            CheckOutcome { name: "streaming", max_error: stream, tolerance: 1e-12 },
            CheckOutcome { name: "exp_inverse", max_error: inverse, tolerance: 1e-13 },
        ],
    })
}
