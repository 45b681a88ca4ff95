/// Sample mean with its standard error and a normal 95% confidence interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriceEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
}

impl PriceEstimate {
    /// Panics on an empty sample. A single sample has zero standard error.
    pub fn from_samples(xs: &[f64]) -> Self {
        assert!(!xs.is_empty(), "estimate needs at least one sample");
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self::new(mean, stderr, xs.len())
    }

    pub fn new(mean: f64, stderr: f64, samples: usize) -> Self {
        Self {
            mean,
            stderr,
            ci_low: mean - 1.96 * stderr,
            ci_high: mean + 1.96 * stderr,
            samples,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}
