//! Borrowed views of a discretely sampled path with explicit timestamps.

/// A path sampled at `times`, with `dim` coordinates per point stored row-major in `values`.
#[derive(Clone, Copy, Debug)]
pub struct PathView<'a> {
    times: &'a [f64],
    values: &'a [f64],
    dim: usize,
}

impl<'a> PathView<'a> {
    /// Panics if `values.len() != times.len() * dim`.
    pub fn new(times: &'a [f64], values: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0, "path dimension must be positive");
        assert_eq!(
            values.len(),
            times.len() * dim,
            "path values do not match timestamps"
        );
        Self { times, values, dim }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &'a [f64] {
        self.times
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first(&self) -> &'a [f64] {
        self.point(0)
    }

    pub fn last(&self) -> &'a [f64] {
        self.point(self.len() - 1)
    }

    pub fn last_time(&self) -> f64 {
        self.times[self.len() - 1]
    }

    /// The first `len` points.
    pub fn prefix(&self, len: usize) -> PathView<'a> {
        PathView {
            times: &self.times[..len],
            values: &self.values[..len * self.dim],
            dim: self.dim,
        }
    }

    /// Points `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> PathView<'a> {
        PathView {
            times: &self.times[start..end],
            values: &self.values[start * self.dim..end * self.dim],
            dim: self.dim,
        }
    }

    /// Trapezoidal integral of coordinate `asset` over the whole view.
    pub fn trapezoid(&self, asset: usize) -> f64 {
        let mut acc = 0.0;
        for j in 1..self.len() {
            let dt = self.times[j] - self.times[j - 1];
            acc += 0.5 * dt * (self.point(j - 1)[asset] + self.point(j)[asset]);
        }
        acc
    }
}
