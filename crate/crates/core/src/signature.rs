//! Truncated tensor algebra and signatures of time-augmented piecewise-linear paths.
//!
//! The alphabet has `d + 1` letters; letter 0 is the time channel. Level `k` of a
//! [`TruncatedTensor`] is a dense array of `(d + 1)^k` coefficients indexed by words
//! `(j_1, ..., j_k)` in row-major order, so the word index is
//! `j_1 * A^(k-1) + ... + j_k` for alphabet size `A`.
//!
//! A linear segment with increment `Δ` has signature `exp(Δ) = Σ Δ^{⊗k} / k!`. The
//! signature of a piecewise-linear path is the ordered product of its segment
//! exponentials (Chen's relation). [`TruncatedTensor::mul_segment_exp`] fuses that
//! product with the exponential so streaming along a fine grid costs `O(A^m)` per
//! step instead of a full truncated product.

use crate::error::{Error, Result};
use crate::path::PathView;

/// Number of coefficients in levels `0..=degree` over `alphabet` letters.
fn tensor_len(alphabet: usize, degree: usize) -> Option<usize> {
    let mut total = 0usize;
    let mut width = 1usize;
    for _ in 0..=degree {
        total = total.checked_add(width)?;
        width = width.checked_mul(alphabet)?;
    }
    Some(total)
}

/// Length of the signature feature vector, `Σ_{k=1..m} (d+1)^k`.
///
/// The level-0 constant is excluded because it is identically 1.
pub fn sig_dimension(d: usize, m: usize) -> Result<usize> {
    if d == 0 || m == 0 {
        return Err(Error::Config(format!(
            "signature needs d >= 1 and m >= 1 (got d = {d}, m = {m})"
        )));
    }
    d.checked_add(1)
        .and_then(|a| tensor_len(a, m))
        .map(|n| n - 1)
        .ok_or(Error::DimensionOverflow { dim: d, degree: m })
}

/// Element of the tensor algebra truncated at `degree`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedTensor {
    alphabet: usize,
    degree: usize,
    offsets: Vec<usize>,
    coeffs: Vec<f64>,
}

impl TruncatedTensor {
    pub fn zeros(alphabet: usize, degree: usize) -> Result<Self> {
        if alphabet == 0 {
            return Err(Error::Config("alphabet must be non-empty".into()));
        }
        let total = tensor_len(alphabet, degree).ok_or(Error::DimensionOverflow {
            dim: alphabet.saturating_sub(1),
            degree,
        })?;
        let mut offsets = Vec::with_capacity(degree + 2);
        let mut off = 0usize;
        let mut width = 1usize;
        for _ in 0..=degree {
            offsets.push(off);
            off += width;
            width = width.saturating_mul(alphabet);
        }
        offsets.push(off);
        debug_assert_eq!(off, total);
        Ok(Self {
            alphabet,
            degree,
            offsets,
            coeffs: vec![0.0; total],
        })
    }

    /// The unit `(1, 0, ..., 0)`.
    pub fn identity(alphabet: usize, degree: usize) -> Result<Self> {
        let mut t = Self::zeros(alphabet, degree)?;
        t.coeffs[0] = 1.0;
        Ok(t)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// All coefficients, level 0 first.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.coeffs[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.coeffs[self.offsets[k]..self.offsets[k + 1]]
    }

    /// Coefficient of a word given as a letter sequence.
    pub fn word(&self, letters: &[usize]) -> f64 {
        let idx = letters.iter().fold(0usize, |acc, &j| {
            assert!(j < self.alphabet, "letter {j} outside the alphabet");
            acc * self.alphabet + j
        });
        self.level(letters.len())[idx]
    }

    /// Levels `1..=degree` flattened; this is the network input.
    pub fn features(&self) -> &[f64] {
        &self.coeffs[1..]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Drop every level above `degree`.
    pub fn project(&self, degree: usize) -> Result<Self> {
        if degree > self.degree {
            return Err(Error::Shape(format!(
                "cannot project degree {} up to {degree}",
                self.degree
            )));
        }
        let mut out = Self::zeros(self.alphabet, degree)?;
        let n = out.coeffs.len();
        out.coeffs.copy_from_slice(&self.coeffs[..n]);
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Euclidean norm over all coefficients.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.alphabet != other.alphabet || self.degree != other.degree {
            return Err(Error::Shape(format!(
                "tensor shapes differ: (alphabet {}, degree {}) vs (alphabet {}, degree {})",
                self.alphabet, self.degree, other.alphabet, other.degree
            )));
        }
        Ok(())
    }

    /// Truncated tensor product `self ⊗ other`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = Self::zeros(self.alphabet, self.degree)?;
        for k in 0..=self.degree {
            let dst = &mut out.coeffs[out.offsets[k]..out.offsets[k + 1]];
            for j in 0..=k {
                let left = self.level(j);
                let right = other.level(k - j);
                let rw = right.len();
                for (p, &a) in left.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let row = &mut dst[p * rw..(p + 1) * rw];
                    for (o, &b) in row.iter_mut().zip(right) {
                        *o += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// In-place `self ← self ⊗ exp(delta)`.
    ///
    /// For each level `k` (highest first, so lower levels are still the old values)
    /// the new level is evaluated in Horner form
    /// `((S_0 Δ/k + S_1) Δ/(k-1) + ...) Δ/1 + S_k`.
    pub fn mul_segment_exp(&mut self, delta: &[f64], scratch: &mut ExpScratch) {
        assert_eq!(delta.len(), self.alphabet, "increment length must equal the alphabet size");
        match self.alphabet {
            2 => self.mul_segment_exp_n::<2>(delta, scratch),
            3 => self.mul_segment_exp_n::<3>(delta, scratch),
            4 => self.mul_segment_exp_n::<4>(delta, scratch),
            5 => self.mul_segment_exp_n::<5>(delta, scratch),
            6 => self.mul_segment_exp_n::<6>(delta, scratch),
            _ => self.mul_segment_exp_dyn(delta, scratch),
        }
    }

    fn mul_segment_exp_n<const A: usize>(&mut self, delta: &[f64], scratch: &mut ExpScratch) {
        let delta: &[f64; A] = delta.try_into().expect("alphabet size");
        scratch.ensure(self.level_width(self.degree.saturating_sub(1)) * A);
        let ExpScratch { acc, next } = scratch;
        for k in (1..=self.degree).rev() {
            acc[0] = self.coeffs[0];
            let mut len = 1usize;
            for i in 1..k {
                let c = 1.0 / (k - i + 1) as f64;
                let src = self.level(i);
                for ((&s, out), add) in acc[..len]
                    .iter()
                    .zip(next.chunks_exact_mut(A))
                    .zip(src.chunks_exact(A))
                {
                    let s = s * c;
                    for j in 0..A {
                        out[j] = s * delta[j] + add[j];
                    }
                }
                len *= A;
                std::mem::swap(acc, next);
            }
            let dst = self.level_mut(k);
            for (&s, out) in acc[..len].iter().zip(dst.chunks_exact_mut(A)) {
                for j in 0..A {
                    out[j] += s * delta[j];
                }
            }
        }
    }

    fn mul_segment_exp_dyn(&mut self, delta: &[f64], scratch: &mut ExpScratch) {
        let a = self.alphabet;
        scratch.ensure(self.level_width(self.degree.saturating_sub(1)) * a);
        let ExpScratch { acc, next } = scratch;
        for k in (1..=self.degree).rev() {
            acc[0] = self.coeffs[0];
            let mut len = 1usize;
            for i in 1..k {
                let c = 1.0 / (k - i + 1) as f64;
                let src = self.level(i);
                for p in 0..len {
                    let s = acc[p] * c;
                    let out = &mut next[p * a..(p + 1) * a];
                    let add = &src[p * a..(p + 1) * a];
                    for ((o, &d), &x) in out.iter_mut().zip(delta).zip(add) {
                        *o = s * d + x;
                    }
                }
                len *= a;
                std::mem::swap(acc, next);
            }
            let dst = self.level_mut(k);
            for p in 0..len {
                let s = acc[p];
                for (o, &d) in dst[p * a..(p + 1) * a].iter_mut().zip(delta) {
                    *o += s * d;
                }
            }
        }
    }

    /// Level `k - 1` (shared) and level `k` (mutable) at once.
    pub(crate) fn adjacent_levels_mut(&mut self, k: usize) -> (&[f64], &mut [f64]) {
        let (lo, hi) = self.coeffs.split_at_mut(self.offsets[k]);
        (&lo[self.offsets[k - 1]..], &mut hi[..self.offsets[k + 1] - self.offsets[k]])
    }

    fn level_width(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }
}

/// Reusable buffers for [`TruncatedTensor::mul_segment_exp`].
#[derive(Debug, Default, Clone)]
pub struct ExpScratch {
    acc: Vec<f64>,
    next: Vec<f64>,
}

impl ExpScratch {
    fn ensure(&mut self, len: usize) {
        let len = len.max(1);
        if self.acc.len() < len {
            self.acc.resize(len, 0.0);
            self.next.resize(len, 0.0);
        }
    }
}

/// Exact signature of one linear segment: the truncated tensor exponential of `delta`.
pub fn segment_signature(delta: &[f64], m: usize) -> Result<TruncatedTensor> {
    let mut t = TruncatedTensor::identity(delta.len(), m)?;
    let a = delta.len();
    for k in 1..=m {
        let inv_k = 1.0 / k as f64;
        let (lower, upper) = t.coeffs.split_at_mut(t.offsets[k]);
        let prev = &lower[t.offsets[k - 1]..];
        let cur = &mut upper[..prev.len() * a];
        for (p, &v) in prev.iter().enumerate() {
            for (c, &d) in cur[p * a..(p + 1) * a].iter_mut().zip(delta) {
                *c = v * d * inv_k;
            }
        }
    }
    Ok(t)
}

fn check_times(times: &[f64]) -> Result<()> {
    for i in 1..times.len() {
        if !(times[i] > times[i - 1]) {
            return Err(Error::NonMonotoneTime { index: i });
        }
    }
    Ok(())
}

/// Signature of the time-augmented linear interpolation of `path`.
pub fn path_signature(path: PathView<'_>, m: usize) -> Result<TruncatedTensor> {
    if path.is_empty() {
        return Err(Error::Shape("path needs at least one point".into()));
    }
    check_times(path.times())?;
    let mut sig = TruncatedTensor::identity(path.dim() + 1, m)?;
    let mut scratch = ExpScratch::default();
    let mut delta = vec![0.0; path.dim() + 1];
    for j in 1..path.len() {
        augmented_increment(&path, j, &mut delta);
        sig.mul_segment_exp(&delta, &mut scratch);
    }
    Ok(sig)
}

/// `(Δt, ΔX)` between points `j - 1` and `j`.
pub(crate) fn augmented_increment(path: &PathView<'_>, j: usize, delta: &mut [f64]) {
    delta[0] = path.time(j) - path.time(j - 1);
    let (prev, cur) = (path.point(j - 1), path.point(j));
    for ((d, &x1), &x0) in delta[1..].iter_mut().zip(cur).zip(prev) {
        *d = x1 - x0;
    }
}

/// Flattened signature features (level 0 dropped) at one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct SigFeatures {
    pub values: Vec<f64>,
    pub checkpoint_index: usize,
}

/// Signature features at every checkpoint, computed by one pass along the path.
///
/// `checkpoints` are times on the path's grid with `checkpoints[0]` equal to the
/// first timestamp. Features at the first checkpoint are the zero vector.
pub fn stream_checkpoints(
    path: PathView<'_>,
    checkpoints: &[f64],
    m: usize,
) -> Result<Vec<SigFeatures>> {
    if path.is_empty() || checkpoints.is_empty() {
        return Err(Error::Shape("need a non-empty path and checkpoint list".into()));
    }
    check_times(path.times())?;
    let indices = checkpoint_indices(path.times(), checkpoints)?;
    if indices[0] != 0 {
        return Err(Error::Config(
            "first checkpoint must coincide with the start of the path".into(),
        ));
    }
    let mut sig = TruncatedTensor::identity(path.dim() + 1, m)?;
    let mut scratch = ExpScratch::default();
    let mut delta = vec![0.0; path.dim() + 1];
    let mut out = Vec::with_capacity(indices.len());
    let mut at = 0usize;
    for (ci, &target) in indices.iter().enumerate() {
        if target < at {
            return Err(Error::NonMonotoneTime { index: ci });
        }
        while at < target {
            at += 1;
            augmented_increment(&path, at, &mut delta);
            sig.mul_segment_exp(&delta, &mut scratch);
        }
        out.push(SigFeatures {
            values: sig.features().to_vec(),
            checkpoint_index: ci,
        });
    }
    Ok(out)
}

/// Map checkpoint times to grid indices, allowing relative rounding of 1e-9.
fn checkpoint_indices(times: &[f64], checkpoints: &[f64]) -> Result<Vec<usize>> {
    let span = (times[times.len() - 1] - times[0]).abs().max(1.0);
    let tol = 1e-9 * span;
    checkpoints
        .iter()
        .map(|&u| {
            let idx = times.partition_point(|&t| t < u - tol);
            if idx < times.len() && (times[idx] - u).abs() <= tol {
                Ok(idx)
            } else {
                Err(Error::OffGrid { time: u })
            }
        })
        .collect()
}

/// Squared norm of the signature levels `m+1 ..= m+extra` of `path`.
///
/// This is the squared distance between the degree-`(m+extra)` signature and the
/// degree-`m` signature embedded with zero upper levels.
pub fn truncation_discrepancy(path: PathView<'_>, m: usize, extra: usize) -> Result<f64> {
    let sig = path_signature(path, m + extra)?;
    Ok((m + 1..=m + extra)
        .flat_map(|k| sig.level(k).iter())
        .map(|c| c * c)
        .sum())
}
