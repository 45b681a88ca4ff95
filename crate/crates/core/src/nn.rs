//! Feedforward regressors (tanh hidden layers, identity output), the quadratic step
//! loss of the backward scheme with exact reverse-mode gradients, and Adam.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Hidden widths used throughout: five layers of 16 units.
pub const DEFAULT_HIDDEN: [usize; 5] = [16; 5];

/// Multilayer perceptron with all parameters in one flat vector.
///
/// Layer `l` maps `dims[l] → dims[l+1]`; its weights are stored `out × in`
/// row-major, followed by its biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for l in 0..net.layers() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer dimensions {dims:?}")));
        }
        let count = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; count],
        })
    }

    /// `input → hidden… → output` layer list.
    pub fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        dims
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter ranges `(weights, biases)` of layer `l`.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start: usize = self.dims[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        (start..start + i * o, start + i * o..start + i * o + o)
    }

    /// Biases of the output layer.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let (_, b) = self.layer_range(self.layers() - 1);
        &mut self.params[b]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Single-sample evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::default();
        Ok(self.forward_batch(x, 1, &mut tape).to_vec())
    }

    /// Evaluate `rows` inputs (row-major) and keep the activations for [`Mlp::backward`].
    pub fn forward_batch<'t>(&self, input: &[f64], rows: usize, tape: &'t mut Tape) -> &'t [f64] {
        assert_eq!(input.len(), rows * self.input_dim(), "batch input shape");
        let layers = self.layers();
        tape.rows = rows;
        tape.acts.resize_with(layers, Vec::new);
        for l in 0..layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (wr, br) = self.layer_range(l);
            let (w, b) = (&self.params[wr], &self.params[br]);
            let (done, rest) = tape.acts.split_at_mut(l);
            let src: &[f64] = if l == 0 { input } else { &done[l - 1] };
            let dst = &mut rest[0];
            dst.resize(rows * fan_out, 0.0);
            for y in dst.chunks_exact_mut(fan_out) {
                y.copy_from_slice(b);
            }
            // dst += src · Wᵀ
            gemm_acc(rows, fan_in, fan_out, src, (fan_in, 1), w, (1, fan_in), dst);
            if l + 1 < layers {
                dst.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        &tape.acts[layers - 1]
    }

    /// Accumulate `∂(Σ_r d_out[r] · output[r]) / ∂params` into `grad`.
    ///
    /// `tape` must hold the activations of the last [`Mlp::forward_batch`] on `input`.
    pub fn backward(&self, input: &[f64], tape: &mut Tape, d_out: &[f64], grad: &mut [f64]) {
        let rows = tape.rows;
        assert_eq!(d_out.len(), rows * self.output_dim(), "output gradient shape");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer shape");
        let Tape { acts, delta, delta_prev, .. } = tape;
        delta.clear();
        delta.extend_from_slice(d_out);
        for l in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let (wr, br) = self.layer_range(l);
            let w = &self.params[wr.clone()];
            let src: &[f64] = if l == 0 { input } else { &acts[l - 1] };
            {
                let (gw, gb) = grad[wr.start..br.end].split_at_mut(wr.len());
                for d in delta.chunks_exact(fan_out) {
                    for (g, &dj) in gb.iter_mut().zip(d) {
                        *g += dj;
                    }
                }
                // gW += δᵀ · src
                gemm_acc(fan_out, rows, fan_in, delta, (1, fan_out), src, (fan_in, 1), gw);
            }
            if l == 0 {
                break;
            }
            delta_prev.clear();
            delta_prev.resize(rows * fan_in, 0.0);
            // δ_prev = δ · W, then through tanh'
            gemm_acc(rows, fan_out, fan_in, delta, (fan_out, 1), w, (fan_in, 1), delta_prev);
            for (g, &a) in delta_prev.iter_mut().zip(src) {
                *g *= 1.0 - a * a;
            }
            std::mem::swap(delta, delta_prev);
        }
    }

    /// Plain-text dump: versioned header, layer dims, then one parameter per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FILE_MAGIC} {FILE_VERSION}");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "dims {}", dims.join(" "));
        let _ = writeln!(s, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{p:?}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [magic, version] if *magic == FILE_MAGIC => {
                if *version != FILE_VERSION {
                    return Err(Error::Format(format!("unsupported version {version}")));
                }
            }
            _ => return Err(Error::Format(format!("bad header {header:?}"))),
        }
        let dims_line = lines.next().ok_or_else(|| Error::Format("missing dims".into()))?;
        let dims = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| Error::Format("missing dims".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&dims)?;
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .ok_or_else(|| Error::Format("missing parameter count".into()))?
            .trim()
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::Format(e.to_string()))?;
        if count != net.params.len() {
            return Err(Error::Format(format!(
                "{count} parameters listed, dims imply {}",
                net.params.len()
            )));
        }
        for (i, p) in net.params.iter_mut().enumerate() {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("truncated at parameter {i}")))?;
            *p = line
                .trim()
                .parse()
                .map_err(|e: std::num::ParseFloatError| Error::Format(e.to_string()))?;
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

const FILE_MAGIC: &str = "sigbsde-mlp";
const FILE_VERSION: &str = "v1";

/// Activations and backprop buffers for one network.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    rows: usize,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Tape {
    /// Inputs to the output layer from the last [`Mlp::forward_batch`]: the last
    /// hidden activations, or `input` itself for a single-layer network.
    pub fn penultimate<'a>(&'a self, input: &'a [f64]) -> &'a [f64] {
        match self.acts.len() {
            0 | 1 => input,
            n => &self.acts[n - 2],
        }
    }
}

/// `c += a · b` for an `m × k` matrix `a` and a `k × n` matrix `b` given by
/// `(row, column)` strides; `c` is dense row-major `m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!(k == 0 || (k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    assert_eq!(c.len(), m * n);
    // SAFETY: the strides address only elements inside `a`, `b` and `c`, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Generator `f(t, ·, y, z)` of the backward equation, with its partial derivatives.
pub trait Driver: Sync {
    /// Returns `(f, ∂f/∂y)` and writes `∂f/∂z` into `dz`.
    fn eval(&self, t: f64, y: f64, z: &[f64], dz: &mut [f64]) -> (f64, f64);
}

/// Training rows for one backward step, all row-major and of equal row count.
#[derive(Clone, Copy, Debug)]
pub struct StepBatch<'a> {
    /// `rows × input_dim` network inputs at `u_i`.
    pub features: &'a [f64],
    /// Û_{u_{i+1}} per row.
    pub targets: &'a [f64],
    /// ΔW_{u_i} per row, `rows × d1`.
    pub dw: &'a [f64],
    pub t: f64,
    pub du: f64,
}

impl StepBatch<'_> {
    pub fn rows(&self) -> usize {
        self.targets.len()
    }
}

/// Buffers reused across [`loss_and_grad`] calls.
#[derive(Clone, Debug, Default)]
pub struct LossWorkspace {
    value_tape: Tape,
    z_tape: Tape,
    d_value: Vec<f64>,
    d_z: Vec<f64>,
    dz: Vec<f64>,
    pub value_grad: Vec<f64>,
    pub z_grad: Vec<f64>,
}

/// Mean of `|target − (U − f(t, U, Z)·Δu + Z·ΔW)|²` over the batch, with its exact
/// gradient w.r.t. both parameter sets left in `ws.value_grad` / `ws.z_grad`.
pub fn loss_and_grad(
    value_net: &Mlp,
    z_net: &Mlp,
    batch: &StepBatch<'_>,
    driver: &dyn Driver,
    ws: &mut LossWorkspace,
) -> Result<f64> {
    let rows = batch.rows();
    let d1 = z_net.output_dim();
    check_step_shapes(value_net, z_net, batch)?;
    if !(batch.du > 0.0) {
        return Err(Error::Config(format!("Δu must be positive, got {}", batch.du)));
    }
    let u = value_net.forward_batch(batch.features, rows, &mut ws.value_tape);
    let z = z_net.forward_batch(batch.features, rows, &mut ws.z_tape);
    ws.d_value.clear();
    ws.d_value.resize(rows, 0.0);
    ws.d_z.clear();
    ws.d_z.resize(rows * d1, 0.0);
    ws.dz.resize(d1, 0.0);
    let scale = 2.0 / rows as f64;
    let mut loss = 0.0;
    for r in 0..rows {
        let zr = &z[r * d1..(r + 1) * d1];
        let dwr = &batch.dw[r * d1..(r + 1) * d1];
        let (f, fy) = driver.eval(batch.t, u[r], zr, &mut ws.dz);
        let pred = u[r] - f * batch.du + dot(zr, dwr);
        let err = batch.targets[r] - pred;
        let sq = err * err;
        if !sq.is_finite() {
            return Err(Error::NonFiniteLoss { sample: r });
        }
        loss += sq;
        // ∂loss/∂pred = −2·err / rows
        let g = -scale * err;
        ws.d_value[r] = g * (1.0 - fy * batch.du);
        for ((dzo, &fz), &w) in ws.d_z[r * d1..(r + 1) * d1].iter_mut().zip(&ws.dz).zip(dwr) {
            *dzo = g * (w - fz * batch.du);
        }
    }
    ws.value_grad.clear();
    ws.value_grad.resize(value_net.params().len(), 0.0);
    ws.z_grad.clear();
    ws.z_grad.resize(z_net.params().len(), 0.0);
    value_net.backward(batch.features, &mut ws.value_tape, &ws.d_value, &mut ws.value_grad);
    z_net.backward(batch.features, &mut ws.z_tape, &ws.d_z, &mut ws.z_grad);
    Ok(loss / rows as f64)
}

/// Loss only, no gradient.
pub fn step_loss(
    value_net: &Mlp,
    z_net: &Mlp,
    batch: &StepBatch<'_>,
    driver: &dyn Driver,
) -> Result<f64> {
    check_step_shapes(value_net, z_net, batch)?;
    let rows = batch.rows();
    let d1 = z_net.output_dim();
    let (mut tu, mut tz) = (Tape::default(), Tape::default());
    let u = value_net.forward_batch(batch.features, rows, &mut tu);
    let z = z_net.forward_batch(batch.features, rows, &mut tz);
    let mut dz = vec![0.0; d1];
    let mut loss = 0.0;
    for r in 0..rows {
        let zr = &z[r * d1..(r + 1) * d1];
        let (f, _) = driver.eval(batch.t, u[r], zr, &mut dz);
        let err = batch.targets[r] - (u[r] - f * batch.du + dot(zr, &batch.dw[r * d1..(r + 1) * d1]));
        if !err.is_finite() {
            return Err(Error::NonFiniteLoss { sample: r });
        }
        loss += err * err;
    }
    Ok(loss / rows as f64)
}

fn check_step_shapes(value_net: &Mlp, z_net: &Mlp, batch: &StepBatch<'_>) -> Result<()> {
    let rows = batch.rows();
    if rows == 0 {
        return Err(Error::Shape("empty training batch".into()));
    }
    if value_net.output_dim() != 1 {
        return Err(Error::Shape("value network must have one output".into()));
    }
    if value_net.input_dim() != z_net.input_dim() {
        return Err(Error::Shape("value and Z networks take different inputs".into()));
    }
    if batch.features.len() != rows * value_net.input_dim() {
        return Err(Error::Shape(format!(
            "feature block has {} entries, expected {rows} × {}",
            batch.features.len(),
            value_net.input_dim()
        )));
    }
    if batch.dw.len() != rows * z_net.output_dim() {
        return Err(Error::Shape("ΔW block does not match the Z network output".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - beta2.powi(state.step.min(i32::MAX as u64) as i32);
    let step_size = lr / bc1;
    let bc2_sqrt = bc2.sqrt();
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
    }
    Ok(())
}
