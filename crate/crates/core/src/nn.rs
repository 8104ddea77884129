//! Time-conditioned MLP velocity model with hand-written backpropagation,
//! plain SGD and Adam, and a JSON checkpoint format.
//!
//! Input layout per sample: `[t, sin(2πkt), cos(2πkt) for k = 1..=4, y, x]`.
//! Hidden layers use SiLU, the output layer is linear with width `m`. Only the
//! `x`-velocity is modeled; the `y`-velocity is zero by construction.
//!
//! Parameters live in one flat vector, layer by layer, each layer stored as a
//! row-major `out × in` weight block followed by its `out` biases.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of sinusoidal frequencies; each contributes a sine and a cosine.
pub const FOURIER_FREQUENCIES: usize = 4;
/// Width of the time featurization (raw `t` plus sinusoids).
pub const TIME_FEATURES: usize = 1 + 2 * FOURIER_FREQUENCIES;
/// Checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;
/// Samples per gradient chunk. Fixed so the reduction order does not depend
/// on the thread count.
const GRAD_CHUNK: usize = 64;

pub const ACTIVATION: &str = "silu";

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// `[t, sin(2πt), cos(2πt), …, sin(8πt), cos(8πt)]`.
pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    out[0] = t;
    for k in 1..=FOURIER_FREQUENCIES {
        let a = 2.0 * std::f64::consts::PI * k as f64 * t;
        out[2 * k - 1] = a.sin();
        out[2 * k] = a.cos();
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inp: usize,
    out: usize,
    offset: usize,
}

impl Layer {
    fn weights<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.out, self.inp), &p[self.offset..self.offset + self.out * self.inp]).expect("layer shape")
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.out * self.inp;
        &p[start..start + self.out]
    }

    fn len(&self) -> usize {
        self.out * (self.inp + 1)
    }
}

/// Velocity network `v_θ(t, y, x) ∈ R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    d: usize,
    m: usize,
    hidden: Vec<usize>,
    params: Vec<f64>,
}

/// Samples `(t, y, x_t)` with regression targets, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub t: Vec<f64>,
    pub y: Array2<f64>,
    pub x: Array2<f64>,
    pub target: Array2<f64>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn rows(&self, lo: usize, hi: usize) -> TrainingBatch {
        TrainingBatch {
            t: self.t[lo..hi].to_vec(),
            y: self.y.slice(s![lo..hi, ..]).to_owned(),
            x: self.x.slice(s![lo..hi, ..]).to_owned(),
            target: self.target.slice(s![lo..hi, ..]).to_owned(),
        }
    }
}

/// Architecture and parameters as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub d: usize,
    pub m: usize,
    pub hidden: Vec<usize>,
    pub activation: String,
    pub time_features: usize,
    pub params: Vec<f64>,
}

impl VelocityModel {
    /// Scaled-uniform initialization `U(−1/√in, 1/√in)` for hidden layers and
    /// an all-zero output layer, so the initial flow is the identity.
    pub fn new(d: usize, m: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(d, m, hidden)?;
        let mut g = rng::seeded(seed);
        let layers = model.layers();
        for l in &layers[..layers.len() - 1] {
            let bound = 1.0 / (l.inp as f64).sqrt();
            for p in &mut model.params[l.offset..l.offset + l.len()] {
                *p = g.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// Same as [`VelocityModel::new`] but the output layer is also random.
    /// Used where a nonzero network is needed, such as gradient checks.
    pub fn new_random_output(d: usize, m: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::new(d, m, hidden, seed)?;
        let last = *model.layers().last().expect("at least one layer");
        let bound = 1.0 / (last.inp as f64).sqrt();
        let mut g = rng::stream(seed, 1);
        for p in &mut model.params[last.offset..last.offset + last.len()] {
            *p = g.random_range(-bound..bound);
        }
        Ok(model)
    }

    pub fn zeros(d: usize, m: usize, hidden: &[usize]) -> Result<Self> {
        if m == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig("state dimension and hidden widths must be >= 1".into()));
        }
        let mut model = Self { d, m, hidden: hidden.to_vec(), params: Vec::new() };
        let n = model.layers().iter().map(Layer::len).sum();
        model.params = vec![0.0; n];
        Ok(model)
    }

    /// Default architecture for the mixture benchmark: three hidden layers of
    /// width 256 (137,989 parameters at `d = m = 5`).
    pub fn default_hidden() -> Vec<usize> {
        vec![256; 3]
    }

    fn layers(&self) -> Vec<Layer> {
        let mut widths = vec![TIME_FEATURES + self.d + self.m];
        widths.extend(&self.hidden);
        widths.push(self.m);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let l = Layer { inp: w[0], out: w[1], offset };
                offset += l.len();
                l
            })
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        TIME_FEATURES + self.d + self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_inputs(&self, t: &[f64], y: &ArrayView2<f64>, x: &ArrayView2<f64>) -> Result<()> {
        if y.ncols() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: y.ncols() });
        }
        if x.ncols() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, found: x.ncols() });
        }
        if y.nrows() != t.len() || x.nrows() != t.len() {
            return Err(Error::DimensionMismatch { expected: t.len(), found: x.nrows().min(y.nrows()) });
        }
        if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidConfig(format!("time {bad} outside [0, 1]")));
        }
        Ok(())
    }

    fn input_matrix(&self, t: &[f64], y: &ArrayView2<f64>, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut inp = Array2::zeros((t.len(), self.input_dim()));
        for (r, mut row) in inp.axis_iter_mut(Axis(0)).enumerate() {
            let tf = time_features(t[r]);
            row.slice_mut(s![..TIME_FEATURES]).iter_mut().zip(tf).for_each(|(o, v)| *o = v);
            row.slice_mut(s![TIME_FEATURES..TIME_FEATURES + self.d]).assign(&y.row(r));
            row.slice_mut(s![TIME_FEATURES + self.d..]).assign(&x.row(r));
        }
        inp
    }

    /// Runs the network, returning pre-activations of every hidden layer,
    /// the layer inputs, and the output.
    fn run(&self, input: Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
        let layers = self.layers();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len() - 1);
        let mut a = input;
        for (k, l) in layers.iter().enumerate() {
            let mut z = a.dot(&l.weights(&self.params).t());
            z += &ArrayView2::from_shape((1, l.out), l.bias(&self.params)).expect("bias shape");
            inputs.push(a);
            if k + 1 == layers.len() {
                return (pre, inputs, z);
            }
            a = z.mapv(silu);
            pre.push(z);
        }
        unreachable!("network has an output layer")
    }

    /// Batched forward pass; rows of `y` and `x` pair with entries of `t`.
    pub fn forward_batch(&self, t: &[f64], y: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(t, &y, &x)?;
        Ok(self.run(self.input_matrix(t, &y, &x)).2)
    }

    pub fn forward(&self, t: f64, y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let yv = ArrayView2::from_shape((1, y.len()), y).expect("row shape");
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.forward_batch(&[t], yv, xv)?.into_raw_vec_and_offset().0)
    }

    /// Sum over the chunk of squared residual norms and the matching gradient.
    fn chunk_loss_and_grad(&self, b: &TrainingBatch) -> (f64, Vec<f64>) {
        let layers = self.layers();
        let (pre, inputs, out) = self.run(self.input_matrix(&b.t, &b.y.view(), &b.x.view()));
        let resid = &out - &b.target;
        let loss = resid.iter().map(|r| r * r).sum();
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = resid * 2.0;
        for k in (0..layers.len()).rev() {
            let l = layers[k];
            let gw = delta.t().dot(&inputs[k]);
            let gb: Array1<f64> = delta.sum_axis(Axis(0));
            grad[l.offset..l.offset + l.out * l.inp].copy_from_slice(gw.as_slice().expect("standard layout"));
            grad[l.offset + l.out * l.inp..l.offset + l.len()].copy_from_slice(gb.as_slice().expect("contiguous"));
            if k > 0 {
                let mut back = delta.dot(&l.weights(&self.params));
                back.zip_mut_with(&pre[k - 1], |g, z| *g *= silu_prime(*z));
                delta = back;
            }
        }
        (loss, grad)
    }

    /// Loss `(1/B) Σ_b ‖v_θ(t_b, y_b, x_b) − target_b‖²` and its exact gradient.
    pub fn loss_and_grad(&self, batch: &TrainingBatch) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        self.check_inputs(&batch.t, &batch.y.view(), &batch.x.view())?;
        if batch.target.dim() != (batch.len(), self.m) {
            return Err(Error::DimensionMismatch { expected: self.m, found: batch.target.ncols() });
        }
        let chunks = batch.len().div_ceil(GRAD_CHUNK);
        let parts = crate::par::map_range(chunks, |c| {
            self.chunk_loss_and_grad(&batch.rows(c * GRAD_CHUNK, ((c + 1) * GRAD_CHUNK).min(batch.len())))
        });
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grad))
    }

    pub fn loss(&self, batch: &TrainingBatch) -> Result<f64> {
        self.check_inputs(&batch.t, &batch.y.view(), &batch.x.view())?;
        let out = self.forward_batch(&batch.t, batch.y.view(), batch.x.view())?;
        Ok((&out - &batch.target).iter().map(|r| r * r).sum::<f64>() / batch.len().max(1) as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            d: self.d,
            m: self.m,
            hidden: self.hidden.clone(),
            activation: ACTIVATION.into(),
            time_features: TIME_FEATURES,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION || c.activation != ACTIVATION || c.time_features != TIME_FEATURES {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint (version {}, activation {}, {} time features)",
                c.version, c.activation, c.time_features
            )));
        }
        let mut model = Self::zeros(c.d, c.m, &c.hidden)?;
        if c.params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", model.params.len(), c.params.len())));
        }
        model.params = c.params;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(s)?)
    }
}

/// Largest relative error between the analytic gradient and central finite
/// differences with step `h` over the given parameter coordinates. The
/// denominator is floored at `floor` so coordinates with vanishing gradient
/// are compared absolutely.
pub fn gradient_check(model: &VelocityModel, batch: &TrainingBatch, coords: &[usize], h: f64, floor: f64) -> Result<f64> {
    let (_, grad) = model.loss_and_grad(batch)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for &c in coords {
        let orig = probe.params[c];
        probe.params[c] = orig + h;
        let up = probe.loss(batch)?;
        probe.params[c] = orig - h;
        let down = probe.loss(batch)?;
        probe.params[c] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[c] - fd).abs() / grad[c].abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// `θ ← θ − lr·g`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates with the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update. Zero gradients leave parameters unchanged
/// while the moments are still zero.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}
