//! Flow matching for conditional sampling: minibatch couplings between noise
//! and data, regression targets along straight paths, a deterministic training
//! loop with validation-based model selection, and Euler sampling.
//!
//! Couplings re-pair noise with data. Each data pair `(y_j, x_j)` keeps its
//! condition and is assigned one noise draw `z`, and the model regresses
//! `v_θ(t, y_j, (1 − t)z + t·x_j) ≈ x_j − z`. The condition never moves.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, TrainingBatch, VelocityModel};
use crate::ot::{solve_assignment, CostSpec};
use crate::rng;

/// Largest batch handed to the exact assignment solver.
pub const MAX_ASSIGNMENT_BATCH: usize = 1024;

/// Which coupling produces the training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    /// Noise and data paired by batch index; conditions ignored.
    Independent,
    /// Assignment on `‖x − z‖²`; conditions ignored.
    Ot,
    /// Noise paired by batch index with condition-carrying data.
    DiagonalBayes,
    /// Assignment on `‖x − z‖² + β‖y − y'‖²`, where the noise inherits the
    /// condition of the data row it was drawn for.
    OtBayes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingMode {
    pub kind: CouplingKind,
    /// Condition weight for `ot-bayes`. Zero reduces to plain `ot`.
    #[serde(default)]
    pub beta: f64,
    /// Forbid pairing across distinct conditions (the `β → ∞` limit).
    #[serde(default)]
    pub strict: bool,
}

impl CouplingMode {
    pub fn new(kind: CouplingKind) -> Self {
        Self { kind, beta: 0.0, strict: false }
    }

    pub fn ot_bayes(beta: f64) -> Self {
        Self { kind: CouplingKind::OtBayes, beta, strict: false }
    }

    pub fn ot_bayes_strict() -> Self {
        Self { kind: CouplingKind::OtBayes, beta: 0.0, strict: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == CouplingKind::OtBayes && !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("ot-bayes needs finite beta >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    fn cost(&self) -> Option<CostSpec> {
        match self.kind {
            CouplingKind::Independent | CouplingKind::DiagonalBayes => None,
            CouplingKind::Ot => Some(CostSpec::states_only(2.0)),
            CouplingKind::OtBayes if self.strict => Some(CostSpec::strict(2.0)),
            CouplingKind::OtBayes => Some(CostSpec::relaxed(2.0, self.beta)),
        }
    }
}

/// Row-aligned noise, conditions and data.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub z: Array2<f64>,
    pub y: Array2<f64>,
    pub x: Array2<f64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    fn check(&self) -> Result<()> {
        let n = self.z.nrows();
        if self.y.nrows() != n || self.x.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.x.nrows().min(self.y.nrows()) });
        }
        if self.z.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch { expected: self.x.ncols(), found: self.z.ncols() });
        }
        Ok(())
    }

    /// Sum over rows of `d_β²` between `(y_i, z_i)` and `(y_i, x_i)` under
    /// `spec`, with the noise carrying the condition `cond[i]`.
    pub fn pairing_cost(&self, cond: &Array2<f64>, spec: &CostSpec) -> f64 {
        (0..self.len())
            .map(|i| {
                spec.eval(
                    cond.row(i).as_slice().expect("row"),
                    self.z.row(i).as_slice().expect("row"),
                    self.y.row(i).as_slice().expect("row"),
                    self.x.row(i).as_slice().expect("row"),
                )
            })
            .sum()
    }
}

/// Re-pairs the noise rows of `batch` with its data rows.
///
/// Row `i` of the input is the i.i.d. draw `(z_i, y_i, x_i)`. Returns the
/// batch with `z` permuted, together with `perm`, where output row `j` holds
/// `z[perm[j]]`. Index-aligned modes return the identity. Assignment modes
/// minimize the summed cost between noise `(y_i, z_i)` and data `(y_j, x_j)`.
pub fn make_batch_pairs(batch: &PairBatch, mode: &CouplingMode) -> Result<(PairBatch, Vec<usize>)> {
    batch.check()?;
    mode.validate()?;
    let n = batch.len();
    let Some(spec) = mode.cost() else {
        return Ok((batch.clone(), (0..n).collect()));
    };
    if n > MAX_ASSIGNMENT_BATCH {
        return Err(Error::BatchTooLarge { size: n, limit: MAX_ASSIGNMENT_BATCH });
    }
    let rows = crate::par::map_range(n, |i| {
        let (yi, zi) = (batch.y.row(i), batch.z.row(i));
        (0..n)
            .map(|j| {
                spec.eval(
                    yi.as_slice().expect("row"),
                    zi.as_slice().expect("row"),
                    batch.y.row(j).as_slice().expect("row"),
                    batch.x.row(j).as_slice().expect("row"),
                )
            })
            .collect::<Vec<f64>>()
    });
    let cost = Array2::from_shape_vec((n, n), rows.concat()).expect("square");
    let assignment = solve_assignment(&cost)?;
    // assignment.perm[i] = data row receiving noise i; invert it.
    let mut perm = vec![0; n];
    for (i, &j) in assignment.perm.iter().enumerate() {
        perm[j] = i;
    }
    let z = batch.z.select(Axis(0), &perm);
    Ok((PairBatch { z, y: batch.y.clone(), x: batch.x.clone() }, perm))
}

/// `x_t = (1 − t)z + t·x` and target `x − z` for each paired row.
pub fn training_targets(pairs: &PairBatch, t: &[f64]) -> Result<TrainingBatch> {
    pairs.check()?;
    if t.len() != pairs.len() {
        return Err(Error::DimensionMismatch { expected: pairs.len(), found: t.len() });
    }
    if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidConfig(format!("time {bad} outside [0, 1]")));
    }
    let mut xt = pairs.z.clone();
    for (r, mut row) in xt.axis_iter_mut(Axis(0)).enumerate() {
        let tr = t[r];
        row.zip_mut_with(&pairs.x.row(r), |z, x| *z = (1.0 - tr) * *z + tr * x);
    }
    Ok(TrainingBatch { t: t.to_vec(), y: pairs.y.clone(), x: xt, target: &pairs.x - &pairs.z })
}

/// A fixed dataset of condition/state pairs, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDataset {
    pub y: Array2<f64>,
    pub x: Array2<f64>,
}

impl JointDataset {
    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let n = pairs.len();
        let (d, m) = pairs.first().map(|(y, x)| (y.len(), x.len())).ok_or(Error::InvalidConfig("empty dataset".into()))?;
        if pairs.iter().any(|(y, x)| y.len() != d || x.len() != m) {
            return Err(Error::DimensionMismatch { expected: d + m, found: 0 });
        }
        let y = Array2::from_shape_fn((n, d), |(i, k)| pairs[i].0[k]);
        let x = Array2::from_shape_fn((n, m), |(i, k)| pairs[i].1[k]);
        Ok(Self { y, x })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    fn rows(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (self.y.select(Axis(0), idx), self.x.select(Axis(0), idx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_train: usize,
    pub n_val: usize,
    /// Rows coupled per assignment solve.
    pub coupling_batch: usize,
    /// Rows per gradient step.
    pub batch: usize,
    /// Number of gradient steps.
    pub iterations: usize,
    /// Validation loss is evaluated every this many steps (and at step 0).
    pub eval_every: usize,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub coupling: CouplingMode,
    pub seed: u64,
    pub euler_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_train: 10_000,
            n_val: 2_000,
            coupling_batch: 500,
            batch: 100,
            iterations: 20_000,
            eval_every: 500,
            hidden: VelocityModel::default_hidden(),
            adam: AdamConfig::default(),
            coupling: CouplingMode::ot_bayes(20.0),
            seed: 0,
            euler_steps: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.coupling.validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch == 0 || self.coupling_batch == 0 || self.eval_every == 0 {
            return bad("batch sizes and eval_every must be >= 1");
        }
        if self.coupling_batch % self.batch != 0 {
            return bad("coupling_batch must be a multiple of batch");
        }
        if self.n_train < self.coupling_batch || self.n_val < self.batch {
            return bad("dataset sizes must be at least the batch sizes");
        }
        if self.euler_steps == 0 {
            return bad("euler_steps must be >= 1");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// One JSON-lines log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    /// Mean gradient-batch loss since the previous record; absent at step 0.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub model: VelocityModel,
    pub best_iter: usize,
    pub best_val: f64,
    pub curve: Vec<LogRow>,
}

/// Fixed validation pairs: noise, coupling and times drawn once per run.
fn validation_batch(val: &JointDataset, cfg: &TrainConfig, m: usize) -> Result<TrainingBatch> {
    let mut g = rng::stream(cfg.seed, 2);
    let n = val.len();
    let z = Array2::from_shape_vec((n, m), rng::standard_normal(&mut g, n * m)).expect("shape");
    let mut parts = Vec::new();
    let chunk = cfg.coupling_batch.min(n);
    let mut lo = 0;
    while lo < n {
        let hi = (lo + chunk).min(n);
        let idx: Vec<usize> = (lo..hi).collect();
        let (y, x) = val.rows(&idx);
        let (pairs, _) = make_batch_pairs(&PairBatch { z: z.select(Axis(0), &idx), y, x }, &cfg.coupling)?;
        let t: Vec<f64> = (lo..hi).map(|_| g.random_range(0.0..=1.0)).collect();
        parts.push(training_targets(&pairs, &t)?);
        lo = hi;
    }
    let cat = |f: fn(&TrainingBatch) -> ArrayView2<f64>| {
        ndarray::concatenate(Axis(0), &parts.iter().map(f).collect::<Vec<_>>()).expect("matching widths")
    };
    Ok(TrainingBatch {
        t: parts.iter().flat_map(|p| p.t.clone()).collect(),
        y: cat(|p| p.y.view()),
        x: cat(|p| p.x.view()),
        target: cat(|p| p.target.view()),
    })
}

/// Minimizes the selected flow-matching loss with Adam.
///
/// Data rows are visited in reshuffled epochs. Each block of
/// `coupling_batch` rows gets fresh noise, is coupled once, and is then
/// consumed in gradient steps of `batch` rows with fresh uniform times.
/// Validation runs at step 0 and every `eval_every` steps, and the final
/// model is the best validated one. A log record is written per evaluation.
pub fn train(cfg: &TrainConfig, data: &JointDataset, val: &JointDataset, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() < cfg.coupling_batch || val.is_empty() {
        return Err(Error::InvalidConfig("dataset smaller than the coupling batch".into()));
    }
    let (d, m) = (data.y.ncols(), data.x.ncols());
    let mut model = VelocityModel::new(d, m, &cfg.hidden, cfg.seed)?;
    let mut best = model.clone();
    let mut best_iter = 0;
    let mut best_val = f64::INFINITY;
    let mut curve = Vec::new();
    if cfg.iterations == 0 {
        return Ok(TrainOutcome { model, best_iter, best_val, curve });
    }
    let val_batch = validation_batch(val, cfg, m)?;
    let mut adam = AdamState::new(model.num_params());
    let mut g = rng::stream(cfg.seed, 3);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut queue: Vec<TrainingBatch> = Vec::new();
    let (mut loss_acc, mut loss_count) = (0.0, 0usize);

    for step in 0..=cfg.iterations {
        if step % cfg.eval_every == 0 || step == cfg.iterations {
            let val_loss = model.loss(&val_batch)?;
            if !val_loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: step });
            }
            let train_loss = (loss_count > 0).then(|| loss_acc / loss_count as f64);
            if val_loss < best_val {
                best_val = val_loss;
                best_iter = step;
                best.params_mut().copy_from_slice(model.params());
            }
            let row = LogRow { iter: step, train_loss, val_loss };
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &row)?;
                writeln!(w)?;
            }
            curve.push(row);
            (loss_acc, loss_count) = (0.0, 0);
        }
        if step == cfg.iterations {
            break;
        }
        if queue.is_empty() {
            if cursor + cfg.coupling_batch > order.len() {
                order = (0..data.len()).collect();
                order.shuffle(&mut g);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + cfg.coupling_batch];
            cursor += cfg.coupling_batch;
            let (y, x) = data.rows(idx);
            let z = Array2::from_shape_vec((idx.len(), m), rng::standard_normal(&mut g, idx.len() * m)).expect("shape");
            let (pairs, _) = make_batch_pairs(&PairBatch { z, y, x }, &cfg.coupling)?;
            for lo in (0..pairs.len()).step_by(cfg.batch).rev() {
                let sel: Vec<usize> = (lo..lo + cfg.batch).collect();
                let part = PairBatch {
                    z: pairs.z.select(Axis(0), &sel),
                    y: pairs.y.select(Axis(0), &sel),
                    x: pairs.x.select(Axis(0), &sel),
                };
                let t: Vec<f64> = (0..cfg.batch).map(|_| g.random_range(0.0..=1.0)).collect();
                queue.push(training_targets(&part, &t)?);
            }
        }
        let batch = queue.pop().expect("queue refilled above");
        let (loss, grad) = model.loss_and_grad(&batch)?;
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: step });
        }
        loss_acc += loss;
        loss_count += 1;
        adam_step(model.params_mut(), &grad, &mut adam, &cfg.adam);
    }
    Ok(TrainOutcome { model: best, best_iter, best_val, curve })
}

/// Integrates `dx/dt = v_θ(t, y, x)` from `x_0 = start` with `steps` explicit
/// Euler steps. Row `r` of `start` is paired with row `r` of `y`, which is
/// never modified.
pub fn euler_sample(model: &VelocityModel, y: ArrayView2<f64>, start: Array2<f64>, steps: usize) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::InvalidConfig("euler_steps must be >= 1".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = start;
    for k in 0..steps {
        let t = vec![k as f64 * h; x.nrows()];
        let v = model.forward_batch(&t, y, x.view())?;
        x.scaled_add(h, &v);
    }
    Ok(x)
}

/// `n` samples for the condition `y`: standard normal starts pushed through
/// the learned flow.
pub fn sample_posterior(model: &VelocityModel, y: &[f64], n: usize, steps: usize, seed: u64) -> Result<Array2<f64>> {
    if y.len() != model.d() {
        return Err(Error::DimensionMismatch { expected: model.d(), found: y.len() });
    }
    let mut g = rng::seeded(seed);
    let m = model.m();
    let start = Array2::from_shape_vec((n, m), rng::standard_normal(&mut g, n * m)).expect("shape");
    let ys = Array2::from_shape_fn((n, y.len()), |(_, k)| y[k]);
    euler_sample(model, ys.view(), start, steps)
}
