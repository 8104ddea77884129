//! Entropic optimal transport in the log domain, the debiased Sinkhorn
//! divergence, and its gradient with respect to atom positions.

use std::borrow::Cow;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measures::DiscreteJointMeasure;
use crate::ot::cost::{cost_matrix, CostSpec};

/// Iteration limits for the Sinkhorn loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub max_iter: usize,
    /// Convergence threshold on the L1 marginal violation of the implied plan.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { max_iter: 50_000, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Dual potential on the atoms of the first measure.
    pub f: Vec<f64>,
    /// Dual potential on the atoms of the second measure.
    pub g: Vec<f64>,
    /// Transport cost `Σ π_ij c_ij` of the implied plan.
    pub cost: f64,
    /// Regularized objective `⟨a, f⟩ + ⟨b, g⟩`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// L1 marginal violation of the implied plan.
    pub violation: f64,
}

const ANNEAL_FACTOR: f64 = 0.5;
/// Sweeps before Newton steps at each multiscale stage.
const STAGE_SWEEPS: usize = 2;
const STAGE_MAX_ITER: usize = 100;
const STAGE_TOL: f64 = 1e-6;
/// Plain alternating sweeps before switching to Newton steps.
const NEWTON_AFTER: usize = 30;
/// Largest potential shift per Newton step, in units of ε.
const NEWTON_TRUST: f64 = 4.0;
/// Plan entries below this fraction of their row mass are dropped from the
/// Newton system; they are below working precision of the Hessian anyway.
const SPARSE_CUTOFF: f64 = 1e-14;
const CG_MAX_ITER: usize = 200;
/// Column mass fraction below which a column is updated exactly.
const DETACHED_MASS: f64 = 1e-2;
const CG_REL_TOL: f64 = 1e-8;

/// Log-domain entropic problem on a fixed cost table.
struct EntropicProblem<'a> {
    cost: &'a Array2<f64>,
    cost_t: Cow<'a, Array2<f64>>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    eps: f64,
}

/// Row-sparse plan `π_ij = a_i b_j exp((f_i + g_j − C_ij)/ε)`.
struct SparsePlan {
    rows: Vec<Vec<(usize, f64)>>,
    col: Vec<f64>,
}

impl SparsePlan {
    /// `(diag(col) − πᵀ diag(1/a) π) v`, the negated semi-dual Hessian times ε.
    fn apply(&self, inv_a: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.col.iter().zip(v).map(|(c, x)| c * x).collect();
        for (row, ia) in self.rows.iter().zip(inv_a) {
            let u: f64 = row.iter().map(|&(j, p)| p * v[j]).sum::<f64>() * ia;
            for &(j, p) in row {
                out[j] -= p * u;
            }
        }
        out
    }

    /// Diagonal of the same operator, written as the off-diagonal coupling
    /// mass so it does not cancel when the plan is close to a permutation.
    fn diagonal(&self, inv_a: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.col.len()];
        for (row, ia) in self.rows.iter().zip(inv_a) {
            let total: f64 = row.iter().map(|e| e.1).sum();
            for &(j, p) in row {
                d[j] += p * (total - p).max(0.0) * ia;
            }
        }
        d
    }
}

/// Preconditioned conjugate gradients for the positive semidefinite system
/// `A x = r` with `r ⟂ ker A`.
fn conjugate_gradient(apply: impl Fn(&[f64]) -> Vec<f64>, diag: &[f64], r: &[f64]) -> Vec<f64> {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let floor = 1e-12 * diag.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(diag).map(|(x, d)| x / d.max(floor)).collect() };
    let mut x = vec![0.0; r.len()];
    let mut res = r.to_vec();
    let mut z = precond(&res);
    let mut p = z.clone();
    let mut rz = dot(&res, &z);
    let target = CG_REL_TOL * dot(r, r).sqrt();
    for _ in 0..CG_MAX_ITER {
        if dot(&res, &res).sqrt() <= target {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for ((xi, pi), (ri, api)) in x.iter_mut().zip(&p).zip(res.iter_mut().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        z = precond(&res);
        let rz_next = dot(&res, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    x
}

impl<'a> EntropicProblem<'a> {
    fn new(cost: &'a Array2<f64>, a: &[f64], b: &[f64], eps: f64) -> Self {
        let cost_t = Cow::Owned(cost.t().as_standard_layout().into_owned());
        Self {
            cost,
            cost_t,
            log_a: a.iter().map(|w| w.ln()).collect(),
            log_b: b.iter().map(|w| w.ln()).collect(),
            a: a.to_vec(),
            b: b.to_vec(),
            eps,
        }
    }

    /// The same tables at another blur.
    fn at_eps(&self, eps: f64) -> EntropicProblem<'_> {
        EntropicProblem {
            cost: self.cost,
            cost_t: Cow::Borrowed(&*self.cost_t),
            log_a: self.log_a.clone(),
            log_b: self.log_b.clone(),
            a: self.a.clone(),
            b: self.b.clone(),
            eps,
        }
    }

    /// `out_i = −ε log Σ_j exp(log w_j + (pot_j − C_ij)/ε)` for each row of `c`.
    fn soft_min(c: &Array2<f64>, log_w: &[f64], pot: &[f64], eps: f64) -> Vec<f64> {
        let c = c.as_slice().expect("standard layout");
        let width = log_w.len();
        let inv = 1.0 / eps;
        let q: Vec<f64> = log_w.iter().zip(pot).map(|(lw, p)| lw + p * inv).collect();
        crate::par::map_range(c.len() / width.max(1), |i| {
            let row = &c[i * width..(i + 1) * width];
            let mut mx = f64::NEG_INFINITY;
            for (cij, qj) in row.iter().zip(&q) {
                mx = mx.max(qj - cij * inv);
            }
            if mx == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            // Terms below e^-40 relative to the largest are dropped; they are
            // invisible in the sum and their exponentials are slow subnormals.
            let s: f64 = row
                .iter()
                .zip(&q)
                .map(|(cij, qj)| {
                    let d = qj - cij * inv - mx;
                    if d > -40.0 {
                        d.exp()
                    } else {
                        0.0
                    }
                })
                .sum();
            -eps * (mx + s.ln())
        })
    }

    /// Alternating updates `f ← T_row(g)`, `g ← T_col(f)` for two distinct
    /// measures, followed by damped Newton steps on the semi-dual in `g`.
    /// After every step `f = T_row(g)` makes the row marginal exact, so the
    /// reported violation is the column gap. Without `init` the potentials
    /// start from a multiscale warm start.
    fn solve(&self, init: Option<(Vec<f64>, Vec<f64>)>, opts: &SinkhornOptions) -> SinkhornResult {
        match init {
            Some((_, g)) => self.refine(g, 0, NEWTON_AFTER, opts),
            None => {
                let (g, used) = self.multiscale_start(opts.max_iter);
                self.refine(g, used, STAGE_SWEEPS, opts)
            }
        }
    }

    /// Runs up to `sweeps` alternating sweeps, then Newton steps, from `g`;
    /// `iterations` already spent count against the budget.
    fn refine(&self, mut g: Vec<f64>, mut iterations: usize, sweeps: usize, opts: &SinkhornOptions) -> SinkhornResult {
        let (mut f, mut v) = self.row_update(&g);
        let first = iterations + sweeps;
        while v >= opts.tol && iterations < opts.max_iter.min(first) {
            g = Self::soft_min(&self.cost_t, &self.log_a, &f, self.eps);
            (f, v) = self.row_update(&g);
            iterations += 1;
        }
        let mut phi = self.semi_dual(&f, &g);
        let mut trust = NEWTON_TRUST;
        while v >= opts.tol && iterations < opts.max_iter {
            iterations += 1;
            if let Some(fixed) = self.reattach(&f, &g) {
                g = fixed;
                (f, v) = self.row_update(&g);
                phi = self.semi_dual(&f, &g);
                if v < opts.tol {
                    break;
                }
            }
            let step = self.newton_direction(&f, &g);
            let largest = step.as_ref().map_or(0.0, |s| s.iter().fold(0.0f64, |acc, x| acc.max(x.abs())));
            if !(largest > 0.0) {
                // A column detached from the sparse plan (an atom far from
                // every partner) leaves no usable direction; a sweep
                // reattaches it.
                g = Self::soft_min(&self.cost_t, &self.log_a, &f, self.eps);
                (f, v) = self.row_update(&g);
                phi = self.semi_dual(&f, &g);
                continue;
            }
            let step = step.expect("nonzero step");
            // Trust region on the largest potential shift, in units of ε: it
            // grows while full steps succeed and shrinks on backtracking.
            let mut t = (trust * self.eps / largest).min(1.0);
            let mut accepted = false;
            for attempt in 0..30 {
                let trial: Vec<f64> = g.iter().zip(&step).map(|(gj, s)| gj + t * s).collect();
                let (tf, tv) = self.row_update(&trial);
                let tphi = self.semi_dual(&tf, &trial);
                if tphi > phi || (tphi == phi && tv < v) {
                    (g, f, v, phi) = (trial, tf, tv, tphi);
                    accepted = true;
                    trust = if attempt == 0 { trust * 4.0 } else { (t * largest / self.eps).max(1.0) };
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // Fall back to a plain sweep, which never decreases the dual.
                g = Self::soft_min(&self.cost_t, &self.log_a, &f, self.eps);
                (f, v) = self.row_update(&g);
                phi = self.semi_dual(&f, &g);
            }
        }
        self.finish(f, g, iterations, v < opts.tol, v)
    }

    /// `f = T_row(g)` together with the column violation of `(f, g)`.
    fn row_update(&self, g: &[f64]) -> (Vec<f64>, f64) {
        let f = Self::soft_min(self.cost, &self.log_b, g, self.eps);
        let g_hat = Self::soft_min(&self.cost_t, &self.log_a, &f, self.eps);
        let v = marginal_gap(&self.b, g, &g_hat, self.eps);
        (f, v)
    }

    /// Exact coordinate updates for columns holding under 1% of their
    /// target mass. Such columns are nearly detached from the sparse plan,
    /// so Newton cannot move them; the update raises the dual. `None` when
    /// every column is attached.
    fn reattach(&self, f: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        let g_hat = Self::soft_min(&self.cost_t, &self.log_a, f, self.eps);
        let cut = DETACHED_MASS.ln() * self.eps;
        let mut out = None;
        for (j, (gj, hj)) in g.iter().zip(&g_hat).enumerate() {
            if gj - hj < cut && hj.is_finite() {
                out.get_or_insert_with(|| g.to_vec())[j] = *hj;
            }
        }
        out
    }

    fn semi_dual(&self, f: &[f64], g: &[f64]) -> f64 {
        self.a.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.b.iter().zip(g).map(|(w, x)| w * x).sum::<f64>()
    }

    fn sparse_plan(&self, f: &[f64], g: &[f64]) -> SparsePlan {
        let m = g.len();
        let rows = crate::par::map_range(f.len(), |i| {
            let keep = SPARSE_CUTOFF * self.a[i];
            (0..m)
                .filter_map(|j| {
                    let p = self.plan_entry(i, j, f, g);
                    (p > keep).then_some((j, p))
                })
                .collect::<Vec<_>>()
        });
        let mut col = vec![0.0; m];
        for row in &rows {
            for &(j, p) in row {
                col[j] += p;
            }
        }
        SparsePlan { rows, col }
    }

    /// Newton direction `δ` solving `(diag(col) − πᵀ diag(1/a) π) δ = ε (b − col)`.
    fn newton_direction(&self, f: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        let plan = self.sparse_plan(f, g);
        let inv_a: Vec<f64> = self.a.iter().map(|w| 1.0 / w).collect();
        let mut rhs: Vec<f64> = self.b.iter().zip(&plan.col).map(|(b, c)| self.eps * (b - c)).collect();
        // Remove the component along the constant null direction.
        let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
        rhs.iter_mut().for_each(|r| *r -= mean);
        let diag = plan.diagonal(&inv_a);
        let step = conjugate_gradient(|v| plan.apply(&inv_a, v), &diag, &rhs);
        step.iter().all(|s| s.is_finite()).then_some(step)
    }

    /// Potentials solved at geometrically decreasing blur down to (but not
    /// including) `eps`, each stage warm-started from the last. Mass moves
    /// between groups of atoms while the plan still connects them; at the
    /// final blur those groups can be joined only by entries far below
    /// working precision. Stages count against `budget` and stop at half of it.
    fn multiscale_start(&self, budget: usize) -> (Vec<f64>, usize) {
        let mut g = vec![0.0; self.cost.ncols()];
        let top = self.cost.iter().cloned().filter(|c| c.is_finite()).fold(0.0, f64::max);
        let mut used = 0;
        let mut e = top;
        loop {
            e *= ANNEAL_FACTOR;
            if !(e > self.eps) || used >= budget / 2 {
                break;
            }
            let stage_opts = SinkhornOptions { max_iter: STAGE_MAX_ITER.min(budget / 2 - used), tol: STAGE_TOL };
            let r = self.at_eps(e).refine(g, 0, STAGE_SWEEPS, &stage_opts);
            used += r.iterations;
            g = r.g;
        }
        (g, used)
    }

    /// Averaged updates `f ← ½(f + T(f))` for a measure against itself; the
    /// potentials stay symmetric so a single vector is tracked.
    fn solve_symmetric(&self, init: Option<Vec<f64>>, opts: &SinkhornOptions) -> SinkhornResult {
        let n = self.cost.nrows();
        let mut f = init.unwrap_or_else(|| vec![0.0; n]);
        let mut iterations = 0;
        let mut violation;
        let mut converged = false;
        loop {
            let f_hat = Self::soft_min(self.cost, &self.log_a, &f, self.eps);
            violation = 2.0 * marginal_gap(&self.a, &f, &f_hat, self.eps);
            if violation < opts.tol {
                converged = true;
                break;
            }
            if iterations == opts.max_iter {
                break;
            }
            for (fi, fh) in f.iter_mut().zip(&f_hat) {
                *fi = 0.5 * (*fi + fh);
            }
            iterations += 1;
        }
        let g = f.clone();
        self.finish(f, g, iterations, converged, violation)
    }

    fn finish(&self, f: Vec<f64>, g: Vec<f64>, iterations: usize, converged: bool, violation: f64) -> SinkhornResult {
        let plan_cost = self.plan_cost(&f, &g);
        let objective = self.semi_dual(&f, &g);
        SinkhornResult { f, g, cost: plan_cost, objective, iterations, converged, violation }
    }

    fn plan_entry(&self, i: usize, j: usize, f: &[f64], g: &[f64]) -> f64 {
        let c = self.cost[[i, j]];
        if !c.is_finite() {
            return 0.0;
        }
        let e = self.log_a[i] + self.log_b[j] + (f[i] + g[j] - c) / self.eps;
        if e > -700.0 {
            e.exp()
        } else {
            0.0
        }
    }

    fn plan_cost(&self, f: &[f64], g: &[f64]) -> f64 {
        let (n, m) = self.cost.dim();
        crate::par::map_range(n, |i| {
            (0..m)
                .map(|j| {
                    let p = self.plan_entry(i, j, f, g);
                    if p > 0.0 {
                        p * self.cost[[i, j]]
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .into_iter()
        .sum()
    }
}

fn marginal_gap(w: &[f64], pot: &[f64], pot_hat: &[f64], eps: f64) -> f64 {
    w.iter()
        .zip(pot.iter().zip(pot_hat))
        .map(|(wi, (p, ph))| {
            let r = wi * ((p - ph) / eps).exp();
            if r.is_finite() {
                (r - wi).abs()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("epsilon = {eps} must be positive")))
    }
}

/// Entropic OT between `mu` and `nu` on the cost `d_β^p`, using symmetric
/// (averaged) log-domain Sinkhorn updates. Non-convergence is reported via
/// the `converged` flag.
pub fn sinkhorn_ot(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    spec: &CostSpec,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    check_eps(epsilon)?;
    let cost = cost_matrix(mu, nu, spec)?;
    let problem = EntropicProblem::new(&cost, &mu.weights(), &nu.weights(), epsilon);
    Ok(problem.solve(None, &SinkhornOptions { max_iter, tol }))
}

/// Default blur: `1e-3` times the mean pairwise cost between the two measures.
pub fn default_epsilon(mu: &DiscreteJointMeasure, nu: &DiscreteJointMeasure, spec: &CostSpec) -> Result<f64> {
    let cost = cost_matrix(mu, nu, spec)?;
    let finite: Vec<f64> = cost.iter().cloned().filter(|c| c.is_finite()).collect();
    let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    Ok(if mean > 0.0 { 1e-3 * mean } else { 1e-3 })
}

/// The three entropic problems of a Sinkhorn divergence.
#[derive(Debug, Clone)]
pub struct DivergenceParts {
    pub value: f64,
    pub cross: SinkhornResult,
    pub left: SinkhornResult,
    pub right: SinkhornResult,
}

impl DivergenceParts {
    pub fn converged(&self) -> bool {
        self.cross.converged && self.left.converged && self.right.converged
    }
}

/// `S_ε(μ, ν) = OT_ε(μ, ν) − ½ OT_ε(μ, μ) − ½ OT_ε(ν, ν)` with all three
/// problems solved to `opts`.
pub fn sinkhorn_divergence_parts(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    spec: &CostSpec,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<DivergenceParts> {
    check_eps(epsilon)?;
    let solve = |a: &DiscreteJointMeasure, b: &DiscreteJointMeasure| -> Result<SinkhornResult> {
        let cost = cost_matrix(a, b, spec)?;
        Ok(EntropicProblem::new(&cost, &a.weights(), &b.weights(), epsilon).solve(None, opts))
    };
    let solve_self = |a: &DiscreteJointMeasure| -> Result<SinkhornResult> {
        let cost = cost_matrix(a, a, spec)?;
        Ok(EntropicProblem::new(&cost, &a.weights(), &a.weights(), epsilon).solve_symmetric(None, opts))
    };
    let cross = solve(mu, nu)?;
    let left = solve_self(mu)?;
    let right = solve_self(nu)?;
    let value = cross.objective - 0.5 * left.objective - 0.5 * right.objective;
    Ok(DivergenceParts { value, cross, left, right })
}

/// Debiased Sinkhorn divergence; fails if any inner problem does not converge.
pub fn sinkhorn_divergence(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    spec: &CostSpec,
    epsilon: f64,
) -> Result<f64> {
    let parts = sinkhorn_divergence_parts(mu, nu, spec, epsilon, &SinkhornOptions::default())?;
    ensure_converged(&parts)?;
    Ok(parts.value)
}

fn ensure_converged(parts: &DivergenceParts) -> Result<()> {
    for r in [&parts.cross, &parts.left, &parts.right] {
        if !r.converged {
            return Err(Error::NotConverged { iterations: r.iterations, violation: r.violation });
        }
    }
    Ok(())
}

/// Gradient of `S_ε(μ, ν)` with respect to the positions of the atoms of `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrad {
    /// `∂S/∂y_i` per atom of `μ`.
    pub dy: Vec<Vec<f64>>,
    /// `∂S/∂x_i` per atom of `μ`.
    pub dx: Vec<Vec<f64>>,
    /// Divergence value at the evaluation point.
    pub value: f64,
}

/// `∇_1 d_β^p` at `(ya, xa)` against `(yb, xb)`, accumulated with weight `w`.
fn accumulate_cost_grad(spec: &CostSpec, ya: &[f64], xa: &[f64], yb: &[f64], xb: &[f64], w: f64, gy: &mut [f64], gx: &mut [f64]) {
    let p = spec.p;
    let scale_of = |r: f64| -> f64 {
        if p == 2.0 {
            2.0
        } else if r > 0.0 {
            p * r.powf(p - 2.0)
        } else {
            0.0
        }
    };
    let rx = crate::measures::euclidean(xa, xb);
    let sx = w * scale_of(rx);
    for ((g, a), b) in gx.iter_mut().zip(xa).zip(xb) {
        *g += sx * (a - b);
    }
    if !spec.strict && spec.beta != 0.0 {
        let ry = crate::measures::euclidean(ya, yb);
        let sy = w * spec.beta * scale_of(ry);
        for ((g, a), b) in gy.iter_mut().zip(ya).zip(yb) {
            *g += sy * (a - b);
        }
    }
}

/// Envelope-theorem gradient of the Sinkhorn divergence from converged
/// potentials: `Σ_j π^{μν}_ij ∇c(p_i, q_j) − Σ_j π^{μμ}_ij ∇c(p_i, p_j)`.
pub fn divergence_position_grad(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    spec: &CostSpec,
    epsilon: f64,
) -> Result<PositionGrad> {
    divergence_position_grad_with(mu, nu, spec, epsilon, &SinkhornOptions::default())
}

pub fn divergence_position_grad_with(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    spec: &CostSpec,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<PositionGrad> {
    check_eps(epsilon)?;
    let parts = sinkhorn_divergence_parts(mu, nu, spec, epsilon, opts)?;
    ensure_converged(&parts)?;
    let (dy, dx) = gradient_from_parts(mu, nu, spec, epsilon, &parts);
    Ok(PositionGrad { dy, dx, value: parts.value })
}

fn gradient_from_parts(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    spec: &CostSpec,
    eps: f64,
    parts: &DivergenceParts,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (d, m) = (mu.d(), mu.m());
    let rows = crate::par::map_range(mu.len(), |i| {
        let ai = mu.atom(i);
        let mut gy = vec![0.0; d];
        let mut gx = vec![0.0; m];
        let mut add = |other: &DiscreteJointMeasure, res: &SinkhornResult, sign: f64| {
            for (j, bj) in other.atoms().iter().enumerate() {
                let c = spec.eval(&ai.y, &ai.x, &bj.y, &bj.x);
                if !c.is_finite() || bj.w == 0.0 {
                    continue;
                }
                let pij = (ai.w.ln() + bj.w.ln() + (res.f[i] + res.g[j] - c) / eps).exp();
                if pij > 0.0 {
                    accumulate_cost_grad(spec, &ai.y, &ai.x, &bj.y, &bj.x, sign * pij, &mut gy, &mut gx);
                }
            }
        };
        if ai.w > 0.0 {
            add(nu, &parts.cross, 1.0);
            add(mu, &parts.left, -1.0);
        }
        (gy, gx)
    });
    rows.into_iter().unzip()
}

/// Warm-started divergence and gradient for iterative callers such as
/// particle flows; the previous potentials seed the next solve.
#[derive(Debug, Default, Clone)]
pub struct WarmStart {
    cross: Option<(Vec<f64>, Vec<f64>)>,
    left: Option<Vec<f64>>,
}

pub fn divergence_position_grad_warm(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    spec: &CostSpec,
    epsilon: f64,
    opts: &SinkhornOptions,
    warm: &mut WarmStart,
    right: &SinkhornResult,
) -> Result<PositionGrad> {
    check_eps(epsilon)?;
    let cost = cost_matrix(mu, nu, spec)?;
    let cross = EntropicProblem::new(&cost, &mu.weights(), &nu.weights(), epsilon).solve(warm.cross.take(), opts);
    let cost_mm = cost_matrix(mu, mu, spec)?;
    let left = EntropicProblem::new(&cost_mm, &mu.weights(), &mu.weights(), epsilon).solve_symmetric(warm.left.take(), opts);
    let value = cross.objective - 0.5 * left.objective - 0.5 * right.objective;
    let parts = DivergenceParts { value, cross, left, right: right.clone() };
    ensure_converged(&parts)?;
    let (dy, dx) = gradient_from_parts(mu, nu, spec, epsilon, &parts);
    warm.cross = Some((parts.cross.f.clone(), parts.cross.g.clone()));
    warm.left = Some(parts.left.f.clone());
    Ok(PositionGrad { dy, dx, value })
}

/// Self-transport problem `OT_ε(ν, ν)` for a fixed measure, reusable across
/// warm-started gradient evaluations.
pub fn self_transport(nu: &DiscreteJointMeasure, spec: &CostSpec, epsilon: f64, opts: &SinkhornOptions) -> Result<SinkhornResult> {
    check_eps(epsilon)?;
    let cost = cost_matrix(nu, nu, spec)?;
    let r = EntropicProblem::new(&cost, &nu.weights(), &nu.weights(), epsilon).solve_symmetric(None, opts);
    if !r.converged {
        return Err(Error::NotConverged { iterations: r.iterations, violation: r.violation });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::random_joint_instance;
    use crate::ot::{solve_transport, wasserstein};

    fn point(y: Vec<f64>, x: Vec<f64>) -> DiscreteJointMeasure {
        let d = y.len();
        let m = x.len();
        DiscreteJointMeasure::uniform(d, m, vec![(y, x)]).unwrap()
    }

    #[test]
    fn single_atom_pair_is_trivial() {
        let a = point(vec![0.0], vec![0.0]);
        let r = sinkhorn_ot(&a, &a, &CostSpec::relaxed(2.0, 1.0), 0.1, 100, 1e-12).unwrap();
        assert!(r.converged);
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.f, vec![0.0]);
        assert_eq!(r.g, vec![0.0]);
    }

    #[test]
    fn small_epsilon_matches_exact_transport() {
        let (mu, nu) = random_joint_instance(2, 1, 2, 1, 5).unwrap();
        let spec = CostSpec::states_only(2.0);
        let cost = cost_matrix(&mu, &nu, &spec).unwrap();
        let exact = solve_transport(&mu.weights(), &nu.weights(), &cost).unwrap().value;
        let r = sinkhorn_ot(&mu, &nu, &spec, 1e-3, 100_000, 1e-9).unwrap();
        assert!(r.converged);
        assert!((r.cost - exact).abs() < 1e-2, "{} vs {exact}", r.cost);
    }

    #[test]
    fn large_epsilon_approaches_product_coupling() {
        let (mu, nu) = random_joint_instance(4, 1, 2, 1, 5).unwrap();
        let spec = CostSpec::states_only(2.0);
        let cost = cost_matrix(&mu, &nu, &spec).unwrap();
        let max = cost.iter().cloned().fold(0.0, f64::max);
        let product: f64 = cost.iter().sum::<f64>() / 25.0;
        let r = sinkhorn_ot(&mu, &nu, &spec, 1e4 * max, 1000, 1e-12).unwrap();
        assert!(r.converged);
        assert!((r.cost - product).abs() < 1e-3 * product);
    }

    #[test]
    fn divergence_vanishes_on_identical_measures_and_is_symmetric() {
        for seed in 0..5 {
            let (mu, nu) = random_joint_instance(seed, 2, 2, 3, 4).unwrap();
            let spec = CostSpec::relaxed(2.0, 2.0);
            assert!(sinkhorn_divergence(&mu, &mu, &spec, 0.5).unwrap().abs() < 1e-8);
            let ab = sinkhorn_divergence(&mu, &nu, &spec, 0.5).unwrap();
            let ba = sinkhorn_divergence(&nu, &mu, &spec, 0.5).unwrap();
            assert!(ab > -1e-8);
            assert!((ab - ba).abs() < 1e-10, "{ab} vs {ba}");
        }
    }

    #[test]
    fn separated_point_masses() {
        let a = point(vec![], vec![0.0, 0.0]);
        let b = point(vec![], vec![3.0, 4.0]);
        let s = sinkhorn_divergence(&a, &b, &CostSpec::states_only(2.0), 1e-2 * 25.0).unwrap();
        assert!((s - 25.0).abs() < 0.01 * 25.0);
    }

    #[test]
    fn twenty_atoms_near_exact() {
        let (mu, nu) = random_joint_instance(8, 1, 2, 1, 20).unwrap();
        let spec = CostSpec::states_only(2.0);
        let eps = default_epsilon(&mu, &nu, &spec).unwrap();
        let s = sinkhorn_divergence(&mu, &nu, &spec, eps).unwrap();
        let w = wasserstein(&mu, &nu, 2.0).unwrap().cost;
        assert!((s - w).abs() < 0.05 * w, "{s} vs {w}");
    }

    fn finite_difference_check(mu: &DiscreteJointMeasure, nu: &DiscreteJointMeasure, spec: &CostSpec, eps: f64) -> f64 {
        let opts = SinkhornOptions { max_iter: 100_000, tol: 1e-13 };
        let grad = divergence_position_grad_with(mu, nu, spec, eps, &opts).unwrap();
        let h = 1e-5;
        let eval = |m: &DiscreteJointMeasure| sinkhorn_divergence_parts(m, nu, spec, eps, &opts).unwrap().value;
        let mut worst = 0.0f64;
        let scale = grad.dx.iter().chain(&grad.dy).flatten().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..mu.len() {
            for k in 0..mu.m() + mu.d() {
                let shift = |delta: f64| {
                    let atoms = mu
                        .atoms()
                        .iter()
                        .enumerate()
                        .map(|(l, a)| {
                            let mut a = a.clone();
                            if l == i {
                                if k < mu.m() {
                                    a.x[k] += delta;
                                } else {
                                    a.y[k - mu.m()] += delta;
                                }
                            }
                            a
                        })
                        .collect();
                    DiscreteJointMeasure::new(mu.d(), mu.m(), atoms).unwrap()
                };
                let fd = (eval(&shift(h)) - eval(&shift(-h))) / (2.0 * h);
                let an = if k < mu.m() { grad.dx[i][k] } else { grad.dy[i][k - mu.m()] };
                worst = worst.max((fd - an).abs() / scale.max(1e-12));
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let (mu, nu) = random_joint_instance(seed, 1, 2, 2, 5).unwrap();
            let err = finite_difference_check(&mu, &nu, &CostSpec::relaxed(2.0, 3.0), 0.5);
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn gradient_of_two_point_problem_points_toward_target() {
        let a = point(vec![], vec![0.0]);
        let b = point(vec![], vec![1.5]);
        let g = divergence_position_grad(&a, &b, &CostSpec::states_only(2.0), 0.1).unwrap();
        // S = (x - a)^2 for single atoms: derivative 2(0 - 1.5).
        assert!((g.dx[0][0] - 2.0 * (0.0 - 1.5)).abs() < 1e-4 * 3.0);
        let same = divergence_position_grad(&b, &b, &CostSpec::states_only(2.0), 0.1).unwrap();
        assert!(same.dx[0][0].abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_epsilon_and_flags_non_convergence() {
        let (mu, nu) = random_joint_instance(1, 1, 1, 1, 6).unwrap();
        assert!(sinkhorn_ot(&mu, &nu, &CostSpec::states_only(2.0), 0.0, 10, 1e-9).is_err());
        let r = sinkhorn_ot(&mu, &nu, &CostSpec::states_only(2.0), 1e-4, 2, 1e-12).unwrap();
        assert!(!r.converged);
        let opts = SinkhornOptions { max_iter: 2, tol: 1e-14 };
        assert!(matches!(
            divergence_position_grad_with(&mu, &nu, &CostSpec::states_only(2.0), 1e-4, &opts),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn far_outlier_still_converges() {
        let mut g = crate::rng::seeded(9);
        let n = 300;
        let pts = |g: &mut crate::rng::Rng, shift: f64| -> Vec<(Vec<f64>, Vec<f64>)> {
            (0..n).map(|_| (vec![], crate::rng::standard_normal(g, 5).into_iter().map(|v| 0.3 * v + shift).collect())).collect()
        };
        let mut a = pts(&mut g, 0.0);
        a[0].1 = vec![40.0; 5];
        a[1].1 = vec![-25.0, 3.0, 0.0, 9.0, 1.0];
        let b = pts(&mut g, 0.1);
        let mu = DiscreteJointMeasure::uniform(0, 5, a).unwrap();
        let nu = DiscreteJointMeasure::uniform(0, 5, b).unwrap();
        let spec = CostSpec::states_only(2.0);
        let eps = default_epsilon(&nu, &nu, &spec).unwrap();
        for (x, y) in [(&mu, &nu), (&nu, &mu)] {
            let s = sinkhorn_divergence(x, y, &spec, eps).unwrap();
            assert!(s > 0.0);
        }
    }

}
