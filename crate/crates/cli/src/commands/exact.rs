//! Exact-solver experiments: the two-point counterexample, the relaxation
//! sweep over β, and the duality check.

use condot::instances::{counterexample_pair, independent_normals_pair, index_aligned_plan};
use condot::measures::random_joint_instance;
use condot::ot::{conditional_wasserstein, dual_certificate, relaxed_wasserstein, wasserstein, CostSpec};
use condot::rng;
use serde::{Deserialize, Serialize};

use super::Command;
use crate::output::RunDir;
use crate::{seeded, CliError, Result};

/// Integer in `lo..=hi` read off a derived seed (instance sizes only, so the
/// slight modulo bias is irrelevant).
fn uniform_int(seed: u64, lo: usize, hi: usize) -> usize {
    lo + (seed % (hi - lo + 1) as u64) as usize
}

// ---------------------------------------------------------------- counterexample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CounterexampleConfig {
    /// Displacement `n > 1` of the two-point instance.
    pub n: f64,
    pub seed: u64,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self { n: 5.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub n: f64,
    /// Joint `W_1` under the Euclidean metric on `(y, x)`.
    pub w1: f64,
    /// Conditional `W_{1,Y}`.
    pub w1y: f64,
    /// `E_y[W_1(μ|y, ν|y)]`.
    pub expected: f64,
    /// Joint `W_1` under the sum metric `|Δy| + |Δx|`.
    pub sum_metric_w1: f64,
    /// Conditional distance under the sum metric (conditions never move, so
    /// it coincides with `w1y`).
    pub sum_metric_w1y: f64,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

fn check(name: &str, passed: bool) -> Check {
    Check { name: name.into(), passed }
}

fn failed(checks: &[Check]) -> Vec<String> {
    checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect()
}

pub struct Counterexample;
seeded!(CounterexampleConfig, BetaSweepConfig, DualityConfig);

pub fn cmd_counterexample(cfg: &CounterexampleConfig) -> Result<CounterexampleReport> {
    let (mu, nu) = counterexample_pair(cfg.n)?;
    let w1 = wasserstein(&mu, &nu, 1.0)?.value;
    let cond = conditional_wasserstein(&mu, &nu, 1.0, 1e-12)?;
    let expected: f64 = cond.per_condition.iter().map(|c| c.weight * c.cost).sum();
    let sum_metric_w1 = relaxed_wasserstein(&mu, &nu, &CostSpec::relaxed(1.0, 1.0))?.value;
    let checks = vec![
        check("joint W1 equals 1", w1 == 1.0),
        check("conditional W1 equals n", cond.value == cfg.n),
        check("expected conditional W1 equals n", expected == cfg.n),
        check("sum-metric joint W1 below conditional", sum_metric_w1 < cond.value),
    ];
    Ok(CounterexampleReport { n: cfg.n, w1, w1y: cond.value, expected, sum_metric_w1, sum_metric_w1y: cond.value, checks })
}

impl Command for Counterexample {
    const NAME: &'static str = "counterexample";
    type Config = CounterexampleConfig;
    type Report = CounterexampleReport;

    fn run(cfg: &Self::Config) -> Result<Self::Report> {
        cmd_counterexample(cfg)
    }

    fn write(_cfg: &Self::Config, r: &Self::Report, dir: &RunDir) -> Result<()> {
        let rows = [
            ("n", r.n),
            ("w1", r.w1),
            ("w1y", r.w1y),
            ("expected", r.expected),
            ("sum_metric_w1", r.sum_metric_w1),
            ("sum_metric_w1y", r.sum_metric_w1y),
        ];
        dir.write_metrics(&["quantity", "value"], &rows.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]).collect::<Vec<_>>())
    }

    fn failures(r: &Self::Report) -> Vec<String> {
        failed(&r.checks)
    }
}

// ---------------------------------------------------------------- beta sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaSweepConfig {
    /// Sample count of the independent-normals instance used for the sweep.
    pub n: usize,
    pub dim: usize,
    pub betas: Vec<f64>,
    /// Sample count for the diagonal-coupling limit check.
    pub limit_n: usize,
    /// Tolerance for grouping conditions.
    pub tol: f64,
    pub seed: u64,
}

impl Default for BetaSweepConfig {
    fn default() -> Self {
        Self { n: 1000, dim: 1, betas: vec![1.0, 10.0, 100.0, 1e3, 1e4], limit_n: 10_000, tol: 1e-12, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    /// Optimal relaxed cost `W_{2,β}²`.
    pub relaxed_cost: f64,
    /// State part of the relaxed cost.
    pub x_cost: f64,
    /// `Σ π ‖Δy‖²` under the relaxed optimal plan.
    pub y_leakage: f64,
    pub beta_leakage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepReport {
    pub rows: Vec<BetaRow>,
    /// `W_{2,Y}²` of the sweep instance (the index-aligned plan is its only
    /// admissible coupling).
    pub conditional_cost: f64,
    /// Leakage at the largest β over leakage at the smallest.
    pub leakage_ratio: f64,
    /// Every `β·leakage` is at most `conditional_cost`.
    pub bounded_by_conditional: bool,
    /// Leakage never increases along the sweep (up to 1e-12).
    pub leakage_nonincreasing: bool,
    pub limit_n: usize,
    /// Cost of the index-aligned coupling at `limit_n` samples.
    pub diagonal_cost: f64,
    /// `W_{2,Y}(μ, μ)` at `limit_n` samples.
    pub self_distance: f64,
}

pub struct BetaSweep;

pub fn cmd_beta_sweep(cfg: &BetaSweepConfig) -> Result<BetaSweepReport> {
    if cfg.betas.is_empty() || cfg.betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(CliError::Validation("betas must be a nonempty list of finite values >= 0".into()));
    }
    let (mu, nu) = independent_normals_pair(cfg.n, cfg.dim, cfg.seed)?;
    let conditional_cost = conditional_wasserstein(&mu, &nu, 2.0, cfg.tol)?.cost;
    let mut betas = cfg.betas.clone();
    betas.sort_by(f64::total_cmp);
    let rows = betas
        .iter()
        .map(|&beta| -> Result<BetaRow> {
            let sol = relaxed_wasserstein(&mu, &nu, &CostSpec::relaxed(2.0, beta))?;
            let y_leakage = sol.plan.y_leakage(2.0);
            let x_cost = sol.cost - beta * y_leakage;
            Ok(BetaRow { beta, relaxed_cost: sol.cost, x_cost, y_leakage, beta_leakage: beta * y_leakage })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = rows.first().expect("nonempty").y_leakage;
    let last = rows.last().expect("nonempty").y_leakage;
    let leakage_ratio = if first > 0.0 { last / first } else { 0.0 };
    let bounded_by_conditional = rows.iter().all(|r| r.beta_leakage <= conditional_cost + 1e-9);
    let leakage_nonincreasing = rows.windows(2).all(|w| w[1].y_leakage <= w[0].y_leakage + 1e-12);

    let (lmu, lnu) = independent_normals_pair(cfg.limit_n, cfg.dim, rng::derive_seed(cfg.seed, 1))?;
    let diagonal_cost = index_aligned_plan(&lmu, &lnu, cfg.tol)?.cost(2.0);
    let self_distance = conditional_wasserstein(&lmu, &lmu, 2.0, cfg.tol)?.value;
    Ok(BetaSweepReport {
        rows,
        conditional_cost,
        leakage_ratio,
        bounded_by_conditional,
        leakage_nonincreasing,
        limit_n: cfg.limit_n,
        diagonal_cost,
        self_distance,
    })
}

impl Command for BetaSweep {
    const NAME: &'static str = "beta-sweep";
    type Config = BetaSweepConfig;
    type Report = BetaSweepReport;

    fn run(cfg: &Self::Config) -> Result<Self::Report> {
        cmd_beta_sweep(cfg)
    }

    fn write(_cfg: &Self::Config, r: &Self::Report, dir: &RunDir) -> Result<()> {
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|b| {
                vec![b.beta, b.relaxed_cost, b.x_cost, b.y_leakage, b.beta_leakage, r.conditional_cost]
                    .into_iter()
                    .map(|v| v.to_string())
                    .collect()
            })
            .collect();
        dir.write_metrics(&["beta", "relaxed_cost", "x_cost", "y_leakage", "beta_leakage", "conditional_cost"], &rows)
    }

    fn failures(r: &Self::Report) -> Vec<String> {
        let mut out = Vec::new();
        if !r.bounded_by_conditional {
            out.push("beta * leakage exceeds the conditional cost".into());
        }
        if !r.leakage_nonincreasing {
            out.push("leakage increased along the sweep".into());
        }
        out
    }
}

// ---------------------------------------------------------------- duality

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualityConfig {
    pub instances: usize,
    pub max_conditions: usize,
    pub max_atoms: usize,
    pub dim_y: usize,
    pub dim_x: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self { instances: 50, max_conditions: 4, max_atoms: 8, dim_y: 1, dim_x: 2, tol: 1e-9, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityRow {
    pub seed: u64,
    pub conditions: usize,
    pub atoms_per_condition: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub lipschitz_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub rows: Vec<DualityRow>,
    pub max_gap: f64,
    pub max_lipschitz_violation: f64,
    /// Gap for `μ = ν` on the first instance.
    pub identity_gap: f64,
    /// Gap on the two-point counterexample with `n = 5`.
    pub counterexample_gap: f64,
}

pub struct DualityCheck;

pub fn cmd_duality_check(cfg: &DualityConfig) -> Result<DualityReport> {
    if cfg.instances == 0 || cfg.max_conditions == 0 || cfg.max_atoms == 0 {
        return Err(CliError::Validation("instances, max_conditions and max_atoms must be >= 1".into()));
    }
    let rows = condot::par::map_range(cfg.instances, |k| -> Result<DualityRow> {
        let seed = cfg.seed + k as u64;
        let conditions = uniform_int(rng::derive_seed(seed, 1), 1, cfg.max_conditions);
        let atoms = uniform_int(rng::derive_seed(seed, 2), 1, cfg.max_atoms);
        let (mu, nu) = random_joint_instance(seed, cfg.dim_y, cfg.dim_x, conditions, atoms)?;
        let cert = dual_certificate(&mu, &nu, cfg.tol)?;
        Ok(DualityRow {
            seed,
            conditions,
            atoms_per_condition: atoms,
            primal: cert.primal,
            dual: cert.value,
            gap: cert.gap,
            lipschitz_violation: cert.lipschitz_violation(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (mu, _) = random_joint_instance(cfg.seed, cfg.dim_y, cfg.dim_x, 2, 3)?;
    let identity_gap = dual_certificate(&mu, &mu, cfg.tol)?.gap;
    let (a, b) = counterexample_pair(5.0)?;
    let counterexample_gap = dual_certificate(&a, &b, cfg.tol)?.gap;
    Ok(DualityReport {
        max_gap: rows.iter().map(|r| r.gap.abs()).fold(0.0, f64::max),
        max_lipschitz_violation: rows.iter().map(|r| r.lipschitz_violation).fold(0.0, f64::max),
        rows,
        identity_gap,
        counterexample_gap,
    })
}

impl Command for DualityCheck {
    const NAME: &'static str = "duality-check";
    type Config = DualityConfig;
    type Report = DualityReport;

    fn run(cfg: &Self::Config) -> Result<Self::Report> {
        cmd_duality_check(cfg)
    }

    fn write(_cfg: &Self::Config, r: &Self::Report, dir: &RunDir) -> Result<()> {
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|d| {
                vec![
                    d.seed.to_string(),
                    d.conditions.to_string(),
                    d.atoms_per_condition.to_string(),
                    d.primal.to_string(),
                    d.dual.to_string(),
                    d.gap.to_string(),
                    d.lipschitz_violation.to_string(),
                ]
            })
            .collect();
        dir.write_metrics(&["seed", "conditions", "atoms_per_condition", "primal", "dual", "gap", "lipschitz_violation"], &rows)
    }

    fn failures(r: &Self::Report) -> Vec<String> {
        let mut out = Vec::new();
        if r.max_gap >= 1e-6 {
            out.push(format!("duality gap {} >= 1e-6", r.max_gap));
        }
        if r.max_lipschitz_violation > 1e-8 {
            out.push(format!("lipschitz violation {} > 1e-8", r.max_lipschitz_violation));
        }
        out
    }
}
