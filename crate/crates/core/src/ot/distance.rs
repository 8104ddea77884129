//! Plain, conditional and relaxed Wasserstein distances between discrete
//! joint measures.

use std::sync::Arc;

use ndarray::Array2;

use super::assignment::solve_assignment;
use super::cost::{cost_matrix, joint_cost_matrix, powp, CostSpec};
use super::plan::Plan4;
use super::transport::{solve_transport, PlanEntry};
use crate::error::{Error, Result};
use crate::measures::{group_by_condition, match_groups, DiscreteJointMeasure};

/// Contribution of one condition to a conditional distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCost {
    pub y: Vec<f64>,
    /// `P_Y(y)`.
    pub weight: f64,
    /// `W_p^p` between the two conditionals at `y`.
    pub cost: f64,
}

/// Optimal value and plan of a transport problem.
#[derive(Debug, Clone)]
pub struct OtSolution {
    /// The distance (the `p`-th root of `cost`).
    pub value: f64,
    /// Optimal transport cost, i.e. `value^p`.
    pub cost: f64,
    pub plan: Plan4,
    /// Per-condition breakdown; empty for unconstrained problems.
    pub per_condition: Vec<ConditionCost>,
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p == 1.0 || p == 2.0 {
        Ok(())
    } else {
        Err(Error::UnsupportedExponent(p))
    }
}

fn root(cost: f64, p: f64) -> f64 {
    let c = cost.max(0.0);
    if p == 1.0 {
        c
    } else {
        c.powf(1.0 / p)
    }
}

/// Exact plan for weights `a`, `b` and a dense cost. Uniform equal-size
/// problems go to the assignment solver, everything else to the network
/// simplex. Returned entries have masses scaled to the given weights.
pub(crate) fn solve_dense(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<(Vec<PlanEntry>, f64)> {
    let n = a.len();
    let uniform = |w: &[f64]| {
        let first = w[0];
        first > 0.0 && w.iter().all(|v| (v - first).abs() <= 1e-12 * first)
    };
    if n == b.len() && n > 0 && uniform(a) && uniform(b) && (a[0] - b[0]).abs() <= 1e-12 * a[0] {
        let asg = solve_assignment(cost)?;
        let mass = a[0];
        let entries: Vec<PlanEntry> =
            asg.perm.iter().enumerate().map(|(i, &j)| PlanEntry { i, j, mass }).collect();
        let value = entries.iter().map(|e| e.mass * cost[[e.i, e.j]]).sum();
        Ok((entries, value))
    } else {
        let plan = solve_transport(a, b, cost)?;
        Ok((plan.entries, plan.value))
    }
}

/// `W_p` over all couplings with the Euclidean norm of the joint space.
pub fn wasserstein(mu: &DiscreteJointMeasure, nu: &DiscreteJointMeasure, p: f64) -> Result<OtSolution> {
    check_exponent(p)?;
    let cost = joint_cost_matrix(mu, nu, p)?;
    let (entries, total) = solve_dense(&mu.weights(), &nu.weights(), &cost)?;
    let plan = Plan4::new(Arc::new(mu.clone()), Arc::new(nu.clone()), entries, false, 0.0)?;
    Ok(OtSolution { value: root(total, p), cost: total, plan, per_condition: vec![] })
}

/// Conditional distance `W_{p,Y}`: optimal transport restricted to couplings
/// that never move mass between conditions.
///
/// Both measures are disintegrated by condition, each pair of conditionals
/// is solved exactly, and the per-condition plans are assembled into one
/// `y`-diagonal plan. The returned cost is `Σ_y P_Y(y) W_p^p(X|y, Z|y)`.
pub fn conditional_wasserstein(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    p: f64,
    tol: f64,
) -> Result<OtSolution> {
    check_exponent(p)?;
    mu.check_same_space(nu)?;
    let ga = group_by_condition(mu, tol)?;
    let gb = group_by_condition(nu, tol)?;
    let pairing = match_groups(&ga, &gb, tol).ok_or(Error::MarginalMismatch)?;

    let solves = crate::par::map_range(ga.len(), |k| -> Result<(Vec<PlanEntry>, f64)> {
        let (src, tgt) = (&ga[k], &gb[pairing[k]]);
        let cost = Array2::from_shape_fn((src.len(), tgt.len()), |(i, j)| {
            powp(crate::measures::euclidean(&src.conditional[i].0, &tgt.conditional[j].0), p)
        });
        let (local, cond_cost) = solve_dense(&src.conditional_weights(), &tgt.conditional_weights(), &cost)?;
        let entries = local
            .into_iter()
            .filter(|e| e.mass * src.weight > 0.0)
            .map(|e| PlanEntry { i: src.members[e.i], j: tgt.members[e.j], mass: e.mass * src.weight })
            .collect();
        Ok((entries, cond_cost))
    });

    let mut entries = Vec::new();
    let mut per_condition = Vec::with_capacity(ga.len());
    let mut total = 0.0;
    for (k, solved) in solves.into_iter().enumerate() {
        let (e, c) = solved?;
        entries.extend(e);
        total += ga[k].weight * c;
        per_condition.push(ConditionCost { y: ga[k].y.clone(), weight: ga[k].weight, cost: c });
    }
    let plan = Plan4::new(Arc::new(mu.clone()), Arc::new(nu.clone()), entries, true, tol)?;
    Ok(OtSolution { value: root(total, p), cost: total, plan, per_condition })
}

/// Relaxed distance `W_{p,β}`: optimal transport over all couplings under
/// `d_β^p = ‖Δx‖^p + β‖Δy‖^p`. For `p = 2` this equals plain `W_2` after
/// scaling conditions by `√β`.
pub fn relaxed_wasserstein(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    spec: &CostSpec,
) -> Result<OtSolution> {
    check_exponent(spec.p)?;
    if spec.strict {
        return Err(Error::InvalidConfig(
            "relaxed distance needs a finite beta; use conditional_wasserstein for beta = inf".into(),
        ));
    }
    let cost = cost_matrix(mu, nu, spec)?;
    let (entries, total) = solve_dense(&mu.weights(), &nu.weights(), &cost)?;
    let plan = Plan4::new(Arc::new(mu.clone()), Arc::new(nu.clone()), entries, false, 0.0)?;
    Ok(OtSolution { value: root(total, spec.p), cost: total, plan, per_condition: vec![] })
}
