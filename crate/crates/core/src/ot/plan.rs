//! Couplings between two joint measures: the 4-plan form (pairs of atoms) and
//! the condition-indexed 3-plan form available for `y`-diagonal plans.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cost::powp;
use super::transport::PlanEntry;
use crate::error::{Error, Result};
use crate::measures::{euclidean, group_by_condition, match_groups, ConditionGroup, DiscreteJointMeasure};

const MARGINAL_TOL: f64 = 1e-10;

/// Coupling of `source` and `target`, stored as atom-index pairs with mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan4 {
    source: Arc<DiscreteJointMeasure>,
    target: Arc<DiscreteJointMeasure>,
    entries: Vec<PlanEntry>,
    y_diagonal: bool,
}

/// JSON form of a plan: `{"entries":[{"i","j","m"}],"y_diagonal","value"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub entries: Vec<PlanEntry>,
    pub y_diagonal: bool,
    pub value: f64,
}

impl Plan4 {
    /// Builds a plan, checking both marginals and, if `y_diagonal` is set,
    /// that every entry pairs atoms with conditions within `tol`.
    pub fn new(
        source: Arc<DiscreteJointMeasure>,
        target: Arc<DiscreteJointMeasure>,
        entries: Vec<PlanEntry>,
        y_diagonal: bool,
        tol: f64,
    ) -> Result<Self> {
        source.check_same_space(&target)?;
        let mut rows = vec![0.0; source.len()];
        let mut cols = vec![0.0; target.len()];
        for e in &entries {
            if e.i >= source.len() || e.j >= target.len() {
                return Err(Error::InvalidMeasure(format!("plan entry ({}, {}) out of range", e.i, e.j)));
            }
            if !(e.mass > 0.0) {
                return Err(Error::InvalidMeasure(format!("plan entry ({}, {}) has mass {}", e.i, e.j, e.mass)));
            }
            rows[e.i] += e.mass;
            cols[e.j] += e.mass;
            if y_diagonal && euclidean(&source.atom(e.i).y, &target.atom(e.j).y) > tol {
                return Err(Error::NotDiagonal);
            }
        }
        let row_ok = rows.iter().zip(source.atoms()).all(|(r, a)| (r - a.w).abs() <= MARGINAL_TOL);
        let col_ok = cols.iter().zip(target.atoms()).all(|(c, a)| (c - a.w).abs() <= MARGINAL_TOL);
        if !row_ok || !col_ok {
            return Err(Error::InvalidMeasure("plan marginals do not match the measures".into()));
        }
        Ok(Self { source, target, entries, y_diagonal })
    }

    /// The plan `(id, id)_♯ μ`.
    pub fn identity(mu: Arc<DiscreteJointMeasure>) -> Self {
        let entries = mu
            .atoms()
            .iter()
            .enumerate()
            .filter(|(_, a)| a.w > 0.0)
            .map(|(i, a)| PlanEntry { i, j: i, mass: a.w })
            .collect();
        Self { source: mu.clone(), target: mu, entries, y_diagonal: true }
    }

    pub fn source(&self) -> &DiscreteJointMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteJointMeasure {
        &self.target
    }

    pub fn source_arc(&self) -> &Arc<DiscreteJointMeasure> {
        &self.source
    }

    pub fn target_arc(&self) -> &Arc<DiscreteJointMeasure> {
        &self.target
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn is_y_diagonal(&self) -> bool {
        self.y_diagonal
    }

    /// `Σ mass · ‖(y, x)_i − (y, x)_j‖^p` in the Euclidean joint norm.
    pub fn cost(&self, p: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let (a, b) = (self.source.atom(e.i), self.target.atom(e.j));
                let sq = crate::measures::squared_euclidean(&a.y, &b.y)
                    + crate::measures::squared_euclidean(&a.x, &b.x);
                e.mass * powp(sq.sqrt(), p)
            })
            .sum()
    }

    /// `Σ mass · ‖y_i − y_j‖^p`: how much the plan moves along conditions.
    pub fn y_leakage(&self, p: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| e.mass * powp(euclidean(&self.source.atom(e.i).y, &self.target.atom(e.j).y), p))
            .sum()
    }

    pub fn to_record(&self, value: f64) -> PlanRecord {
        PlanRecord { entries: self.entries.clone(), y_diagonal: self.y_diagonal, value }
    }

    pub fn from_record(
        record: &PlanRecord,
        source: Arc<DiscreteJointMeasure>,
        target: Arc<DiscreteJointMeasure>,
        tol: f64,
    ) -> Result<Self> {
        Self::new(source, target, record.entries.clone(), record.y_diagonal, tol)
    }
}

/// Mass-weighted condition displacement `Σ mass · ‖y_i − y_j‖^p` of a plan.
pub fn y_leakage(plan: &Plan4, p: f64) -> f64 {
    plan.y_leakage(p)
}

/// Entry of a 3-plan: condition index and the local indices of the two
/// conditional atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plan3Entry {
    pub cond: usize,
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

/// Coupling indexed by condition: a measure on `A × B × B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan3 {
    source: Arc<DiscreteJointMeasure>,
    target: Arc<DiscreteJointMeasure>,
    /// Condition groups of the source, in grouping order.
    source_groups: Vec<ConditionGroup>,
    /// Condition groups of the target, aligned with `source_groups`.
    target_groups: Vec<ConditionGroup>,
    entries: Vec<Plan3Entry>,
}

impl Plan3 {
    pub fn entries(&self) -> &[Plan3Entry] {
        &self.entries
    }

    pub fn conditions(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.source_groups.iter().map(|g| (g.y.as_slice(), g.weight))
    }

    /// `Σ mass · ‖x_i − x_j‖^p` over the paired conditional atoms.
    pub fn cost(&self, p: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let xa = &self.source_groups[e.cond].conditional[e.i].0;
                let xb = &self.target_groups[e.cond].conditional[e.j].0;
                e.mass * powp(euclidean(xa, xb), p)
            })
            .sum()
    }

    /// Largest deviation of the per-condition marginals from
    /// `P_Y(y) · P_{X|Y=y}` and `P_Y(y) · P_{Z|Y=y}`.
    pub fn marginal_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for (k, (gs, gt)) in self.source_groups.iter().zip(&self.target_groups).enumerate() {
            let mut rows = vec![0.0; gs.len()];
            let mut cols = vec![0.0; gt.len()];
            for e in self.entries.iter().filter(|e| e.cond == k) {
                rows[e.i] += e.mass;
                cols[e.j] += e.mass;
            }
            for (r, (_, c)) in rows.iter().zip(&gs.conditional) {
                worst = worst.max((r - gs.weight * c).abs());
            }
            for (r, (_, c)) in cols.iter().zip(&gt.conditional) {
                worst = worst.max((r - gt.weight * c).abs());
            }
        }
        worst
    }
}

fn local_index(groups: &[ConditionGroup], n: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(usize::MAX, usize::MAX); n];
    for (k, g) in groups.iter().enumerate() {
        for (l, &i) in g.members.iter().enumerate() {
            out[i] = (k, l);
        }
    }
    out
}

/// Rewrites a `y`-diagonal 4-plan as a 3-plan.
pub fn plan4_to_plan3(plan: &Plan4, tol: f64) -> Result<Plan3> {
    if !plan.is_y_diagonal() {
        return Err(Error::NotDiagonal);
    }
    let source_groups = group_by_condition(plan.source(), tol)?;
    let tg = group_by_condition(plan.target(), tol)?;
    let pairing = match_groups(&source_groups, &tg, tol).ok_or(Error::MarginalMismatch)?;
    let mut slots: Vec<Option<ConditionGroup>> = tg.into_iter().map(Some).collect();
    let target_groups: Vec<ConditionGroup> =
        pairing.iter().map(|&j| slots[j].take().expect("pairing is a bijection")).collect();
    let src_loc = local_index(&source_groups, plan.source().len());
    let tgt_loc = local_index(&target_groups, plan.target().len());
    let entries = plan
        .entries()
        .iter()
        .map(|e| {
            let (ks, i) = src_loc[e.i];
            let (kt, j) = tgt_loc[e.j];
            if ks != kt {
                return Err(Error::NotDiagonal);
            }
            Ok(Plan3Entry { cond: ks, i, j, mass: e.mass })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Plan3 {
        source: plan.source_arc().clone(),
        target: plan.target_arc().clone(),
        source_groups,
        target_groups,
        entries,
    })
}

/// Inverse of [`plan4_to_plan3`]: the diagonal 4-plan `(y, x₁, x₂) ↦ (y, x₁, y, x₂)`.
pub fn plan3_to_plan4(plan: &Plan3) -> Plan4 {
    let entries = plan
        .entries
        .iter()
        .map(|e| PlanEntry {
            i: plan.source_groups[e.cond].members[e.i],
            j: plan.target_groups[e.cond].members[e.j],
            mass: e.mass,
        })
        .collect();
    Plan4 { source: plan.source.clone(), target: plan.target.clone(), entries, y_diagonal: true }
}
