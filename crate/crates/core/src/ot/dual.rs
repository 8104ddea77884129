//! Dual certificate for `W_{1,Y}`: per condition, the Kantorovich–Rubinstein
//! potential maximizing `E_{X|y} h − E_{Z|y} h` over 1-Lipschitz `h(y, ·)`.

use super::distance::conditional_wasserstein;
use super::lp;
use crate::error::{Error, Result};
use crate::measures::{euclidean, group_by_condition, match_groups, DiscreteJointMeasure};

/// Potential of one condition on the union of both conditional supports.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionPotential {
    pub y: Vec<f64>,
    pub weight: f64,
    /// Support points: the source conditional atoms, then the target ones.
    pub points: Vec<Vec<f64>>,
    /// `h(y, point)` for each support point.
    pub h: Vec<f64>,
    pub source_len: usize,
    /// `E_{X|y} h − E_{Z|y} h`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub conditions: Vec<ConditionPotential>,
    /// `Σ_y P_Y(y) (E_{X|y} h − E_{Z|y} h)`.
    pub value: f64,
    /// Primal `W_{1,Y}` from the exact conditional solver.
    pub primal: f64,
    /// `|value − primal|`.
    pub gap: f64,
}

impl DualCertificate {
    /// Largest `|h(y,a) − h(y,b)| − ‖a − b‖` over all support pairs.
    pub fn lipschitz_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for c in &self.conditions {
            for (k, pk) in c.points.iter().enumerate() {
                for (l, pl) in c.points.iter().enumerate() {
                    if k != l {
                        worst = worst.max((c.h[k] - c.h[l]).abs() - euclidean(pk, pl));
                    }
                }
            }
        }
        worst.max(0.0)
    }
}

/// Solves the per-condition dual LPs for `p = 1` and reports the duality gap
/// against the primal conditional distance.
pub fn dual_certificate(mu: &DiscreteJointMeasure, nu: &DiscreteJointMeasure, tol: f64) -> Result<DualCertificate> {
    mu.check_same_space(nu)?;
    let ga = group_by_condition(mu, tol)?;
    let gb = group_by_condition(nu, tol)?;
    let pairing = match_groups(&ga, &gb, tol).ok_or(Error::MarginalMismatch)?;

    let solved = crate::par::map_range(ga.len(), |k| -> Result<ConditionPotential> {
        let (src, tgt) = (&ga[k], &gb[pairing[k]]);
        let points: Vec<Vec<f64>> =
            src.conditional.iter().chain(&tgt.conditional).map(|(x, _)| x.clone()).collect();
        let n = points.len();
        if n > lp::MAX_VARIABLES {
            return Err(Error::LpFailure(format!(
                "condition {k} has {n} support points (limit {})",
                lp::MAX_VARIABLES
            )));
        }
        let c: Vec<f64> = src
            .conditional
            .iter()
            .map(|(_, w)| *w)
            .chain(tgt.conditional.iter().map(|(_, w)| -*w))
            .collect();
        // Potentials are shifted to be nonnegative; the objective is
        // translation invariant because both conditionals have unit mass.
        let mut rows = Vec::with_capacity(n * n.saturating_sub(1));
        let mut rhs = Vec::with_capacity(rows.capacity());
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let mut row = vec![0.0; n];
                    row[a] = 1.0;
                    row[b] = -1.0;
                    rows.push(row);
                    rhs.push(euclidean(&points[a], &points[b]));
                }
            }
        }
        let sol = lp::maximize(&c, &rows, &rhs)?;
        let shift = sol.x.iter().cloned().fold(f64::INFINITY, f64::min);
        let h: Vec<f64> = sol.x.iter().map(|v| v - shift).collect();
        let value = c.iter().zip(&h).map(|(ci, hi)| ci * hi).sum();
        Ok(ConditionPotential {
            y: src.y.clone(),
            weight: src.weight,
            points,
            h,
            source_len: src.len(),
            value,
        })
    });
    let conditions = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let value = conditions.iter().map(|c| c.weight * c.value).sum();
    let primal = conditional_wasserstein(mu, nu, 1.0, tol)?.value;
    Ok(DualCertificate { conditions, value, primal, gap: (value - primal).abs() })
}
