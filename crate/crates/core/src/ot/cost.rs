//! Ground costs on the product space.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{euclidean, DiscreteJointMeasure, DEFAULT_CONDITION_TOL};

/// Exponent `p` and condition weight `β` of the relaxed cost
/// `d_β^p = ‖x₁ − x₂‖^p + β‖y₁ − y₂‖^p`.
///
/// `strict` stands for `β = ∞`: pairs with different conditions cost `+inf`
/// and the finite `beta` is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub p: f64,
    pub beta: f64,
    #[serde(default)]
    pub strict: bool,
}

impl CostSpec {
    pub fn relaxed(p: f64, beta: f64) -> Self {
        Self { p, beta, strict: false }
    }

    pub fn strict(p: f64) -> Self {
        Self { p, beta: 0.0, strict: true }
    }

    /// Cost on the state block only (`β = 0`).
    pub fn states_only(p: f64) -> Self {
        Self { p, beta: 0.0, strict: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::InvalidConfig(format!("cost exponent p = {} must be >= 1", self.p)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "beta = {} must be finite and >= 0 (use the strict flag for infinity)",
                self.beta
            )));
        }
        Ok(())
    }

    /// `d_β^p` between two atoms.
    pub fn eval(&self, ya: &[f64], xa: &[f64], yb: &[f64], xb: &[f64]) -> f64 {
        let cx = powp(euclidean(xa, xb), self.p);
        if self.strict {
            if euclidean(ya, yb) <= DEFAULT_CONDITION_TOL {
                cx
            } else {
                f64::INFINITY
            }
        } else if self.beta == 0.0 {
            cx
        } else {
            cx + self.beta * powp(euclidean(ya, yb), self.p)
        }
    }
}

/// `r^p`, exact for the common exponents.
pub(crate) fn powp(r: f64, p: f64) -> f64 {
    if p == 1.0 {
        r
    } else if p == 2.0 {
        r * r
    } else {
        r.powf(p)
    }
}

/// Dense table of `d_β^p` between the atoms of `a` (rows) and `b` (columns).
pub fn cost_matrix(a: &DiscreteJointMeasure, b: &DiscreteJointMeasure, spec: &CostSpec) -> Result<Array2<f64>> {
    a.check_same_space(b)?;
    spec.validate()?;
    let (ra, rb) = (a.atoms(), b.atoms());
    let mut out = Array2::zeros((ra.len(), rb.len()));
    let width = rb.len();
    crate::par::for_each_row(out.as_slice_mut().expect("standard layout"), width, |i, row| {
        let ai = &ra[i];
        for (c, bj) in row.iter_mut().zip(rb) {
            *c = if p2_fast(spec) {
                crate::measures::squared_euclidean(&ai.x, &bj.x)
                    + spec.beta * crate::measures::squared_euclidean(&ai.y, &bj.y)
            } else {
                spec.eval(&ai.y, &ai.x, &bj.y, &bj.x)
            };
        }
    });
    Ok(out)
}

fn p2_fast(spec: &CostSpec) -> bool {
    spec.p == 2.0 && !spec.strict
}

/// Table of `‖(y, x)_i − (y, x)_j‖^p` under the Euclidean norm of the joint
/// space; the ground cost of the unconstrained Wasserstein distance.
pub fn joint_cost_matrix(a: &DiscreteJointMeasure, b: &DiscreteJointMeasure, p: f64) -> Result<Array2<f64>> {
    a.check_same_space(b)?;
    if !(p >= 1.0) {
        return Err(Error::InvalidConfig(format!("cost exponent p = {p} must be >= 1")));
    }
    Ok(Array2::from_shape_fn((a.len(), b.len()), |(i, j)| {
        let (u, v) = (a.atom(i), b.atom(j));
        let sq = crate::measures::squared_euclidean(&u.y, &v.y) + crate::measures::squared_euclidean(&u.x, &v.x);
        powp(sq.sqrt(), p)
    }))
}
