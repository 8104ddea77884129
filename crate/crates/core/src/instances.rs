//! Reference instances: the two-point pair on which the conditional distance
//! exceeds the joint one, and empirical pairs of independent normals on which
//! the conditional plan is forced to be index-aligned.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::DiscreteJointMeasure;
use crate::ot::{Plan4, PlanEntry};
use crate::rng;

/// `μ = ½δ_(0,0) + ½δ_(1,n)` and `ν = ½δ_(1,0) + ½δ_(0,n)` on `R × R`.
///
/// Joint `W_1(μ, ν) = 1` (swap the conditions), while any coupling that keeps
/// conditions fixed must move each state by `n`, so `W_{1,Y}(μ, ν) = n`.
pub fn counterexample_pair(n: f64) -> Result<(DiscreteJointMeasure, DiscreteJointMeasure)> {
    if !(n > 1.0) || !n.is_finite() {
        return Err(Error::InvalidConfig(format!("counterexample needs n > 1, got {n}")));
    }
    let mu = DiscreteJointMeasure::uniform(1, 1, vec![(vec![0.0], vec![0.0]), (vec![1.0], vec![n])])?;
    let nu = DiscreteJointMeasure::uniform(1, 1, vec![(vec![1.0], vec![0.0]), (vec![0.0], vec![n])])?;
    Ok((mu, nu))
}

/// Draws `(y_i, x_i, z_i)` i.i.d. standard normal in `R^dim` each and returns
/// `μ_n = (1/n) Σ δ_(y_i, x_i)` and `ν_n = (1/n) Σ δ_(y_i, z_i)`.
pub fn independent_normals_pair(n: usize, dim: usize, seed: u64) -> Result<(DiscreteJointMeasure, DiscreteJointMeasure)> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidConfig("need n >= 1 and dim >= 1".into()));
    }
    let mut g = rng::seeded(seed);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng::standard_normal(&mut g, dim);
        let x = rng::standard_normal(&mut g, dim);
        let z = rng::standard_normal(&mut g, dim);
        a.push((y.clone(), x));
        b.push((y, z));
    }
    Ok((DiscreteJointMeasure::uniform(dim, dim, a)?, DiscreteJointMeasure::uniform(dim, dim, b)?))
}

/// The index-aligned plan `Σ w_i δ_(atom_i, atom_i)` between two measures with
/// the same weights, marked `y`-diagonal when every pair shares its condition.
pub fn index_aligned_plan(mu: &DiscreteJointMeasure, nu: &DiscreteJointMeasure, tol: f64) -> Result<Plan4> {
    if mu.len() != nu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: nu.len() });
    }
    let entries: Vec<PlanEntry> = mu
        .atoms()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.w > 0.0)
        .map(|(i, a)| PlanEntry { i, j: i, mass: a.w })
        .collect();
    let diagonal = mu
        .atoms()
        .iter()
        .zip(nu.atoms())
        .all(|(a, b)| crate::measures::euclidean(&a.y, &b.y) <= tol);
    Plan4::new(Arc::new(mu.clone()), Arc::new(nu.clone()), entries, diagonal, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::conditional_wasserstein;

    #[test]
    fn counterexample_rejects_small_n() {
        assert!(counterexample_pair(1.0).is_err());
        assert!(counterexample_pair(f64::NAN).is_err());
        let (mu, nu) = counterexample_pair(3.0).unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(nu.atom(1).x, vec![3.0]);
    }

    #[test]
    fn normals_pair_shares_conditions_and_forces_the_aligned_plan() {
        let (mu, nu) = independent_normals_pair(50, 1, 3).unwrap();
        assert!(mu.atoms().iter().zip(nu.atoms()).all(|(a, b)| a.y == b.y));
        let aligned = index_aligned_plan(&mu, &nu, 1e-12).unwrap();
        assert!(aligned.is_y_diagonal());
        let solved = conditional_wasserstein(&mu, &nu, 2.0, 1e-12).unwrap();
        assert!((solved.cost - aligned.cost(2.0)).abs() < 1e-12);
    }
}
