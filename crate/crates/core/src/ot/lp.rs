//! Small dense linear programs: `max cᵀx` subject to `Ax ≤ b`, `x ≥ 0`,
//! with `b ≥ 0` so the slack basis is feasible from the start.
//! Tableau simplex with Bland's rule (no cycling).

use crate::error::{Error, Result};

/// Largest number of structural variables accepted.
pub const MAX_VARIABLES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Maximizes `c·x` over `{x ≥ 0 : A x ≤ b}`; `a` is given row-wise.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let n = c.len();
    let r = a.len();
    if n == 0 || n > MAX_VARIABLES {
        return Err(Error::LpFailure(format!("{n} variables (limit {MAX_VARIABLES})")));
    }
    if b.len() != r || a.iter().any(|row| row.len() != n) {
        return Err(Error::LpFailure("constraint shapes disagree".into()));
    }
    if b.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::LpFailure("right-hand side must be nonnegative".into()));
    }
    let width = n + r + 1;
    let mut t = vec![0.0; (r + 1) * width];
    for (i, row) in a.iter().enumerate() {
        t[i * width..i * width + n].copy_from_slice(row);
        t[i * width + n + i] = 1.0;
        t[i * width + width - 1] = b[i];
    }
    let obj = r * width;
    for j in 0..n {
        t[obj + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + r).collect();
    let scale = c.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let max_pivots = 200 * (n + r) + 1000;

    for _ in 0..max_pivots {
        let Some(enter) = (0..n + r).find(|&j| t[obj + j] < -tol) else {
            let mut x = vec![0.0; n];
            for (i, &bv) in basis.iter().enumerate() {
                if bv < n {
                    x[bv] = t[i * width + width - 1];
                }
            }
            let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
            return Ok(LpSolution { x, objective });
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..r {
            let aij = t[i * width + enter];
            if aij > 1e-12 {
                let ratio = t[i * width + width - 1] / aij;
                let better = match leave {
                    None => true,
                    Some(l) => ratio < best - 1e-14 || (ratio <= best + 1e-14 && basis[i] < basis[l]),
                };
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(pr) = leave else {
            return Err(Error::LpFailure("objective is unbounded".into()));
        };
        let piv = t[pr * width + enter];
        for v in &mut t[pr * width..(pr + 1) * width] {
            *v /= piv;
        }
        let pivot_row: Vec<f64> = t[pr * width..(pr + 1) * width].to_vec();
        for i in 0..=r {
            if i == pr {
                continue;
            }
            let f = t[i * width + enter];
            if f != 0.0 {
                for (v, p) in t[i * width..(i + 1) * width].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
        basis[pr] = enter;
    }
    Err(Error::LpFailure("pivot limit reached".into()))
}
