//! Exact transportation problem via the primal network simplex on the
//! bipartite supply/demand graph (spanning-tree bases, u–v pricing).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One positive-mass cell of a transport plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "m")]
    pub mass: f64,
}

/// Sparse optimal plan and its total cost `Σ mass · c(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
    pub value: f64,
}

const TOTAL_TOL: f64 = 1e-10;

/// Solves `min Σ π_ij c_ij` subject to `π 1 = a`, `πᵀ 1 = b`, `π ≥ 0`.
///
/// `+inf` costs forbid a cell; an error is returned if the forbidden cells
/// cannot be avoided.
pub fn solve_transport(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<TransportPlan> {
    let (m, n) = cost.dim();
    if a.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: a.len() });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.len() });
    }
    if m == 0 || n == 0 {
        return Err(Error::InfeasibleTransport("empty marginal".into()));
    }
    if a.iter().chain(b).any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InfeasibleTransport("weights must be finite and nonnegative".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > TOTAL_TOL {
        return Err(Error::InfeasibleTransport(format!("marginal totals differ: {sa} vs {sb}")));
    }
    if cost.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
        return Err(Error::InvalidConfig("transport costs must be finite or +inf".into()));
    }

    // Forbidden cells get a penalty dominating any finite plan.
    let max_finite = cost.iter().filter(|c| c.is_finite()).fold(0.0f64, |acc, c| acc.max(c.abs()));
    let penalty = (max_finite + 1.0) * 1e4;
    let c = Array2::from_shape_fn((m, n), |ij| {
        let v = cost[ij];
        if v.is_finite() {
            v
        } else {
            penalty
        }
    });

    let mut solver = TreeSimplex::northwest_corner(a, b, c);
    solver.run()?;

    let mut entries = Vec::new();
    let mut value = 0.0;
    for &(i, j, mass) in &solver.basis {
        if mass > 0.0 {
            if !cost[[i, j]].is_finite() {
                if mass > 1e-14 {
                    return Err(Error::InfeasibleTransport("mass must cross a forbidden cell".into()));
                }
                continue;
            }
            value += mass * cost[[i, j]];
            entries.push(PlanEntry { i, j, mass });
        }
    }
    entries.sort_by_key(|e| (e.i, e.j));
    Ok(TransportPlan { entries, value })
}

struct TreeSimplex {
    m: usize,
    n: usize,
    cost: Array2<f64>,
    /// Basic cells `(row, col, mass)`; always `m + n - 1` of them.
    basis: Vec<(usize, usize, f64)>,
    is_basic: Vec<bool>,
}

impl TreeSimplex {
    fn northwest_corner(a: &[f64], b: &[f64], cost: Array2<f64>) -> Self {
        let (m, n) = cost.dim();
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let q = ra[i].min(rb[j]).max(0.0);
            basis.push((i, j, q));
            ra[i] -= q;
            rb[j] -= q;
            if i == m - 1 && j == n - 1 {
                break;
            }
            let advance_row = if i == m - 1 {
                false
            } else if j == n - 1 {
                true
            } else {
                ra[i] <= rb[j]
            };
            if advance_row {
                i += 1;
            } else {
                j += 1;
            }
        }
        let mut is_basic = vec![false; m * n];
        for &(i, j, _) in &basis {
            is_basic[i * n + j] = true;
        }
        Self { m, n, cost, basis, is_basic }
    }

    fn run(&mut self) -> Result<()> {
        let (m, n) = (self.m, self.n);
        let scale = self.cost.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
        let tol = 1e-12 * scale;
        let max_iter = 50 * (m + n) * (m + n) + 1000;
        let mut degenerate_run = 0usize;
        for _ in 0..max_iter {
            let (u, v) = self.potentials();
            let bland = degenerate_run > m + n;
            let mut enter: Option<(usize, usize)> = None;
            let mut best = -tol;
            'price: for i in 0..m {
                for j in 0..n {
                    if self.is_basic[i * n + j] {
                        continue;
                    }
                    let r = self.cost[[i, j]] - u[i] - v[j];
                    if r < best {
                        enter = Some((i, j));
                        if bland {
                            break 'price;
                        }
                        best = r;
                    }
                }
            }
            let Some((ei, ej)) = enter else {
                return Ok(());
            };
            let theta = self.pivot(ei, ej);
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
        }
        Err(Error::LpFailure("network simplex iteration limit reached".into()))
    }

    /// Tree adjacency: node `i < m` is row `i`, node `m + j` is column `j`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; m + n];
        let mut stack = Vec::with_capacity(m + n);
        pot[0] = 0.0;
        stack.push(0);
        while let Some(node) = stack.pop() {
            for &(next, k) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j, _) = self.basis[k];
                    pot[next] = self.cost[[i, j]] - pot[node];
                    stack.push(next);
                }
            }
        }
        let v = pot.split_off(m);
        (pot, v)
    }

    /// Brings cell `(ei, ej)` into the basis; returns the step length.
    fn pivot(&mut self, ei: usize, ej: usize) -> f64 {
        let m = self.m;
        let adj = self.adjacency();
        // Tree path from column node of `ej` to row node `ei`.
        let target = ei;
        let start = m + ej;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + self.n];
        let mut visited = vec![false; m + self.n];
        let mut stack = vec![start];
        visited[start] = true;
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &(next, k) in &adj[node] {
                if !visited[next] {
                    visited[next] = true;
                    parent[next] = Some((node, k));
                    stack.push(next);
                }
            }
        }
        // Walking back from `ei` to `ej`: edges alternate -, +, -, ... with the
        // edge incident to `ei` being a minus edge.
        let mut path_edges = Vec::new();
        let mut node = target;
        while node != start {
            let (prev, k) = parent[node].expect("basis is a spanning tree");
            path_edges.push(k);
            node = prev;
        }
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &k) in path_edges.iter().enumerate() {
            if pos % 2 == 0 {
                let mass = self.basis[k].2;
                if mass < theta {
                    theta = mass;
                    leave = k;
                }
            }
        }
        let theta = theta.max(0.0);
        for (pos, &k) in path_edges.iter().enumerate() {
            let cell = &mut self.basis[k];
            if pos % 2 == 0 {
                cell.2 = (cell.2 - theta).max(0.0);
            } else {
                cell.2 += theta;
            }
        }
        let (li, lj, _) = self.basis[leave];
        self.is_basic[li * self.n + lj] = false;
        self.basis[leave] = (ei, ej, theta);
        self.is_basic[ei * self.n + ej] = true;
        theta
    }
}
