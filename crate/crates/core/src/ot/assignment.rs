//! Dense linear assignment by shortest augmenting paths (Jonker–Volgenant /
//! Crouse variant). Entries may be `+inf` to forbid a pairing.

use ndarray::Array2;

use crate::error::{Error, Result};

/// A minimizing permutation and its mean cost `(1/n) Σ c(i, σ(i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `perm[i]` is the column assigned to row `i`.
    pub perm: Vec<usize>,
    pub cost: f64,
}

const NONE: usize = usize::MAX;

/// Solves `min_σ (1/n) Σ_i cost[i, σ(i)]` exactly.
pub fn solve_assignment(cost: &Array2<f64>) -> Result<Assignment> {
    let (n, nc) = cost.dim();
    if n != nc {
        return Err(Error::DimensionMismatch { expected: n, found: nc });
    }
    if n == 0 {
        return Ok(Assignment { perm: vec![], cost: 0.0 });
    }
    if cost.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
        return Err(Error::InvalidConfig("assignment costs must be finite or +inf".into()));
    }
    let c = cost.as_standard_layout();
    let c = c.as_slice().expect("standard layout");

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut spc = vec![f64::INFINITY; n];
    let mut in_sr = vec![false; n];
    let mut in_sc = vec![false; n];
    let mut remaining = vec![0usize; n];

    for cur_row in 0..n {
        let mut min_val = 0.0;
        let mut num_remaining = n;
        for (k, r) in remaining.iter_mut().enumerate() {
            // Reverse order makes the identity the answer for constant tables.
            *r = n - k - 1;
        }
        in_sr.fill(false);
        in_sc.fill(false);
        spc.fill(f64::INFINITY);

        let mut i = cur_row;
        let mut sink = NONE;
        while sink == NONE {
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            in_sr[i] = true;
            let row = &c[i * n..(i + 1) * n];
            for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                let r = min_val + row[j] - u[i] - v[j];
                if r < spc[j] {
                    path[j] = i;
                    spc[j] = r;
                }
                if spc[j] < lowest || (spc[j] == lowest && row4col[j] == NONE) {
                    lowest = spc[j];
                    index = it;
                }
            }
            min_val = lowest;
            if !min_val.is_finite() || index == NONE {
                return Err(Error::InfeasibleAssignment);
            }
            let j = remaining[index];
            if row4col[j] == NONE {
                sink = j;
            } else {
                i = row4col[j];
            }
            in_sc[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
        }

        u[cur_row] += min_val;
        for r in 0..n {
            if in_sr[r] && r != cur_row {
                u[r] += min_val - spc[col4row[r]];
            }
        }
        for j in 0..n {
            if in_sc[j] {
                v[j] -= min_val - spc[j];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }

    let total: f64 = col4row.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
    Ok(Assignment { perm: col4row, cost: total / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn brute_force(cost: &Array2<f64>) -> f64 {
        fn rec(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = cost.nrows();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[[row, j]], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
        best / cost.nrows() as f64
    }

    #[test]
    fn three_by_three_band() {
        let c = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.perm, vec![0, 1, 2]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn dominant_diagonal_gives_identity() {
        let mut c = Array2::from_elem((6, 6), 1e6);
        for i in 0..6 {
            c[[i, i]] = 0.0;
        }
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.perm, (0..6).collect::<Vec<_>>());
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn crossing_pairs_of_the_two_point_example() {
        // rows: (0,0), (1,5); cols: (1,0), (0,5); p = 1, beta = 1
        let c = array![[1.0, 5.0], [5.0, 1.0]];
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.cost, 1.0);
    }

    #[test]
    fn infinite_entries_are_avoided() {
        let inf = f64::INFINITY;
        let c = array![[inf, 1.0, inf], [2.0, inf, inf], [inf, inf, 3.0]];
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.perm, vec![1, 0, 2]);
        assert_eq!(a.cost, 2.0);
        let blocked = array![[inf, inf], [1.0, 2.0]];
        assert!(matches!(solve_assignment(&blocked), Err(Error::InfeasibleAssignment)));
        let nan = array![[f64::NAN]];
        assert!(solve_assignment(&nan).is_err());
        assert!(solve_assignment(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn agrees_with_enumeration_on_random_tables() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(11);
        for n in 1..=7 {
            for _ in 0..20 {
                let c = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
                let a = solve_assignment(&c).unwrap();
                assert!((a.cost - brute_force(&c)).abs() < 1e-12);
                let mut seen = a.perm.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
