//! Discrete joint measures on a condition space `A ⊂ R^d` times a state space
//! `B ⊂ R^m`, and their disintegration into per-condition groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default tolerance for deciding that two condition vectors are the same.
pub const DEFAULT_CONDITION_TOL: f64 = 1e-9;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One weighted atom `(y, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub w: f64,
}

impl Atom {
    pub fn new(y: Vec<f64>, x: Vec<f64>, w: f64) -> Self {
        Self { y, x, w }
    }
}

#[derive(Deserialize)]
struct RawMeasure {
    d: usize,
    m: usize,
    atoms: Vec<Atom>,
}

/// A finitely supported probability measure on `R^d × R^m`.
///
/// Weights are explicit and duplicate atoms are kept as separate entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct DiscreteJointMeasure {
    d: usize,
    m: usize,
    atoms: Vec<Atom>,
}

impl TryFrom<RawMeasure> for DiscreteJointMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        Self::new(raw.d, raw.m, raw.atoms)
    }
}

impl DiscreteJointMeasure {
    pub fn new(d: usize, m: usize, atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("measure has no atoms".into()));
        }
        let mut total = 0.0;
        for (k, a) in atoms.iter().enumerate() {
            if a.y.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: a.y.len() });
            }
            if a.x.len() != m {
                return Err(Error::DimensionMismatch { expected: m, found: a.x.len() });
            }
            if !(a.w >= 0.0) || !a.w.is_finite() {
                return Err(Error::InvalidMeasure(format!("atom {k} has weight {}", a.w)));
            }
            if a.y.iter().chain(&a.x).any(|v| !v.is_finite()) {
                return Err(Error::InvalidMeasure(format!("atom {k} has a non-finite coordinate")));
            }
            total += a.w;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok(Self { d, m, atoms })
    }

    /// Uniformly weighted measure on the given `(y, x)` pairs.
    pub fn uniform(d: usize, m: usize, points: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidMeasure("measure has no atoms".into()));
        }
        let w = 1.0 / n as f64;
        let atoms = points.into_iter().map(|(y, x)| Atom { y, x, w }).collect();
        Self::new(d, m, atoms)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.w).collect()
    }

    /// True when every atom carries weight `1/n` (to within 1e-15 relative).
    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.atoms.iter().all(|a| (a.w - w).abs() <= 1e-15 * w.max(1e-300) * 4.0)
    }

    /// Copy with every condition vector multiplied by `factor`.
    pub fn scale_conditions(&self, factor: f64) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { y: a.y.iter().map(|v| v * factor).collect(), x: a.x.clone(), w: a.w })
            .collect();
        Self { d: self.d, m: self.m, atoms }
    }

    /// Copy with the state vectors replaced, keeping conditions and weights.
    pub fn with_states(&self, xs: Vec<Vec<f64>>) -> Result<Self> {
        if xs.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: xs.len() });
        }
        let atoms = self
            .atoms
            .iter()
            .zip(xs)
            .map(|(a, x)| Atom { y: a.y.clone(), x, w: a.w })
            .collect();
        Self::new(self.d, self.m, atoms)
    }

    pub fn check_same_space(&self, other: &Self) -> Result<()> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: other.d });
        }
        if self.m != other.m {
            return Err(Error::DimensionMismatch { expected: self.m, found: other.m });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Atoms of a measure sharing one condition value, with the conditional law.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionGroup {
    /// Representative condition (the first member's `y`).
    pub y: Vec<f64>,
    /// Mass of this condition under the `y`-marginal.
    pub weight: f64,
    /// Indices of the member atoms in the grouped measure.
    pub members: Vec<usize>,
    /// Conditional law: state vectors and their renormalized weights.
    pub conditional: Vec<(Vec<f64>, f64)>,
}

impl ConditionGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn conditional_weights(&self) -> Vec<f64> {
        self.conditional.iter().map(|(_, w)| *w).collect()
    }

    /// Whether the conditional puts equal mass on every member.
    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.conditional.iter().all(|(_, c)| (c - w).abs() <= 1e-12 * w)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Disintegrates `mu` by condition. Atoms within `tol` of a group's
/// representative join that group; groups appear in first-occurrence order.
pub fn group_by_condition(mu: &DiscreteJointMeasure, tol: f64) -> Result<Vec<ConditionGroup>> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidConfig(format!("grouping tolerance {tol} must be >= 0")));
    }
    let mut reps: Vec<usize> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, atom) in mu.atoms().iter().enumerate() {
        let hit = reps.iter().position(|&r| euclidean(&mu.atom(r).y, &atom.y) <= tol);
        match hit {
            Some(g) => members[g].push(i),
            None => {
                reps.push(i);
                members.push(vec![i]);
            }
        }
    }
    for a in 0..reps.len() {
        for b in a + 1..reps.len() {
            if euclidean(&mu.atom(reps[a]).y, &mu.atom(reps[b]).y) <= 2.0 * tol {
                return Err(Error::AmbiguousGrouping { a: reps[a], b: reps[b] });
            }
        }
    }
    let groups = reps
        .into_iter()
        .zip(members)
        .map(|(rep, idx)| {
            let weight: f64 = idx.iter().map(|&i| mu.atom(i).w).sum();
            let n = idx.len() as f64;
            let conditional = idx
                .iter()
                .map(|&i| {
                    let a = mu.atom(i);
                    // Zero-mass conditions keep a uniform conditional so the
                    // weights still sum to one.
                    let c = if weight > 0.0 { a.w / weight } else { 1.0 / n };
                    (a.x.clone(), c)
                })
                .collect();
            ConditionGroup { y: mu.atom(rep).y.clone(), weight, members: idx, conditional }
        })
        .collect();
    Ok(groups)
}

/// Pairs each group of `a` with the group of `b` at the same condition.
/// Returns `None` if the condition sets or their masses differ.
pub(crate) fn match_groups(
    a: &[ConditionGroup],
    b: &[ConditionGroup],
    tol: f64,
) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    let wtol = tol.max(1e-12);
    let mut used = vec![false; b.len()];
    let mut pairing = Vec::with_capacity(a.len());
    for ga in a {
        let j = b.iter().enumerate().position(|(j, gb)| {
            !used[j] && euclidean(&ga.y, &gb.y) <= tol && (ga.weight - gb.weight).abs() <= wtol
        })?;
        used[j] = true;
        pairing.push(j);
    }
    Some(pairing)
}

/// Whether `mu` and `nu` have the same `y`-marginal (up to `tol`).
pub fn same_condition_marginal(
    mu: &DiscreteJointMeasure,
    nu: &DiscreteJointMeasure,
    tol: f64,
) -> Result<bool> {
    if mu.d() != nu.d() {
        return Ok(false);
    }
    let ga = group_by_condition(mu, tol)?;
    let gb = group_by_condition(nu, tol)?;
    Ok(match_groups(&ga, &gb, tol).is_some())
}

/// Reassembles a measure from its condition groups; inverse of
/// [`group_by_condition`] up to floating-point rounding of the weights.
pub fn flatten_groups(d: usize, m: usize, groups: &[ConditionGroup]) -> Result<DiscreteJointMeasure> {
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let mut slots: Vec<Option<Atom>> = vec![None; n];
    for g in groups {
        for (&i, (x, c)) in g.members.iter().zip(&g.conditional) {
            let slot = slots
                .get_mut(i)
                .ok_or_else(|| Error::InvalidMeasure(format!("member index {i} out of range")))?;
            *slot = Some(Atom { y: g.y.clone(), x: x.clone(), w: g.weight * c });
        }
    }
    let atoms = slots
        .into_iter()
        .enumerate()
        .map(|(i, a)| a.ok_or_else(|| Error::InvalidMeasure(format!("atom {i} missing"))))
        .collect::<Result<Vec<_>>>()?;
    DiscreteJointMeasure::new(d, m, atoms)
}

/// Two uniformly weighted measures with identical `y`-marginals on
/// `n_conditions` distinct standard-normal condition points, each carrying
/// `n_per_condition` standard-normal states.
pub fn random_joint_instance(
    seed: u64,
    d: usize,
    m: usize,
    n_conditions: usize,
    n_per_condition: usize,
) -> Result<(DiscreteJointMeasure, DiscreteJointMeasure)> {
    if d == 0 || m == 0 || n_conditions == 0 || n_per_condition == 0 {
        return Err(Error::InvalidConfig("all counts must be >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut conditions: Vec<Vec<f64>> = Vec::with_capacity(n_conditions);
    while conditions.len() < n_conditions {
        let y = rng::standard_normal(&mut rng, d);
        if conditions.iter().all(|c| euclidean(c, &y) > 1e-6) {
            conditions.push(y);
        }
    }
    let draw = |rng: &mut rng::Rng| {
        let mut pts = Vec::with_capacity(n_conditions * n_per_condition);
        for y in &conditions {
            for _ in 0..n_per_condition {
                pts.push((y.clone(), rng::standard_normal(rng, m)));
            }
        }
        pts
    };
    let a = draw(&mut rng);
    let b = draw(&mut rng);
    Ok((DiscreteJointMeasure::uniform(d, m, a)?, DiscreteJointMeasure::uniform(d, m, b)?))
}
