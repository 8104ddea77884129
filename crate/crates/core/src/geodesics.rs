//! Displacement interpolation along a plan, its per-entry velocity field, the
//! kinetic (Benamou–Brenier) energy, and explicit Euler integration of flows.
//!
//! Velocities are Lagrangian: each plan entry carries one straight trajectory
//! `e_t = (1 − t)·a + t·b` with constant velocity `b − a`. For `y`-diagonal
//! plans the condition coordinate is held at the source value and its
//! velocity is exactly zero.

use std::io::Write;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::measures::{Atom, DiscreteJointMeasure};
use crate::ot::{conditional_wasserstein, Plan4};

/// Relative tolerance for treating two interpolated atoms as the same point.
const POSITION_TOL: f64 = 1e-12;
/// Relative tolerance for matching a queried state to a plan trajectory.
const TRAJECTORY_TOL: f64 = 1e-9;

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("time {t} outside [0, 1]")))
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| (1.0 - t) * u + t * v).collect()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter().zip(a).map(|(v, u)| v - u).collect()
}

/// Position of plan entry `k` at time `t`.
fn entry_position(plan: &Plan4, k: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let e = &plan.entries()[k];
    let (a, b) = (plan.source().atom(e.i), plan.target().atom(e.j));
    let y = if plan.is_y_diagonal() { a.y.clone() } else { lerp(&a.y, &b.y, t) };
    (y, lerp(&a.x, &b.x, t))
}

/// Constant velocity of plan entry `k`.
fn entry_velocity(plan: &Plan4, k: usize) -> (Vec<f64>, Vec<f64>) {
    let e = &plan.entries()[k];
    let (a, b) = (plan.source().atom(e.i), plan.target().atom(e.j));
    let vy = if plan.is_y_diagonal() { vec![0.0; a.y.len()] } else { diff(&a.y, &b.y) };
    (vy, diff(&a.x, &b.x))
}

/// `μ_t = (e_t)_♯ plan`: one atom per plan entry, weighted by its mass.
/// Coincident atoms are not merged.
pub fn interpolate(plan: &Plan4, t: f64) -> Result<DiscreteJointMeasure> {
    check_time(t)?;
    let atoms = (0..plan.entries().len())
        .map(|k| {
            let (y, x) = entry_position(plan, k, t);
            Atom::new(y, x, plan.entries()[k].mass)
        })
        .collect();
    DiscreteJointMeasure::new(plan.source().d(), plan.source().m(), atoms)
}

/// Interpolated atoms and their velocities at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySample {
    pub t: f64,
    pub positions: Vec<(Vec<f64>, Vec<f64>)>,
    pub velocities: Vec<(Vec<f64>, Vec<f64>)>,
    pub weights: Vec<f64>,
}

impl VelocitySample {
    /// `‖v_t‖²` in `L²(μ_t)`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.velocities
            .iter()
            .zip(&self.weights)
            .map(|((vy, vx), w)| w * (vy.iter().chain(vx).map(|v| v * v).sum::<f64>()))
            .sum()
    }
}

fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    a.iter().zip(b).all(|(u, v)| (u - v).abs() <= rel * (1.0 + u.abs().max(v.abs())))
}

/// Velocity of every interpolated atom at time `t`.
///
/// Fails with [`Error::VelocityCollision`] when two entries occupy the same
/// point with different velocities, where no single-valued field exists.
pub fn velocity_field(plan: &Plan4, t: f64) -> Result<VelocitySample> {
    check_time(t)?;
    let n = plan.entries().len();
    let positions: Vec<_> = (0..n).map(|k| entry_position(plan, k, t)).collect();
    let velocities: Vec<_> = (0..n).map(|k| entry_velocity(plan, k)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let key = |k: usize| positions[k].1.iter().chain(&positions[k].0).cloned().collect::<Vec<f64>>();
    order.sort_by(|&a, &b| {
        key(a).iter().zip(key(b).iter()).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        let same_point = close(&positions[a].0, &positions[b].0, POSITION_TOL) && close(&positions[a].1, &positions[b].1, POSITION_TOL);
        let same_velocity = close(&velocities[a].0, &velocities[b].0, POSITION_TOL) && close(&velocities[a].1, &velocities[b].1, POSITION_TOL);
        if same_point && !same_velocity {
            return Err(Error::VelocityCollision { t, a: a.min(b), b: a.max(b) });
        }
    }
    let weights = plan.entries().iter().map(|e| e.mass).collect();
    Ok(VelocitySample { t, positions, velocities, weights })
}

/// `∫₀¹ ‖v_t‖²_{L²(μ_t)} dt` along the straight-line interpolation. Velocities
/// are constant per entry, so the integrand does not depend on `t`.
pub fn bb_energy(plan: &Plan4) -> f64 {
    (0..plan.entries().len())
        .map(|k| {
            let (vy, vx) = entry_velocity(plan, k);
            plan.entries()[k].mass * vy.iter().chain(&vx).map(|v| v * v).sum::<f64>()
        })
        .sum()
}

/// `|W_{2,Y}(μ_s, μ_t) − |s − t|·W_{2,Y}(μ_0, μ_1)|` for a `y`-diagonal plan.
pub fn geodesic_identity_check(plan: &Plan4, s: f64, t: f64, tol: f64) -> Result<f64> {
    if !plan.is_y_diagonal() {
        return Err(Error::NotDiagonal);
    }
    let ms = interpolate(plan, s)?;
    let mt = interpolate(plan, t)?;
    let between = conditional_wasserstein(&ms, &mt, 2.0, tol)?.value;
    let whole = conditional_wasserstein(plan.source(), plan.target(), 2.0, tol)?.value;
    Ok((between - (s - t).abs() * whole).abs())
}

/// A plan together with the times at which its interpolation is inspected.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    plan: Plan4,
    times: Vec<f64>,
}

impl GeodesicPath {
    pub fn new(plan: Plan4, times: Vec<f64>) -> Result<Self> {
        for &t in &times {
            check_time(t)?;
        }
        Ok(Self { plan, times })
    }

    /// `count + 1` equally spaced times from 0 to 1.
    pub fn uniform(plan: Plan4, count: usize) -> Result<Self> {
        let count = count.max(1);
        Self::new(plan, (0..=count).map(|k| k as f64 / count as f64).collect())
    }

    pub fn plan(&self) -> &Plan4 {
        &self.plan
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> Result<Vec<DiscreteJointMeasure>> {
        self.times.iter().map(|&t| interpolate(&self.plan, t)).collect()
    }

    pub fn frames(&self) -> Result<Vec<VelocitySample>> {
        self.times.iter().map(|&t| velocity_field(&self.plan, t)).collect()
    }
}

/// Writes frames as CSV rows `t, atom, y…, x…, vy…, vx…`.
pub fn write_trajectory_csv<W: Write>(out: W, frames: &[VelocitySample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (d, m) = frames
        .iter()
        .find_map(|f| f.positions.first().map(|(y, x)| (y.len(), x.len())))
        .unwrap_or((0, 0));
    let mut header = vec!["t".to_string(), "atom".to_string()];
    header.extend((0..d).map(|k| format!("y{k}")));
    header.extend((0..m).map(|k| format!("x{k}")));
    header.extend((0..d).map(|k| format!("vy{k}")));
    header.extend((0..m).map(|k| format!("vx{k}")));
    w.write_record(&header)?;
    for f in frames {
        for (k, ((y, x), (vy, vx))) in f.positions.iter().zip(&f.velocities).enumerate() {
            let mut row = vec![f.t.to_string(), k.to_string()];
            row.extend(y.iter().chain(x).chain(vy).chain(vx).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A time-dependent velocity field evaluated on batches of states stored
/// row-wise (`y` is `n × d`, `x` is `n × m`). Returns `(v_y, v_x)`.
pub trait VelocityField {
    fn velocity(&self, t: f64, y: &Array2<f64>, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)>;
}

/// Explicit Euler integration of `d/dt (y, x) = v_t(y, x)` from `t = 0` to 1.
pub fn euler_integrate<V: VelocityField + ?Sized>(
    field: &V,
    mut y: Array2<f64>,
    mut x: Array2<f64>,
    steps: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if steps == 0 {
        return Err(Error::InvalidConfig("euler_flow needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    for k in 0..steps {
        let t = k as f64 * h;
        let (vy, vx) = field.velocity(t, &y, &x)?;
        y.scaled_add(h, &vy);
        x.scaled_add(h, &vx);
    }
    Ok((y, x))
}

fn measure_arrays(mu: &DiscreteJointMeasure) -> (Array2<f64>, Array2<f64>) {
    let y = Array2::from_shape_fn((mu.len(), mu.d()), |(i, k)| mu.atom(i).y[k]);
    let x = Array2::from_shape_fn((mu.len(), mu.m()), |(i, k)| mu.atom(i).x[k]);
    (y, x)
}

/// Pushes `initial` forward through the Euler-discretised flow of `field`.
pub fn euler_flow<V: VelocityField + ?Sized>(field: &V, initial: &DiscreteJointMeasure, steps: usize) -> Result<DiscreteJointMeasure> {
    let (y, x) = measure_arrays(initial);
    let (y, x) = euler_integrate(field, y, x, steps)?;
    let atoms = y
        .axis_iter(Axis(0))
        .zip(x.axis_iter(Axis(0)))
        .zip(initial.atoms())
        .map(|((yr, xr), a)| Atom::new(yr.to_vec(), xr.to_vec(), a.w))
        .collect();
    DiscreteJointMeasure::new(initial.d(), initial.m(), atoms)
}

/// Velocity field of a plan, evaluated by locating the trajectory that passes
/// through each queried state at time `t`.
#[derive(Debug, Clone)]
pub struct PlanVelocity {
    plan: Plan4,
}

impl PlanVelocity {
    pub fn new(plan: Plan4) -> Self {
        Self { plan }
    }

    /// `μ_0` split into one atom per plan entry, the natural initial state.
    pub fn initial_measure(&self) -> Result<DiscreteJointMeasure> {
        interpolate(&self.plan, 0.0)
    }
}

impl VelocityField for PlanVelocity {
    fn velocity(&self, t: f64, y: &Array2<f64>, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let sample = velocity_field(&self.plan, t)?;
        let mut vy = Array2::zeros(y.raw_dim());
        let mut vx = Array2::zeros(x.raw_dim());
        for r in 0..x.nrows() {
            let (qy, qx) = (y.row(r).to_vec(), x.row(r).to_vec());
            let hit = sample
                .positions
                .iter()
                .position(|(py, px)| close(py, &qy, TRAJECTORY_TOL) && close(px, &qx, TRAJECTORY_TOL))
                .ok_or(Error::OffTrajectory { t })?;
            let (sy, sx) = &sample.velocities[hit];
            vy.row_mut(r).iter_mut().zip(sy).for_each(|(o, v)| *o = *v);
            vx.row_mut(r).iter_mut().zip(sx).for_each(|(o, v)| *o = *v);
        }
        Ok((vy, vx))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::instances::counterexample_pair;
    use crate::measures::{group_by_condition, random_joint_instance};
    use crate::ot::{wasserstein, PlanEntry};

    const TOL: f64 = 1e-9;

    fn appendix_plan(n: f64) -> Plan4 {
        let (mu, nu) = counterexample_pair(n).unwrap();
        conditional_wasserstein(&mu, &nu, 2.0, TOL).unwrap().plan
    }

    fn merged_by(plan: &Plan4, at: f64, source_side: bool) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
        let mu = interpolate(plan, at).unwrap();
        let base = if source_side { plan.source() } else { plan.target() };
        let mut mass = vec![0.0; base.len()];
        for (k, e) in plan.entries().iter().enumerate() {
            let idx = if source_side { e.i } else { e.j };
            assert_eq!(mu.atom(k).x, base.atom(idx).x);
            mass[idx] += mu.atom(k).w;
        }
        base.atoms().iter().zip(mass).map(|(a, w)| (a.y.clone(), a.x.clone(), w)).collect()
    }

    #[test]
    fn endpoints_recover_source_and_target() {
        for seed in 0..5 {
            let (mu, nu) = random_joint_instance(seed, 2, 3, 3, 4).unwrap();
            let plan = conditional_wasserstein(&mu, &nu, 2.0, TOL).unwrap().plan;
            for (merged, base) in [(merged_by(&plan, 0.0, true), &mu), (merged_by(&plan, 1.0, false), &nu)] {
                for ((_, _, w), a) in merged.iter().zip(base.atoms()) {
                    assert!((w - a.w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn appendix_midpoint_and_velocities() {
        let n = 5.0;
        let plan = appendix_plan(n);
        let mid = interpolate(&plan, 0.5).unwrap();
        let mut atoms: Vec<_> = mid.atoms().iter().map(|a| (a.y[0], a.x[0], a.w)).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(atoms, vec![(0.0, n / 2.0, 0.5), (1.0, n / 2.0, 0.5)]);
        let v = velocity_field(&plan, 0.3).unwrap();
        let mut vx: Vec<f64> = v.velocities.iter().map(|(vy, vx)| {
            assert_eq!(vy, &vec![0.0]);
            vx[0]
        }).collect();
        vx.sort_by(f64::total_cmp);
        assert_eq!(vx, vec![-n, n]);
        assert_eq!(bb_energy(&plan), n * n);
    }

    #[test]
    fn identity_plan_has_zero_velocity_and_energy() {
        let (mu, _) = random_joint_instance(1, 1, 2, 2, 3).unwrap();
        let plan = Plan4::identity(Arc::new(mu));
        let v = velocity_field(&plan, 0.7).unwrap();
        assert_eq!(v.l2_norm_sq(), 0.0);
        assert_eq!(bb_energy(&plan), 0.0);
    }

    #[test]
    fn speed_and_energy_match_the_conditional_distance() {
        for seed in 0..10 {
            let (mu, nu) = random_joint_instance(seed, 2, 2, 3, 5).unwrap();
            let sol = conditional_wasserstein(&mu, &nu, 2.0, TOL).unwrap();
            for t in [0.0, 0.4, 1.0] {
                let v = velocity_field(&sol.plan, t).unwrap();
                assert!(v.velocities.iter().all(|(vy, _)| vy.iter().all(|c| *c == 0.0)));
                assert!((v.l2_norm_sq() - sol.cost).abs() < 1e-10);
            }
            assert!((bb_energy(&sol.plan) - sol.cost).abs() < 1e-10);
        }
    }

    #[test]
    fn geodesic_identity_holds() {
        for seed in 0..10 {
            let (mu, nu) = random_joint_instance(seed, 1, 2, 2, 4).unwrap();
            let plan = conditional_wasserstein(&mu, &nu, 2.0, TOL).unwrap().plan;
            for (s, t) in [(0.5, 0.5), (0.0, 1.0), (0.0, 0.3), (0.3, 0.8), (0.8, 1.0)] {
                let r = geodesic_identity_check(&plan, s, t, TOL).unwrap();
                assert!(r < 1e-8, "seed {seed} ({s}, {t}): {r}");
            }
        }
    }

    #[test]
    fn conditions_are_preserved_and_each_conditional_is_a_geodesic() {
        let (mu, nu) = random_joint_instance(4, 2, 2, 3, 4).unwrap();
        let plan = conditional_wasserstein(&mu, &nu, 2.0, TOL).unwrap().plan;
        let base = group_by_condition(&mu, TOL).unwrap();
        for t in [0.25, 0.6] {
            let mt = interpolate(&plan, t).unwrap();
            let groups = group_by_condition(&mt, TOL).unwrap();
            assert_eq!(groups.len(), base.len());
            for (g, b) in groups.iter().zip(&base) {
                assert_eq!(g.y, b.y);
                assert!((g.weight - b.weight).abs() < 1e-12);
            }
        }
        // Per-condition plain geodesic identity.
        for g in &base {
            let entries: Vec<&PlanEntry> = plan.entries().iter().filter(|e| g.members.contains(&e.i)).collect();
            let at = |t: f64| {
                let pts: Vec<Atom> = entries
                    .iter()
                    .map(|e| {
                        Atom::new(vec![], lerp(&mu.atom(e.i).x, &nu.atom(e.j).x, t), e.mass / g.weight)
                    })
                    .collect();
                DiscreteJointMeasure::new(0, 2, pts).unwrap()
            };
            let whole = wasserstein(&at(0.0), &at(1.0), 2.0).unwrap().value;
            let part = wasserstein(&at(0.3), &at(0.8), 2.0).unwrap().value;
            assert!((part - 0.5 * whole).abs() < 1e-8);
        }
    }

    #[test]
    fn collisions_are_reported() {
        // Two atoms crossing at the same point with opposite velocities.
        let mu = DiscreteJointMeasure::uniform(0, 1, vec![(vec![], vec![0.0]), (vec![], vec![2.0])]).unwrap();
        let nu = mu.clone();
        let crossing = vec![PlanEntry { i: 0, j: 1, mass: 0.5 }, PlanEntry { i: 1, j: 0, mass: 0.5 }];
        let plan = Plan4::new(Arc::new(mu), Arc::new(nu), crossing, true, TOL).unwrap();
        assert!(matches!(velocity_field(&plan, 0.5), Err(Error::VelocityCollision { .. })));
        assert!(velocity_field(&plan, 0.25).is_ok());
        assert!(interpolate(&plan, 1.5).is_err());
    }

    #[test]
    fn plan_flow_reaches_the_target_for_any_step_count() {
        let (mu, nu) = random_joint_instance(6, 1, 2, 2, 3).unwrap();
        let plan = conditional_wasserstein(&mu, &nu, 2.0, TOL).unwrap().plan;
        let field = PlanVelocity::new(plan.clone());
        let start = field.initial_measure().unwrap();
        let one = euler_flow(&field, &start, 1).unwrap();
        let ten = euler_flow(&field, &start, 10).unwrap();
        for (k, e) in plan.entries().iter().enumerate() {
            for (a, b) in one.atom(k).x.iter().zip(&nu.atom(e.j).x) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(one.atom(k).y, mu.atom(e.i).y);
            for (a, b) in ten.atom(k).x.iter().zip(&one.atom(k).x) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(euler_flow(&field, &start, 0).is_err());
        let stray = DiscreteJointMeasure::uniform(1, 2, vec![(vec![9.0], vec![9.0, 9.0])]).unwrap();
        assert!(matches!(euler_flow(&field, &stray, 2), Err(Error::OffTrajectory { .. })));
    }

    #[test]
    fn trajectory_csv_layout() {
        let plan = appendix_plan(2.0);
        let path = GeodesicPath::uniform(plan, 2).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &path.frames().unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,atom,y0,x0,vy0,vx0");
        assert_eq!(lines.len(), 1 + 3 * 2);
    }
}
