//! Geodesic check: interpolation identity, vanishing condition velocity and
//! the kinetic-energy identity on seeded random instances and on the
//! two-point counterexample.

use condot::geodesics::{bb_energy, geodesic_identity_check, velocity_field, write_trajectory_csv, GeodesicPath};
use condot::instances::counterexample_pair;
use condot::measures::random_joint_instance;
use condot::ot::conditional_wasserstein;
use serde::{Deserialize, Serialize};

use super::Command;
use crate::output::RunDir;
use crate::{seeded, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeodesicConfig {
    pub instances: usize,
    pub conditions: usize,
    pub atoms_per_condition: usize,
    pub dim_y: usize,
    pub dim_x: usize,
    /// `(s, t)` pairs for the interpolation identity.
    pub pairs: Vec<(f64, f64)>,
    /// Times at which velocities are inspected.
    pub times: Vec<f64>,
    /// Frames in the trajectory dump of the first instance.
    pub frames: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            conditions: 3,
            atoms_per_condition: 4,
            dim_y: 1,
            dim_x: 2,
            pairs: vec![(0.0, 0.3), (0.3, 0.8), (0.8, 1.0)],
            times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            frames: 10,
            tol: 1e-9,
            seed: 0,
        }
    }
}
seeded!(GeodesicConfig);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicRow {
    pub seed: u64,
    pub w2y_sq: f64,
    pub identity_residual: f64,
    pub max_abs_vy: f64,
    pub speed_gap: f64,
    pub energy_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicReport {
    pub rows: Vec<GeodesicRow>,
    pub max_identity_residual: f64,
    /// Largest `|v_y|` seen; the contract is exactly zero.
    pub max_abs_vy: f64,
    /// Largest `|‖v_t‖²_{L²(μ_t)} − W_{2,Y}²|`.
    pub max_speed_gap: f64,
    /// Largest `|energy − W_{2,Y}²|`.
    pub max_energy_gap: f64,
    /// Midpoint atoms `(y, x)` of the two-point instance with `n = 5`.
    pub counterexample_midpoint: Vec<(f64, f64)>,
    pub counterexample_energy: f64,
}

fn check_instance(mu: &condot::DiscreteJointMeasure, nu: &condot::DiscreteJointMeasure, cfg: &GeodesicConfig, seed: u64) -> Result<GeodesicRow> {
    let sol = conditional_wasserstein(mu, nu, 2.0, cfg.tol)?;
    let mut identity_residual: f64 = 0.0;
    for &(s, t) in &cfg.pairs {
        identity_residual = identity_residual.max(geodesic_identity_check(&sol.plan, s, t, cfg.tol)?);
    }
    let mut max_abs_vy: f64 = 0.0;
    let mut speed_gap: f64 = 0.0;
    for &t in &cfg.times {
        let v = velocity_field(&sol.plan, t)?;
        for (vy, _) in &v.velocities {
            max_abs_vy = vy.iter().fold(max_abs_vy, |m, c| m.max(c.abs()));
        }
        speed_gap = speed_gap.max((v.l2_norm_sq() - sol.cost).abs());
    }
    let energy_gap = (bb_energy(&sol.plan) - sol.cost).abs();
    Ok(GeodesicRow { seed, w2y_sq: sol.cost, identity_residual, max_abs_vy, speed_gap, energy_gap })
}

pub fn cmd_geodesic_check(cfg: &GeodesicConfig) -> Result<GeodesicReport> {
    let in_unit = |t: &f64| (0.0..=1.0).contains(t);
    if cfg.instances == 0 || !cfg.pairs.iter().all(|(s, t)| in_unit(s) && in_unit(t)) || !cfg.times.iter().all(in_unit) {
        return Err(CliError::Validation("need >= 1 instance and times in [0, 1]".into()));
    }
    let rows = condot::par::map_range(cfg.instances, |k| {
        let seed = cfg.seed + k as u64;
        let (mu, nu) = random_joint_instance(seed, cfg.dim_y, cfg.dim_x, cfg.conditions, cfg.atoms_per_condition)?;
        check_instance(&mu, &nu, cfg, seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let (a, b) = counterexample_pair(5.0)?;
    let plan = conditional_wasserstein(&a, &b, 2.0, cfg.tol)?.plan;
    let mid = condot::geodesics::interpolate(&plan, 0.5)?;
    let mut counterexample_midpoint: Vec<(f64, f64)> = mid.atoms().iter().map(|a| (a.y[0], a.x[0])).collect();
    counterexample_midpoint.sort_by(|p, q| p.0.total_cmp(&q.0));
    let fold = |f: fn(&GeodesicRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    Ok(GeodesicReport {
        max_identity_residual: fold(|r| r.identity_residual),
        max_abs_vy: fold(|r| r.max_abs_vy),
        max_speed_gap: fold(|r| r.speed_gap),
        max_energy_gap: fold(|r| r.energy_gap),
        rows,
        counterexample_midpoint,
        counterexample_energy: bb_energy(&plan),
    })
}

pub struct GeodesicCheck;

impl Command for GeodesicCheck {
    const NAME: &'static str = "geodesic-check";
    type Config = GeodesicConfig;
    type Report = GeodesicReport;

    fn run(cfg: &Self::Config) -> Result<Self::Report> {
        cmd_geodesic_check(cfg)
    }

    fn write(cfg: &Self::Config, r: &Self::Report, dir: &RunDir) -> Result<()> {
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|g| {
                vec![
                    g.seed.to_string(),
                    g.w2y_sq.to_string(),
                    g.identity_residual.to_string(),
                    g.max_abs_vy.to_string(),
                    g.speed_gap.to_string(),
                    g.energy_gap.to_string(),
                ]
            })
            .collect();
        dir.write_metrics(&["seed", "w2y_sq", "identity_residual", "max_abs_vy", "speed_gap", "energy_gap"], &rows)?;
        let (mu, nu) = random_joint_instance(cfg.seed, cfg.dim_y, cfg.dim_x, cfg.conditions, cfg.atoms_per_condition)?;
        let plan = conditional_wasserstein(&mu, &nu, 2.0, cfg.tol)?.plan;
        let path = GeodesicPath::uniform(plan, cfg.frames.max(1))?;
        write_trajectory_csv(std::fs::File::create(dir.artifact("trajectory.csv"))?, &path.frames()?)?;
        Ok(())
    }

    fn failures(r: &Self::Report) -> Vec<String> {
        let mut out = Vec::new();
        if r.max_identity_residual >= 1e-8 {
            out.push(format!("identity residual {}", r.max_identity_residual));
        }
        if r.max_abs_vy != 0.0 {
            out.push("nonzero condition velocity".into());
        }
        if r.max_speed_gap > 1e-10 || r.max_energy_gap > 1e-10 {
            out.push("energy identity violated".into());
        }
        out
    }
}
