//! Particle flows on the two-class toy for several β, paired by seed.

use condot::particle_flow::{labeled_toy, run_particle_flow, ParticleFlowConfig, ParticleFlowRun};
use condot::rng;
use serde::{Deserialize, Serialize};

use super::Command;
use crate::output::RunDir;
use crate::{seeded, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleFlowCmdConfig {
    pub betas: Vec<f64>,
    /// Number of paired seeds; run `k` uses the same target and initial
    /// particles for every β.
    pub runs: usize,
    pub n_per_class: usize,
    pub class_std: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub iterations: usize,
    /// Also write every particle set of the first run of each β.
    pub dump_trajectory: bool,
    pub seed: u64,
}

impl Default for ParticleFlowCmdConfig {
    fn default() -> Self {
        Self {
            betas: vec![1.0, 5.0],
            runs: 5,
            n_per_class: 50,
            class_std: 0.5,
            epsilon: 0.05,
            eta: 0.5,
            iterations: 500,
            dump_trajectory: false,
            seed: 0,
        }
    }
}
seeded!(ParticleFlowCmdConfig);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub beta: f64,
    pub run: usize,
    pub initial_divergence: f64,
    pub final_divergence: f64,
    pub final_purity: f64,
    /// Every particle set carries exactly the target's labels.
    pub labels_fixed: bool,
    pub aborted: Option<String>,
    pub divergences: Vec<f64>,
    pub purity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPurity {
    pub beta: f64,
    pub mean_purity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParticleFlowReport {
    pub runs: Vec<FlowSummary>,
    pub mean_purity: Vec<BetaPurity>,
    pub labels_fixed: bool,
    /// Full flows of the first run of each β, kept only when a dump was
    /// requested.
    #[serde(skip)]
    pub trajectories: Vec<(f64, ParticleFlowRun)>,
}

fn flow_config(cfg: &ParticleFlowCmdConfig, beta: f64, run: usize) -> Result<ParticleFlowConfig> {
    let target = labeled_toy(cfg.n_per_class, cfg.class_std, rng::derive_seed(cfg.seed, 1000 + run as u64))?;
    Ok(ParticleFlowConfig {
        beta,
        epsilon: cfg.epsilon,
        eta: cfg.eta,
        iterations: cfg.iterations,
        seed: rng::derive_seed(cfg.seed, run as u64),
        target,
    })
}

pub fn cmd_particle_flow(cfg: &ParticleFlowCmdConfig) -> Result<ParticleFlowReport> {
    if cfg.betas.is_empty() || cfg.runs == 0 {
        return Err(CliError::Validation("need at least one beta and one run".into()));
    }
    let jobs: Vec<(f64, usize)> = cfg.betas.iter().flat_map(|&b| (0..cfg.runs).map(move |r| (b, r))).collect();
    let results = condot::par::map_slice(&jobs, |&(beta, run)| -> Result<(FlowSummary, Option<ParticleFlowRun>)> {
        let fc = flow_config(cfg, beta, run)?;
        let flow = run_particle_flow(&fc)?;
        let labels_fixed = flow
            .trajectory
            .iter()
            .all(|set| set.atoms().iter().zip(fc.target.atoms()).all(|(p, t)| p.y.iter().map(|v| v.to_bits()).eq(t.y.iter().map(|v| v.to_bits()))));
        let summary = FlowSummary {
            beta,
            run,
            initial_divergence: flow.divergences.first().copied().unwrap_or(f64::NAN),
            final_divergence: flow.divergences.last().copied().unwrap_or(f64::NAN),
            final_purity: *flow.purity.last().expect("initial purity recorded"),
            labels_fixed,
            aborted: flow.abort.as_ref().map(|a| format!("iteration {}: {}", a.iteration, a.reason)),
            divergences: flow.divergences.clone(),
            purity: flow.purity.clone(),
        };
        Ok((summary, (cfg.dump_trajectory && run == 0).then_some(flow)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::new();
    let mut trajectories = Vec::new();
    for (s, t) in results {
        if let Some(t) = t {
            trajectories.push((s.beta, t));
        }
        runs.push(s);
    }
    let mean_purity = cfg
        .betas
        .iter()
        .map(|&beta| {
            let p: Vec<f64> = runs.iter().filter(|r| r.beta == beta).map(|r| r.final_purity).collect();
            BetaPurity { beta, mean_purity: p.iter().sum::<f64>() / p.len() as f64 }
        })
        .collect();
    let labels_fixed = runs.iter().all(|r| r.labels_fixed);
    Ok(ParticleFlowReport { runs, mean_purity, labels_fixed, trajectories })
}

pub struct ParticleFlow;

impl Command for ParticleFlow {
    const NAME: &'static str = "particle-flow";
    type Config = ParticleFlowCmdConfig;
    type Report = ParticleFlowReport;

    fn run(cfg: &Self::Config) -> Result<Self::Report> {
        cmd_particle_flow(cfg)
    }

    fn write(cfg: &Self::Config, r: &Self::Report, dir: &RunDir) -> Result<()> {
        let mut rows = Vec::new();
        for s in &r.runs {
            for (k, p) in s.purity.iter().enumerate() {
                let div = s.divergences.get(k).map(|d| d.to_string()).unwrap_or_default();
                rows.push(vec![s.beta.to_string(), s.run.to_string(), k.to_string(), div, p.to_string()]);
            }
        }
        dir.write_metrics(&["beta", "run", "iter", "divergence", "purity"], &rows)?;
        for (beta, flow) in &r.trajectories {
            let mut w = csv::Writer::from_path(dir.artifact(&format!("trajectory_beta{beta}.csv")))?;
            w.write_record(["iter", "particle", "y0", "x0", "x1"])?;
            for (k, set) in flow.trajectory.iter().enumerate().step_by((cfg.iterations / 50).max(1)) {
                for (i, a) in set.atoms().iter().enumerate() {
                    let mut row = vec![k.to_string(), i.to_string()];
                    row.extend(a.y.iter().chain(&a.x).map(|v| v.to_string()));
                    w.write_record(&row)?;
                }
            }
            w.flush()?;
        }
        Ok(())
    }

    fn failures(r: &Self::Report) -> Vec<String> {
        let mut out: Vec<String> = r.runs.iter().filter_map(|s| s.aborted.clone()).collect();
        if !r.labels_fixed {
            out.push("particle labels changed".into());
        }
        out
    }
}
