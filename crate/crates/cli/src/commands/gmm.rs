//! GMM posterior benchmark: train a conditional flow, then score its samples
//! against exact posterior samples with the Sinkhorn divergence.

use std::path::PathBuf;
use std::time::Instant;

use condot::bayes_gmm::{analytic_posterior, make_benchmark_gmm, sample_joint, sample_posterior_exact, GmmModel, LinearGaussianForward};
use condot::flow_matching::{sample_posterior, train, CouplingKind, CouplingMode, JointDataset, LogRow, TrainConfig, TrainOutcome};
use condot::nn::VelocityModel;
use condot::sinkhorn::{default_epsilon, sinkhorn_divergence};
use condot::{rng, CostSpec, DiscreteJointMeasure};
use serde::{Deserialize, Serialize};

use super::Command;
use crate::config::Seeded;
use crate::output::RunDir;
use crate::{seeded, CliError, Result};

/// Dimension of both the state and the observation.
pub const GMM_DIM: usize = 5;

const TRAIN_STREAM: u64 = 10;
const VAL_STREAM: u64 = 11;
const CONDITION_STREAM: u64 = 20;

/// The benchmark problem for `seed`: the prior mixture and the forward map.
pub fn problem(seed: u64) -> (GmmModel, LinearGaussianForward) {
    (make_benchmark_gmm(seed), LinearGaussianForward::benchmark(GMM_DIM))
}

fn dataset(gmm: &GmmModel, fwd: &LinearGaussianForward, n: usize, seed: u64) -> Result<JointDataset> {
    Ok(JointDataset::from_pairs(&sample_joint(gmm, fwd, n, seed)?)?)
}

/// Trains on fresh joint samples of the problem for `cfg.seed`.
pub fn train_gmm(cfg: &TrainConfig, log: Option<&mut dyn std::io::Write>) -> Result<TrainOutcome> {
    let (gmm, fwd) = problem(cfg.seed);
    let data = dataset(&gmm, &fwd, cfg.n_train, rng::derive_seed(cfg.seed, TRAIN_STREAM))?;
    let val = dataset(&gmm, &fwd, cfg.n_val, rng::derive_seed(cfg.seed, VAL_STREAM))?;
    Ok(train(cfg, &data, &val, log)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub n_conditions: usize,
    /// Samples per condition from both the model and the exact posterior.
    pub n_samples: usize,
    pub euler_steps: usize,
    /// Also score a second exact sample against the reference, which is the
    /// best value any model can expect at this sample size.
    pub reference_floor: bool,
    /// Also report `½ S` on the cost `‖·‖²` at blur `0.005`, the
    /// half-squared-distance convention common in other toolkits.
    pub half_cost: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { n_conditions: 20, n_samples: 1000, euler_steps: 10, reference_floor: true, half_cost: false }
    }
}

impl EvalSettings {
    fn validate(&self) -> Result<()> {
        if self.n_conditions == 0 || self.n_samples < 2 || self.euler_steps == 0 {
            return Err(CliError::Validation("need >= 1 condition, >= 2 samples and >= 1 Euler step".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScore {
    pub condition: usize,
    pub y: Vec<f64>,
    /// Blur used for this condition, fixed by the reference sample alone.
    pub epsilon: f64,
    pub divergence: f64,
    pub floor: Option<f64>,
    pub half_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub conditions: Vec<ConditionScore>,
    pub mean_divergence: f64,
    pub mean_floor: Option<f64>,
    pub mean_half_cost: Option<f64>,
}

fn states(rows: Vec<Vec<f64>>) -> Result<DiscreteJointMeasure> {
    Ok(DiscreteJointMeasure::uniform(0, GMM_DIM, rows.into_iter().map(|x| (Vec::new(), x)).collect())?)
}

fn mean_of(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = v.collect();
    v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean Sinkhorn divergence between `model` samples and exact posterior
/// samples over a panel of observations drawn from the problem for `seed`.
///
/// The blur for each condition is `1e-3` times the mean pairwise `‖·‖²` of
/// the exact reference sample, so every model is scored on the same scale.
pub fn evaluate_model(model: &VelocityModel, seed: u64, settings: &EvalSettings) -> Result<EvalReport> {
    settings.validate()?;
    if model.d() != GMM_DIM || model.m() != GMM_DIM {
        return Err(CliError::Validation(format!("model must be {GMM_DIM}x{GMM_DIM}, got {}x{}", model.d(), model.m())));
    }
    let (gmm, fwd) = problem(seed);
    let panel = sample_joint(&gmm, &fwd, settings.n_conditions, rng::derive_seed(seed, CONDITION_STREAM))?;
    let spec = CostSpec::states_only(2.0);
    let n = settings.n_samples;
    let conditions = condot::par::map_slice(&panel.iter().enumerate().collect::<Vec<_>>(), |&(k, (y, _))| -> Result<ConditionScore> {
        let k64 = k as u64;
        let post = analytic_posterior(&gmm, &fwd, y)?;
        let reference = states(sample_posterior_exact(&post, n, rng::derive_seed(seed, 200 + k64))?)?;
        let drawn = sample_posterior(model, y, n, settings.euler_steps, rng::derive_seed(seed, 100 + k64))?;
        let drawn = states(drawn.outer_iter().map(|r| r.to_vec()).collect())?;
        let epsilon = default_epsilon(&reference, &reference, &spec)?;
        let divergence = sinkhorn_divergence(&drawn, &reference, &spec, epsilon)?;
        let floor = if settings.reference_floor {
            let other = states(sample_posterior_exact(&post, n, rng::derive_seed(seed, 300 + k64))?)?;
            Some(sinkhorn_divergence(&other, &reference, &spec, epsilon)?)
        } else {
            None
        };
        let half_cost = if settings.half_cost { Some(0.5 * sinkhorn_divergence(&drawn, &reference, &spec, 0.005)?) } else { None };
        Ok(ConditionScore { condition: k, y: y.clone(), epsilon, divergence, floor, half_cost })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mean_divergence = conditions.iter().map(|c| c.divergence).sum::<f64>() / conditions.len() as f64;
    Ok(EvalReport {
        mean_divergence,
        mean_floor: mean_of(conditions.iter().map(|c| c.floor)),
        mean_half_cost: mean_of(conditions.iter().map(|c| c.half_cost)),
        conditions,
    })
}

/// The untrained network: zero output layer, so sampling returns the
/// standard normal starting points unchanged.
pub fn untrained_model(hidden: &[usize], seed: u64) -> Result<VelocityModel> {
    Ok(VelocityModel::new(GMM_DIM, GMM_DIM, hidden, seed)?)
}

fn eval_rows(r: &EvalReport) -> Vec<Vec<String>> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    r.conditions
        .iter()
        .map(|c| vec![c.condition.to_string(), c.epsilon.to_string(), c.divergence.to_string(), opt(c.floor), opt(c.half_cost)])
        .collect()
}

const EVAL_HEADER: [&str; 5] = ["condition", "epsilon", "divergence", "floor", "half_cost"];

// ---------------------------------------------------------------- gmm-train

seeded!(TrainConfig);

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub coupling: CouplingMode,
    pub num_params: usize,
    pub best_iter: usize,
    pub best_val: f64,
    pub initial_val: f64,
    pub curve: Vec<LogRow>,
    #[serde(skip)]
    pub model: Option<VelocityModel>,
}

pub struct GmmTrain;

impl Command for GmmTrain {
    const NAME: &'static str = "gmm-train";
    type Config = TrainConfig;
    type Report = TrainReport;

    fn run(cfg: &Self::Config) -> Result<Self::Report> {
        let out = train_gmm(cfg, None)?;
        Ok(TrainReport {
            coupling: cfg.coupling,
            num_params: out.model.num_params(),
            best_iter: out.best_iter,
            best_val: out.best_val,
            initial_val: out.curve.first().map(|r| r.val_loss).unwrap_or(f64::NAN),
            curve: out.curve,
            model: Some(out.model),
        })
    }

    fn write(cfg: &Self::Config, r: &Self::Report, dir: &RunDir) -> Result<()> {
        let model = r.model.as_ref().expect("run stores the model");
        std::fs::write(dir.artifact("model.json"), model.to_json()?)?;
        std::fs::write(dir.artifact("gmm.json"), problem(cfg.seed).0.to_json()?)?;
        let mut log = String::new();
        for row in &r.curve {
            log.push_str(&serde_json::to_string(row)?);
            log.push('\n');
        }
        std::fs::write(dir.artifact("train_log.jsonl"), log)?;
        let rows: Vec<Vec<String>> = r
            .curve
            .iter()
            .map(|l| vec![l.iter.to_string(), l.train_loss.map(|v| v.to_string()).unwrap_or_default(), l.val_loss.to_string()])
            .collect();
        dir.write_metrics(&["iter", "train_loss", "val_loss"], &rows)
    }

    fn failures(r: &Self::Report) -> Vec<String> {
        if r.best_val.is_finite() {
            Vec::new()
        } else {
            vec!["validation loss is not finite".into()]
        }
    }
}

// ----------------------------------------------------------------- gmm-eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmEvalConfig {
    /// Model checkpoint; `None` scores the untrained network.
    pub checkpoint: Option<PathBuf>,
    /// Hidden widths of the untrained network.
    pub hidden: Vec<usize>,
    /// Problem seed; must match the training seed of the checkpoint.
    pub seed: u64,
    pub eval: EvalSettings,
}

impl Default for GmmEvalConfig {
    fn default() -> Self {
        Self { checkpoint: None, hidden: VelocityModel::default_hidden(), seed: 0, eval: EvalSettings::default() }
    }
}
seeded!(GmmEvalConfig);

pub fn cmd_gmm_eval(cfg: &GmmEvalConfig) -> Result<EvalReport> {
    let model = match &cfg.checkpoint {
        Some(path) => VelocityModel::from_json(&std::fs::read_to_string(path)?)?,
        None => untrained_model(&cfg.hidden, cfg.seed)?,
    };
    evaluate_model(&model, cfg.seed, &cfg.eval)
}

pub struct GmmEval;

impl Command for GmmEval {
    const NAME: &'static str = "gmm-eval";
    type Config = GmmEvalConfig;
    type Report = EvalReport;

    fn run(cfg: &Self::Config) -> Result<Self::Report> {
        cmd_gmm_eval(cfg)
    }

    fn write(_cfg: &Self::Config, r: &Self::Report, dir: &RunDir) -> Result<()> {
        dir.write_metrics(&EVAL_HEADER, &eval_rows(r))
    }

    fn failures(r: &Self::Report) -> Vec<String> {
        if r.mean_divergence.is_finite() {
            Vec::new()
        } else {
            vec!["mean divergence is not finite".into()]
        }
    }
}

// ---------------------------------------------------------------- gmm-bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmBenchConfig {
    pub seeds: Vec<u64>,
    pub couplings: Vec<CouplingMode>,
    /// Shared training budget; its seed and coupling are set per run.
    pub train: TrainConfig,
    pub eval: EvalSettings,
    /// Also score the untrained network on the first seed.
    pub untrained_baseline: bool,
    /// Recorded in the manifest; the runs use `seeds`.
    pub seed: u64,
}

impl Default for GmmBenchConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            couplings: vec![CouplingMode::new(CouplingKind::DiagonalBayes), CouplingMode::ot_bayes(20.0)],
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            untrained_baseline: true,
            seed: 0,
        }
    }
}

impl Seeded for GmmBenchConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub coupling: CouplingMode,
    pub seed: u64,
    pub best_iter: usize,
    pub best_val: f64,
    pub train_seconds: f64,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMean {
    pub coupling: CouplingMode,
    pub mean_divergence: f64,
    pub mean_half_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
    pub means: Vec<CouplingMean>,
    /// Mean exact-vs-exact divergence over all seeds.
    pub mean_floor: Option<f64>,
    pub untrained: Option<EvalReport>,
}

impl BenchReport {
    pub fn mean_for(&self, kind: CouplingKind) -> Option<f64> {
        self.means.iter().find(|m| m.coupling.kind == kind).map(|m| m.mean_divergence)
    }
}

pub fn cmd_gmm_bench(cfg: &GmmBenchConfig) -> Result<BenchReport> {
    if cfg.seeds.is_empty() || cfg.couplings.is_empty() {
        return Err(CliError::Validation("need at least one seed and one coupling".into()));
    }
    cfg.eval.validate()?;
    let jobs: Vec<(CouplingMode, u64)> = cfg.couplings.iter().flat_map(|&c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    for (c, s) in &jobs {
        TrainConfig { coupling: *c, seed: *s, ..cfg.train.clone() }.validate()?;
    }
    let runs = condot::par::map_slice(&jobs, |&(coupling, seed)| -> Result<BenchRun> {
        let tc = TrainConfig { coupling, seed, ..cfg.train.clone() };
        let clock = Instant::now();
        let out = train_gmm(&tc, None)?;
        let train_seconds = clock.elapsed().as_secs_f64();
        // the floor depends only on the seed; compute it once per seed
        let first = cfg.couplings[0] == coupling;
        let settings = EvalSettings { reference_floor: cfg.eval.reference_floor && first, ..cfg.eval.clone() };
        let eval = evaluate_model(&out.model, seed, &settings)?;
        Ok(BenchRun { coupling, seed, best_iter: out.best_iter, best_val: out.best_val, train_seconds, eval })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let means = cfg
        .couplings
        .iter()
        .map(|&coupling| {
            let mine: Vec<&BenchRun> = runs.iter().filter(|r| r.coupling == coupling).collect();
            CouplingMean {
                coupling,
                mean_divergence: mine.iter().map(|r| r.eval.mean_divergence).sum::<f64>() / mine.len() as f64,
                mean_half_cost: mean_of(mine.iter().map(|r| r.eval.mean_half_cost)),
            }
        })
        .collect();
    let floors: Vec<f64> = runs.iter().filter_map(|r| r.eval.mean_floor).collect();
    let mean_floor = (!floors.is_empty()).then(|| floors.iter().sum::<f64>() / floors.len() as f64);
    let untrained = if cfg.untrained_baseline {
        let settings = EvalSettings { reference_floor: false, half_cost: false, ..cfg.eval.clone() };
        Some(evaluate_model(&untrained_model(&cfg.train.hidden, cfg.seeds[0])?, cfg.seeds[0], &settings)?)
    } else {
        None
    };
    Ok(BenchReport { runs, means, mean_floor, untrained })
}

pub struct GmmBench;

impl Command for GmmBench {
    const NAME: &'static str = "gmm-bench";
    type Config = GmmBenchConfig;
    type Report = BenchReport;

    fn run(cfg: &Self::Config) -> Result<Self::Report> {
        cmd_gmm_bench(cfg)
    }

    fn write(_cfg: &Self::Config, r: &Self::Report, dir: &RunDir) -> Result<()> {
        let mut rows = Vec::new();
        for run in &r.runs {
            for row in eval_rows(&run.eval) {
                let mut full = vec![serde_json::to_value(run.coupling.kind)?.as_str().unwrap_or_default().to_string(), run.seed.to_string()];
                full.extend(row);
                rows.push(full);
            }
        }
        let mut header = vec!["coupling", "seed"];
        header.extend(EVAL_HEADER);
        dir.write_metrics(&header, &rows)
    }

    fn failures(r: &Self::Report) -> Vec<String> {
        r.means
            .iter()
            .filter(|m| !m.mean_divergence.is_finite())
            .map(|m| format!("{:?}: mean divergence is not finite", m.coupling.kind))
            .collect()
    }
}
