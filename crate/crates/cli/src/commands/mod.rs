//! Command implementations. Each command is a pure `run` from config to report
//! plus a `write` that lays the report out in a run directory.

pub mod exact;
pub mod geodesic;
pub mod gmm;
pub mod particle;

use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::Seeded;
use crate::output::RunDir;
use crate::Result;

pub use exact::{BetaSweep, Counterexample, DualityCheck};
pub use geodesic::GeodesicCheck;
pub use gmm::{GmmBench, GmmEval, GmmTrain};
pub use particle::ParticleFlow;

pub trait Command {
    const NAME: &'static str;
    type Config: Serialize + DeserializeOwned + Default + Seeded + Clone + Send + Sync;
    type Report: Serialize + Send;

    fn run(cfg: &Self::Config) -> Result<Self::Report>;

    /// Writes `metrics.csv` and any artifacts.
    fn write(cfg: &Self::Config, report: &Self::Report, dir: &RunDir) -> Result<()>;

    /// Descriptions of failed built-in checks; empty when all pass.
    fn failures(_report: &Self::Report) -> Vec<String> {
        Vec::new()
    }
}

pub struct Outcome<R> {
    pub dir: RunDir,
    pub report: R,
    pub failures: Vec<String>,
}

/// Runs a command on `jobs` threads and records everything under `out`.
pub fn execute<C: Command>(mut cfg: C::Config, out: &Path, jobs: Option<usize>) -> Result<Outcome<C::Report>> {
    let seed = cfg.seed();
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let report = condot::par::with_jobs(jobs, || C::run(&cfg))??;
    let elapsed = clock.elapsed();
    let dir = RunDir::create(out, C::NAME, seed)?;
    C::write(&cfg, &report, &dir)?;
    dir.write_manifest(C::NAME, seed, &cfg, jobs, started, elapsed, &report)?;
    let failures = C::failures(&report);
    Ok(Outcome { dir, report, failures })
}

/// Implements [`Seeded`] for configs with a `seed: u64` field.
#[macro_export]
macro_rules! seeded {
    ($($t:ty),*) => {
        $(impl $crate::config::Seeded for $t {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
        })*
    };
}
