//! Run directories: `<root>/<command>/<timestamp>-seed<seed>/` containing
//! `manifest.json`, `metrics.csv` and `artifacts/`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::Result;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize, R: Serialize> {
    manifest_version: u32,
    command: &'a str,
    seed: u64,
    config: &'a C,
    versions: Versions,
    jobs: Option<usize>,
    started_utc: String,
    elapsed_seconds: f64,
    report: &'a R,
}

#[derive(Debug, Serialize)]
struct Versions {
    condot: &'static str,
    parallel: bool,
}

impl RunDir {
    /// Creates a fresh directory; a numeric suffix avoids clobbering a run
    /// started in the same second.
    pub fn create(out: &Path, command: &str, seed: u64) -> Result<Self> {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = out.join(command).join(format!("{stamp}-seed{seed}"));
        let mut root = base.clone();
        let mut k = 1;
        while root.exists() {
            root = PathBuf::from(format!("{}-{k}", base.display()));
            k += 1;
        }
        fs::create_dir_all(root.join("artifacts"))?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.root.join("artifacts").join(name)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    #[allow(clippy::too_many_arguments)]
    pub fn write_manifest<C: Serialize, R: Serialize>(
        &self,
        command: &str,
        seed: u64,
        config: &C,
        jobs: Option<usize>,
        started: chrono::DateTime<chrono::Utc>,
        elapsed: Duration,
        report: &R,
    ) -> Result<()> {
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            command,
            seed,
            config,
            versions: Versions { condot: env!("CARGO_PKG_VERSION"), parallel: condot::par::is_parallel() },
            jobs,
            started_utc: started.to_rfc3339(),
            elapsed_seconds: elapsed.as_secs_f64(),
            report,
        };
        fs::write(self.root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        fs::write(self.artifact("report.json"), serde_json::to_string_pretty(report)?)?;
        Ok(())
    }

    /// Writes `metrics.csv` from a header and rows of already formatted cells.
    pub fn write_metrics(&self, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.metrics_path())?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}
