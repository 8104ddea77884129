//! Config loading. Files are JSON with unknown keys rejected; a run manifest
//! is also accepted and its embedded config is used, so a finished run can be
//! replayed from its own directory.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{CliError, Result};

/// Configs that carry a master seed.
pub trait Seeded {
    fn seed_mut(&mut self) -> &mut u64;

    fn seed(&mut self) -> u64 {
        *self.seed_mut()
    }
}

/// Parses `text` as a config or as a manifest wrapping one.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
    let body = match value.get("manifest_version") {
        Some(_) => value.get("config").cloned().ok_or_else(|| CliError::Validation("manifest has no config".into()))?,
        None => value,
    };
    serde_json::from_value(body).map_err(|e| CliError::Validation(e.to_string()))
}

/// Loads a config file, or the defaults when no path is given, then applies
/// a seed override.
pub fn load<T: DeserializeOwned + Default + Seeded>(path: Option<&Path>, seed: Option<u64>) -> Result<T> {
    let mut cfg = match path {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => T::default(),
    };
    if let Some(s) = seed {
        *cfg.seed_mut() = s;
    }
    Ok(cfg)
}

pub fn print_defaults<T: Serialize + Default>() -> Result<String> {
    Ok(serde_json::to_string_pretty(&T::default())?)
}
