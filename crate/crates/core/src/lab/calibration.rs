//! Frozen constants for the inequalities whose constants are not explicit.
//!
//! A calibration run evaluates every calibrated suite on the golden seed set
//! with no bound and records the largest ratio per suite and profile. Later
//! runs accept a ratio up to `margin` times the recorded value and fail with
//! [`Error::MissingCalibration`] when a constant is absent.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run, RunConfig, Suite};
use crate::error::{Error, Result};

/// The table shipped with the crate.
const SHIPPED: &str = include_str!("../../data/calibration.json");

/// Calibration constants with the parameters of the run that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    /// Layout version.
    pub version: u32,
    /// Allowed excess over each constant.
    pub margin: f64,
    /// Configuration of the calibration run; rerunning it reproduces the constants.
    pub provenance: RunConfig,
    /// Largest observed ratio keyed by `suite/profile`.
    pub constants: BTreeMap<String, f64>,
}

impl CalibrationTable {
    /// The table shipped in `data/calibration.json`.
    pub fn shipped() -> Result<Self> {
        Ok(serde_json::from_str(SHIPPED)?)
    }

    /// Reads a table from disk.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes the table as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, json).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
    }

    /// Key of a suite and profile.
    pub fn key(suite: &str, profile: &str) -> String {
        format!("{suite}/{profile}")
    }

    /// The constant for `key`.
    pub fn get(&self, key: &str) -> Result<f64> {
        self.constants.get(key).copied().ok_or_else(|| Error::MissingCalibration(key.to_string()))
    }

    /// The accepted bound `margin · constant` for `key`.
    pub fn bound(&self, key: &str) -> Result<f64> {
        Ok(self.margin * self.get(key)?)
    }
}

/// Runs the calibrated suites of `config` without bounds and freezes the maxima.
pub fn calibrate(config: &RunConfig) -> Result<CalibrationTable> {
    let mut cfg = config.clone();
    cfg.suites = Suite::calibrated();
    cfg.out = None;
    let report = run(&cfg, None)?;
    let mut constants = BTreeMap::new();
    for r in &report.suites {
        if let Some(key) = &r.calibration_key {
            constants.insert(key.clone(), r.max_ratio);
        }
    }
    Ok(CalibrationTable { version: 1, margin: config.margin, provenance: cfg, constants })
}
