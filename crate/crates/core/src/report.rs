//! Serialized estimation report.
//!
//! A report is a JSON document. Its body (everything except
//! `provenance.wall_time_secs`) is a pure function of config, data and seed.
//! Floats use shortest round-trip formatting, so re-loading a report gives back
//! every stored number bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SpvimError};
use crate::pipeline::{Diagnostics, EstimationConfig, SpvimResult};

/// Bumped on any change to the report fields.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub version: String,
    pub config: EstimationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub sigma: Vec<Vec<f64>>,
    pub phi1_part: Vec<Vec<f64>>,
    pub phi2_part: Vec<Vec<f64>>,
    /// `null` when subsets were enumerated rather than sampled.
    pub gamma: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub features: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    /// `null` for the null-predictiveness index and for untested features.
    pub test_statistics: Vec<Option<f64>>,
    pub p_values: Vec<Option<f64>>,
    pub reject: Vec<Option<bool>>,
    pub covariance: CovarianceReport,
    pub diagnostics: Diagnostics,
    pub provenance: Provenance,
}

/// The config as recorded in reports. The worker count only affects
/// scheduling, so it is dropped to keep report bodies identical at any count.
pub fn recorded_config(config: &EstimationConfig) -> EstimationConfig {
    EstimationConfig { workers: 0, ..config.clone() }
}

pub fn config_hash(config: &EstimationConfig) -> String {
    let canonical = serde_json::to_string(&recorded_config(config)).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Report {
    pub fn new(result: &SpvimResult, config: &EstimationConfig) -> Self {
        let cov = &result.covariance;
        let mut diagnostics = result.diagnostics.clone();
        if !diagnostics.gamma.is_finite() {
            // JSON has no infinity; the covariance block carries it as null
            diagnostics.gamma = 0.0;
        }
        Self {
            schema_version: SCHEMA_VERSION,
            features: result.features.clone(),
            estimates: result.psi.clone(),
            std_errors: result.std_errors.clone(),
            ci_lower: result.intervals.iter().map(|i| i.lower).collect(),
            ci_upper: result.intervals.iter().map(|i| i.upper).collect(),
            test_statistics: result.tests.iter().map(|t| t.as_ref().map(|t| t.statistic)).collect(),
            p_values: result.tests.iter().map(|t| t.as_ref().map(|t| t.p_value)).collect(),
            reject: result.tests.iter().map(|t| t.as_ref().map(|t| t.reject)).collect(),
            covariance: CovarianceReport {
                sigma: rows(&cov.sigma),
                phi1_part: rows(&cov.phi1_part),
                phi2_part: rows(&cov.phi2_part),
                gamma: cov.gamma.is_finite().then_some(cov.gamma),
                n: cov.n,
            },
            diagnostics,
            provenance: Provenance {
                seed: config.seed,
                config_hash: config_hash(config),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: recorded_config(config),
                wall_time_secs: Some(result.wall_time_secs),
            },
        }
    }

    /// The deterministic part of the report: everything but the wall time.
    pub fn body(&self) -> String {
        let mut body = self.clone();
        body.provenance.wall_time_secs = None;
        body.to_json()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Report = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(SpvimError::Data(format!(
                "report schema version {} is not supported (expected {SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
