//! Configuration files read by the command line.
//!
//! A run config is a TOML file holding the [`EstimationConfig`] fields at top
//! level, plus the optional input/output keys `data`, `outcome`, `task` and
//! `out`. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Result, SpvimError};
use crate::pipeline::EstimationConfig;
use crate::simulate::DgpSpec;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub estimation: EstimationConfig,
    pub data: Option<PathBuf>,
    pub outcome: Option<String>,
    pub task: Option<Task>,
    pub out: Option<PathBuf>,
}

fn take_string(table: &mut toml::Table, key: &str) -> Result<Option<String>> {
    match table.remove(key) {
        None => Ok(None),
        Some(toml::Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(SpvimError::Config(format!("`{key}` must be a string, got {}", other.type_str()))),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        let resolve = |p: String| base.join(p);
        let data = take_string(&mut table, "data")?.map(resolve);
        let out = take_string(&mut table, "out")?.map(resolve);
        let outcome = take_string(&mut table, "outcome")?;
        let task = match take_string(&mut table, "task")?.as_deref() {
            None => None,
            Some("regression") => Some(Task::Regression),
            Some("binary") => Some(Task::Binary),
            Some(other) => return Err(SpvimError::Config(format!("unknown task `{other}` (regression, binary)"))),
        };
        let estimation: EstimationConfig = table.try_into()?;
        Ok(Self { estimation, data, outcome, task, out })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpvimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Config for the `simulate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub dgp: DgpSpec,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_splits_io_keys() {
        let c = RunConfig::parse(
            r#"
            data = "example.csv"
            outcome = "y"
            task = "regression"
            gamma = 3
            seed = 5
            "#,
            Path::new("/tmp/cfg"),
        )
        .unwrap();
        assert_eq!(c.data.unwrap(), PathBuf::from("/tmp/cfg/example.csv"));
        assert_eq!(c.outcome.as_deref(), Some("y"));
        assert_eq!(c.task, Some(Task::Regression));
        assert_eq!(c.estimation.gamma, 3.0);
        assert_eq!(c.estimation.seed, 5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("data = \"a.csv\"\ngama = 2", Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig::parse("task = \"ordinal\"", Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
