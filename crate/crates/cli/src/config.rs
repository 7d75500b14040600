use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use segconf::confmap::Method;
use segconf::grid::Task;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError};

pub const RUN_FILE: &str = "run.json";

/// Where scores come from: the built-in synthetic scorer or an executable
/// speaking the job-directory protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScorerSpec {
    Synthetic,
    External(PathBuf),
}

impl FromStr for ScorerSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "synthetic" => Ok(ScorerSpec::Synthetic),
            Some(("external", path)) if !path.is_empty() => Ok(ScorerSpec::External(path.into())),
            _ => Err(format!(
                "unknown scorer `{s}` (expected synthetic or external:PATH)"
            )),
        }
    }
}

impl TryFrom<String> for ScorerSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ScorerSpec> for String {
    fn from(spec: ScorerSpec) -> Self {
        spec.to_string()
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::Synthetic => f.write_str("synthetic"),
            ScorerSpec::External(path) => write!(f, "external:{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogInfo {
    pub size: usize,
    pub checksum: String,
}

/// Everything a `confmap` run depends on. Written to `<out>/run.json`;
/// replaying it reproduces the maps byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub methods: Vec<Method>,
    pub scorer: ScorerSpec,
    pub seed: u64,
    pub trials: usize,
    pub tau: f64,
    /// Dataset manifest, relative to the directory holding `run.json`
    /// when such a path exists.
    pub manifest: PathBuf,
    pub catalog: CatalogInfo,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.methods.is_empty() {
            return Err(CliError::invalid("no methods selected"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(CliError::invalid(format!("method {m} listed twice")));
            }
        }
        if self.trials == 0 {
            return Err(CliError::invalid("trials must be >= 1"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(CliError::invalid(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
