use std::path::{Path, PathBuf};

use kernood::detector::cusum::DEFAULT_SLACK_FACTOR;
use kernood::suite::SuiteConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// The single JSON document driving a run. Command-line flags override it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub suite: SuiteConfig,
    pub cusum: CusumConfig,
    pub bench: BenchConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CusumConfig {
    /// Per-episode false-alarm rate on held-out clean episodes.
    pub fpr: f64,
    pub slack_factor: f64,
}

impl Default for CusumConfig {
    fn default() -> Self {
        Self {
            fpr: 0.05,
            slack_factor: DEFAULT_SLACK_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// N values swept at T = `lens[0]`.
    pub dims: Vec<usize>,
    /// T values swept at N = `dims[1]` (or `dims[0]` if only one).
    pub lens: Vec<usize>,
    pub repeats: usize,
    /// Training-time protocol: `episodes` x `len` steps x `n_dims`.
    pub protocol_episodes: usize,
    pub protocol_len: usize,
    pub protocol_dims: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![4, 8, 16],
            lens: vec![10_000, 20_000, 40_000],
            repeats: 5,
            protocol_episodes: 45,
            protocol_len: 100,
            protocol_dims: 23,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_slice(&bytes).map_err(|e| CliError::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(out) = cfg.paths.out.take() {
            cfg.paths.out = Some(if out.is_relative() { base.join(out) } else { out });
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.suite.validate()?;
        if !(self.cusum.fpr > 0.0 && self.cusum.fpr < 1.0) {
            return Err(CliError::Config(format!(
                "cusum.fpr must be in (0, 1), got {}",
                self.cusum.fpr
            )));
        }
        if self.cusum.slack_factor.is_nan() || self.cusum.slack_factor < 0.0 {
            return Err(CliError::Config("cusum.slack_factor must be >= 0".into()));
        }
        let b = &self.bench;
        if b.dims.is_empty() || b.lens.is_empty() || b.repeats == 0 || b.dims.contains(&0) {
            return Err(CliError::Config(
                "bench needs non-empty dims and lens and repeats >= 1".into(),
            ));
        }
        if b.protocol_episodes == 0 || b.protocol_dims == 0 || b.protocol_len < self.suite.detector.w {
            return Err(CliError::Config("bench protocol sizes are too small".into()));
        }
        Ok(())
    }
}
