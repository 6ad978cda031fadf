//! Run configuration: a single optional TOML file whose keys mirror the
//! command-line flags. Explicit flags override file values; the fully
//! resolved configuration is echoed next to each run's outputs so a rerun
//! from the echo reproduces the outputs byte-for-byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// All tunables of every subcommand. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    /// log10 of the factor step size (e.g. -4.4 for 10^-4.4).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// log10 of the dof step size; defaults to `eps` (global step).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_dof: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backtracking: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("bad config {}: {e}", path.display())))
    }

    /// Overlays `flags` (set fields win) on top of `self`.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(
            command,
            dims,
            n,
            seed,
            method,
            metric,
            eps,
            eps_dof,
            iters,
            record_every,
            backtracking,
            out,
            data,
            state,
            experiment,
            r,
            xi,
            beta,
            k,
            m,
            gamma,
            summary,
            format
        );
        self
    }

    pub fn echo_to(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::validation(format!("cannot serialize config: {e}")))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, text)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn require_out(&self) -> Result<&PathBuf, CliError> {
        self.out
            .as_ref()
            .ok_or_else(|| CliError::validation("--out directory is required".into()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
