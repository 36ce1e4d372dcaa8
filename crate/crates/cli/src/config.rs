use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skipgp::{InferenceMode, KernelFamily, SkipSettings};

use crate::error::{CliError, CliResult};

fn default_target() -> String {
    "y".to_string()
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_family() -> KernelFamily {
    KernelFamily::Rbf
}

fn default_mode() -> InferenceMode {
    InferenceMode::ExactDense
}

fn default_out() -> PathBuf {
    PathBuf::from("skipgp-run")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "OptimizerConfig::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "OptimizerConfig::default_steps")]
    pub steps: usize,
    #[serde(default = "OptimizerConfig::default_fd_step")]
    pub fd_step: f64,
}

impl OptimizerConfig {
    fn default_learning_rate() -> f64 {
        0.1
    }

    fn default_steps() -> usize {
        100
    }

    fn default_fd_step() -> f64 {
        1e-4
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: Self::default_learning_rate(),
            steps: Self::default_steps(),
            fd_step: Self::default_fd_step(),
        }
    }
}

/// Optional explicit starting hyperparameters; anything left unset keeps its
/// data-driven initialization.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitOverrides {
    #[serde(default)]
    pub lengthscales: Option<Vec<f64>>,
    #[serde(default)]
    pub outputscale: Option<f64>,
    #[serde(default)]
    pub noise_variance: Option<f64>,
    #[serde(default)]
    pub constant_mean: Option<f64>,
}

/// Configuration document for `fit`. Command-line flags override the
/// corresponding fields: `--seed` beats `seed`, `--mode` beats `mode`, and
/// `--out` beats `out`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    #[serde(default = "default_target")]
    pub target_column: String,
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    /// Excluded from the default feature set when present; `fit` itself
    /// ignores task structure.
    #[serde(default)]
    pub task_column: Option<String>,
    #[serde(default)]
    pub standardize: bool,
    /// Fraction of rows held out for test metrics; 0 disables the split.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_family")]
    pub kernel_family: KernelFamily,
    #[serde(default = "default_mode")]
    pub mode: InferenceMode,
    #[serde(default)]
    pub skip: SkipSettings,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub init: Option<InitOverrides>,
    /// Drives the train/test split; all other randomness comes from
    /// `skip.probe_seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl FitConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, &e))?;
        let config: FitConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(CliError::validation(format!(
                "test_fraction must be in [0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.optimizer.steps == 0 {
            return Err(CliError::validation("optimizer.steps must be positive"));
        }
        if !self.optimizer.learning_rate.is_finite() || self.optimizer.learning_rate <= 0.0 {
            return Err(CliError::validation(
                "optimizer.learning_rate must be positive",
            ));
        }
        if !self.optimizer.fd_step.is_finite() || self.optimizer.fd_step <= 0.0 {
            return Err(CliError::validation("optimizer.fd_step must be positive"));
        }
        Ok(())
    }

    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        mode: Option<InferenceMode>,
        out: Option<PathBuf>,
    ) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(m) = mode {
            self.mode = m;
        }
        if let Some(o) = out {
            self.out = o;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn minimal_config_fills_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{{\"data\": \"d.csv\"}}").unwrap();
        let config = FitConfig::load(f.path()).unwrap();
        assert_eq!(config.target_column, "y");
        assert_eq!(config.test_fraction, 0.2);
        assert_eq!(config.optimizer.steps, 100);
        assert!(matches!(config.mode, InferenceMode::ExactDense));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{{\"data\": \"d.csv\", \"tpyo\": 1}}").unwrap();
        let err = FitConfig::load(f.path()).unwrap_err();
        assert_eq!(err.kind, crate::error::ErrorKind::Parse);
    }

    #[test]
    fn flags_take_precedence_over_config_fields() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{{\"data\": \"d.csv\", \"seed\": 1, \"mode\": \"skip\"}}").unwrap();
        let mut config = FitConfig::load(f.path()).unwrap();
        config.apply_overrides(Some(9), Some(InferenceMode::ExactDense), None);
        assert_eq!(config.seed, 9);
        assert!(matches!(config.mode, InferenceMode::ExactDense));
        assert_eq!(config.out, PathBuf::from("skipgp-run"));
    }

    #[test]
    fn bad_test_fraction_is_a_validation_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{{\"data\": \"d.csv\", \"test_fraction\": 1.5}}").unwrap();
        let err = FitConfig::load(f.path()).unwrap_err();
        assert_eq!(err.kind, crate::error::ErrorKind::Validation);
    }
}
