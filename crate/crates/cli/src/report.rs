use serde::{Deserialize, Serialize};

use crate::config::FitConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Wall-clock seconds per phase. This is the only place timing appears in a
/// report, so determinism checks can drop the single `timings` field.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predict_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decompose_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logdet_seconds: Option<f64>,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub features: usize,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Per-column affine transform fitted on training rows; predictions are
/// mapped back through the target transform before reporting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LikelihoodBreakdown {
    pub value: f64,
    pub quadratic_term: f64,
    pub logdet_term: f64,
    pub constant_term: f64,
    pub cg_iterations: usize,
    pub clamped_ritz_values: usize,
}

/// Kernel-operator application counts for the final likelihood evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorApplies {
    /// Applications of each leaf operator while building the decomposition.
    pub decompose_per_leaf: usize,
    pub cg_solve: usize,
    pub logdet: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub version: String,
    pub command: String,
    pub config: FitConfig,
    pub dataset: DatasetSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    pub mll_trace: Vec<f64>,
    pub best_mll: f64,
    pub best_step: usize,
    pub fitted_log_hyperparameters: Vec<f64>,
    pub train_rmse: f64,
    pub train_mae: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_mae: Option<f64>,
    pub likelihood: LikelihoodBreakdown,
    pub operator_applies: OperatorApplies,
    pub timings: Timings,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictReport {
    pub version: String,
    pub command: String,
    pub model: String,
    pub data: String,
    pub rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    pub timings: Timings,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchMvmReport {
    pub version: String,
    pub command: String,
    pub n: usize,
    pub seed: u64,
    pub probes: usize,
    pub table_rows: usize,
    pub timings: Timings,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchInducingEntry {
    pub grid_size: usize,
    pub seconds_per_mll: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchInducingReport {
    pub version: String,
    pub command: String,
    pub data: String,
    pub rows: usize,
    pub grid_sizes: Vec<usize>,
    pub timings: Timings,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterHyperparameterSummary {
    pub cluster_lengthscale: f64,
    pub cluster_outputscale: f64,
    pub individual_lengthscale: f64,
    pub individual_outputscale: f64,
    pub noise_variance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtrapolationEntry {
    pub num_tasks: usize,
    pub rmse: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultitaskReport {
    pub version: String,
    pub command: String,
    pub data: String,
    pub clusters: usize,
    pub sweeps: usize,
    pub seed: u64,
    pub num_tasks: usize,
    pub num_observations: usize,
    pub task_labels: Vec<String>,
    pub final_assignment: Vec<usize>,
    pub final_mll: f64,
    pub hyperparameters: ClusterHyperparameterSummary,
    pub extrapolation: Vec<ExtrapolationEntry>,
    pub timings: Timings,
}
