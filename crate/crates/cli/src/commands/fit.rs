use std::path::{Path, PathBuf};
use std::time::Instant;

use skipgp::{
    FitOptions, GpModel, InferenceMode, KernelSpec, ModelKernel, SavedModel,
};

use super::{
    destandardize_mean, fit_standardization, mae, rmse, select_elements, select_rows,
    standardize_features, standardize_targets,
};
use crate::artifacts::{write_json, ModelArtifact};
use crate::config::FitConfig;
use crate::dataset::{load_dataset, DatasetSchema};
use crate::error::{CliError, CliResult};
use crate::report::{
    DatasetSummary, FitReport, LikelihoodBreakdown, OperatorApplies, Timings, VERSION,
};

pub fn run(
    config_path: &Path,
    seed: Option<u64>,
    mode: Option<InferenceMode>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let total = Instant::now();
    let mut config = FitConfig::load(config_path)?;
    config.apply_overrides(seed, mode, out);

    let load_start = Instant::now();
    let schema = DatasetSchema {
        target_column: config.target_column.clone(),
        feature_columns: config.feature_columns.clone(),
        task_column: config.task_column.clone(),
        target_optional: false,
    };
    let data = load_dataset(&config.data, &schema)?;
    let y_all = data.targets_required()?.clone();
    let load_seconds = load_start.elapsed().as_secs_f64();

    let (train_idx, test_idx) = super::split_indices(data.rows(), config.test_fraction, config.seed);
    let x_train_raw = select_rows(&data.features, &train_idx);
    let y_train_raw = select_elements(&y_all, &train_idx);
    let x_test_raw = select_rows(&data.features, &test_idx);
    let y_test_raw = select_elements(&y_all, &test_idx);

    let standardization = config
        .standardize
        .then(|| fit_standardization(&x_train_raw, &y_train_raw));
    let (x_train, y_train, x_test) = match &standardization {
        Some(s) => (
            standardize_features(&x_train_raw, s),
            standardize_targets(&y_train_raw, s),
            standardize_features(&x_test_raw, s),
        ),
        None => (x_train_raw.clone(), y_train_raw.clone(), x_test_raw.clone()),
    };

    let mut model = GpModel::init_from_data(
        &x_train,
        &y_train,
        config.kernel_family,
        config.mode,
        config.skip,
    )?;
    if let Some(init) = &config.init {
        apply_init(&mut model, init, x_train.ncols())?;
    }

    let fit_start = Instant::now();
    let fit_options = FitOptions {
        learning_rate: config.optimizer.learning_rate,
        steps: config.optimizer.steps,
        fd_step: config.optimizer.fd_step,
    };
    let fitted = model.fit(&x_train, &y_train, &fit_options)?;
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let breakdown = fitted.model.mll_instrumented(&x_train, &y_train)?;

    let predict_start = Instant::now();
    let posterior = fitted.model.posterior(x_train.clone(), y_train.clone())?;
    let train_pred = posterior.predict(&x_train)?;
    let test_pred = if x_test.nrows() > 0 {
        Some(posterior.predict(&x_test)?)
    } else {
        None
    };
    let predict_seconds = predict_start.elapsed().as_secs_f64();

    let train_mean = match &standardization {
        Some(s) => destandardize_mean(&train_pred.mean, s),
        None => train_pred.mean.clone(),
    };
    let (test_rmse, test_mae) = match &test_pred {
        Some(p) => {
            let mean = match &standardization {
                Some(s) => destandardize_mean(&p.mean, s),
                None => p.mean.clone(),
            };
            (Some(rmse(&mean, &y_test_raw)), Some(mae(&mean, &y_test_raw)))
        }
        None => (None, None),
    };

    let saved = SavedModel::capture(&fitted.model, &x_train, &y_train)?;
    let artifact = ModelArtifact::new(
        &saved,
        data.feature_names.clone(),
        config.target_column.clone(),
        standardization.clone(),
    )?;
    let model_path = artifact.save(&config.out)?;

    let applies = operator_applies(&fitted.model, x_train.nrows(), &breakdown);
    let report = FitReport {
        version: VERSION.to_string(),
        command: "fit".to_string(),
        config: config.clone(),
        dataset: DatasetSummary {
            rows: data.rows(),
            features: data.features.ncols(),
            train_rows: train_idx.len(),
            test_rows: test_idx.len(),
        },
        standardization,
        mll_trace: fitted.trace.clone(),
        best_mll: fitted.best_mll,
        best_step: fitted.best_step,
        fitted_log_hyperparameters: fitted.model.log_hypers().iter().cloned().collect(),
        train_rmse: rmse(&train_mean, &y_train_raw),
        train_mae: mae(&train_mean, &y_train_raw),
        test_rmse,
        test_mae,
        likelihood: LikelihoodBreakdown {
            value: breakdown.value,
            quadratic_term: breakdown.quadratic_term,
            logdet_term: breakdown.logdet_term,
            constant_term: breakdown.constant_term,
            cg_iterations: breakdown.cg_iterations,
            clamped_ritz_values: breakdown.clamped_ritz_values,
        },
        operator_applies: applies,
        timings: Timings {
            load_seconds: Some(load_seconds),
            fit_seconds: Some(fit_seconds),
            predict_seconds: Some(predict_seconds),
            decompose_seconds: Some(breakdown.decompose_seconds),
            solve_seconds: Some(breakdown.solve_seconds),
            logdet_seconds: Some(breakdown.logdet_seconds),
            total_seconds: total.elapsed().as_secs_f64(),
        },
    };
    let metrics_path = write_json(&config.out, "metrics.json", &report)?;
    println!(
        "fit complete: model {} metrics {}",
        model_path.display(),
        metrics_path.display()
    );
    Ok(())
}

fn apply_init(
    model: &mut GpModel,
    init: &crate::config::InitOverrides,
    dims: usize,
) -> CliResult<()> {
    let ModelKernel::Single(current) = &model.kernel else {
        return Err(CliError::internal("data-driven kernel is always single"));
    };
    let lengthscales = match &init.lengthscales {
        Some(ls) => {
            if ls.len() != dims {
                return Err(CliError::validation(format!(
                    "init.lengthscales has {} entries for {} feature columns",
                    ls.len(),
                    dims
                )));
            }
            ls.clone()
        }
        None => current.lengthscales.clone(),
    };
    let outputscale = init.outputscale.unwrap_or(current.outputscale);
    model.kernel = ModelKernel::Single(KernelSpec::new(current.family, lengthscales, outputscale)?);
    if let Some(noise) = init.noise_variance {
        if !noise.is_finite() || noise <= 0.0 {
            return Err(CliError::validation("init.noise_variance must be positive"));
        }
        model.noise_variance = noise;
    }
    if let Some(mean) = init.constant_mean {
        model.constant_mean = mean;
    }
    Ok(())
}

/// Kernel-operator application counts for the final likelihood evaluation;
/// decomposition and log-determinant figures are the configured budgets,
/// which the solvers may undershoot if they converge or break down early.
fn operator_applies(model: &GpModel, n: usize, breakdown: &skipgp::MllBreakdown) -> OperatorApplies {
    match model.inference_mode {
        InferenceMode::ExactDense => OperatorApplies {
            decompose_per_leaf: 0,
            cg_solve: 0,
            logdet: 0,
        },
        InferenceMode::Skip => {
            let rank = model.skip_settings.rank.min(n).min(100);
            OperatorApplies {
                decompose_per_leaf: rank,
                cg_solve: breakdown.cg_iterations,
                logdet: model.skip_settings.num_probes * rank,
            }
        }
    }
}
