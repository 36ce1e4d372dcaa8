use std::path::Path;
use std::time::Instant;

use super::{destandardize_mean, destandardize_variance, mae, rmse, standardize_features};
use crate::artifacts::{write_atomic, write_json, ModelArtifact};
use crate::dataset::{load_dataset, DatasetSchema};
use crate::error::{CliError, CliResult};
use crate::report::{PredictReport, Timings, VERSION};

pub fn run(model_path: &Path, data_path: &Path, out: &Path) -> CliResult<()> {
    let total = Instant::now();
    let (artifact, saved) = ModelArtifact::load(model_path)?;

    let load_start = Instant::now();
    let schema = DatasetSchema {
        target_column: artifact.target_column.clone(),
        feature_columns: Some(artifact.feature_columns.clone()),
        task_column: None,
        target_optional: true,
    };
    let data = load_dataset(data_path, &schema)?;
    let load_seconds = load_start.elapsed().as_secs_f64();

    let features = match &artifact.standardization {
        Some(s) => {
            if s.feature_means.len() != data.features.ncols() {
                return Err(CliError::model(format!(
                    "model expects {} feature columns, file has {}",
                    s.feature_means.len(),
                    data.features.ncols()
                )));
            }
            standardize_features(&data.features, s)
        }
        None => data.features.clone(),
    };

    let predict_start = Instant::now();
    let posterior = saved.posterior()?;
    let prediction = posterior.predict(&features)?;
    let predict_seconds = predict_start.elapsed().as_secs_f64();

    let (mean, variance) = match &artifact.standardization {
        Some(s) => (
            destandardize_mean(&prediction.mean, s),
            destandardize_variance(&prediction.variance, s),
        ),
        None => (prediction.mean.clone(), prediction.variance.clone()),
    };

    let mut csv = String::from("row,mean,variance\n");
    for i in 0..mean.len() {
        csv.push_str(&format!("{i},{},{}\n", mean[i], variance[i]));
    }
    let predictions_path = write_atomic(out, "predictions.csv", &csv)?;

    let (rmse_value, mae_value) = match &data.targets {
        Some(y) => (Some(rmse(&mean, y)), Some(mae(&mean, y))),
        None => (None, None),
    };
    let report = PredictReport {
        version: VERSION.to_string(),
        command: "predict".to_string(),
        model: model_path.display().to_string(),
        data: data_path.display().to_string(),
        rows: data.rows(),
        rmse: rmse_value,
        mae: mae_value,
        timings: Timings {
            load_seconds: Some(load_seconds),
            predict_seconds: Some(predict_seconds),
            total_seconds: total.elapsed().as_secs_f64(),
            ..Timings::default()
        },
    };
    let metrics_path = write_json(out, "metrics.json", &report)?;
    println!(
        "predictions {} metrics {}",
        predictions_path.display(),
        metrics_path.display()
    );
    Ok(())
}
