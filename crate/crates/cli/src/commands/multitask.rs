use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use skipgp::{
    fit_clusters, ClusterFitOptions, ClusterHyperparameters, ClusterModel, InferenceMode,
    SkipSettings, TaskAssignment, TaskDataset,
};

use super::{population_mean, population_std};
use crate::artifacts::{write_atomic, write_json};
use crate::dataset::{load_dataset, DatasetSchema};
use crate::error::{CliError, CliResult};
use crate::report::{
    ClusterHyperparameterSummary, ExtrapolationEntry, MultitaskReport, Timings, VERSION,
};

/// Fraction of the extrapolation target's observations held out from the
/// high end of its input range.
const HOLDOUT_FRACTION: f64 = 0.3;

pub fn run(
    data_path: &Path,
    clusters: usize,
    sweeps: usize,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let total = Instant::now();
    if clusters == 0 {
        return Err(CliError::validation("clusters must be positive"));
    }
    if sweeps == 0 {
        return Err(CliError::validation("sweeps must be positive"));
    }

    let load_start = Instant::now();
    let schema = DatasetSchema {
        target_column: "y".to_string(),
        feature_columns: None,
        task_column: Some("task_id".to_string()),
        target_optional: false,
    };
    let data = load_dataset(data_path, &schema)?;
    if data.features.ncols() != 1 {
        return Err(CliError::validation(format!(
            "the multi-task model is one-dimensional; found feature columns {:?}",
            data.feature_names
        )));
    }
    let tasks = data
        .tasks
        .as_ref()
        .ok_or_else(|| CliError::validation("missing task column"))?
        .clone();
    let y = data.targets_required()?.clone();
    let x: Vec<f64> = data.features.column(0).iter().cloned().collect();
    let dataset = TaskDataset::new(
        x.clone(),
        y.iter().cloned().collect(),
        TaskAssignment::new(tasks.indices.clone(), tasks.labels.len())?,
    )?;
    let load_seconds = load_start.elapsed().as_secs_f64();

    // Data-driven starting hyperparameters: both kernels begin at the input
    // spread, the shared trend takes the target variance, the per-task
    // deviation a quarter of it.
    let x_vec = DVector::from_vec(x);
    let spread = {
        let s = population_std(&x_vec);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let var_y = {
        let s = population_std(&y);
        if s > 0.0 {
            s * s
        } else {
            1.0
        }
    };
    let hypers = ClusterHyperparameters::matern(
        spread,
        var_y,
        spread,
        0.25 * var_y,
        0.05 * var_y,
    )?;
    let model = ClusterModel::new(
        hypers,
        population_mean(&y),
        InferenceMode::ExactDense,
        SkipSettings::default(),
    )?;

    let fit_start = Instant::now();
    let options = ClusterFitOptions {
        sweeps,
        burn_in: (sweeps / 4).min(5),
        seed,
        ..ClusterFitOptions::default()
    };
    let fit = fit_clusters(&model, &dataset, clusters, &options)?;
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let mut trace_text = String::new();
    for record in &fit.trace {
        let line = serde_json::to_string(record)
            .map_err(|e| CliError::internal(format!("serializing trace: {e}")))?;
        trace_text.push_str(&line);
        trace_text.push('\n');
    }
    let trace_path = write_atomic(out, "trace.jsonl", &trace_text)?;

    let extrapolation_start = Instant::now();
    let extrapolation = extrapolation_curve(&fit.model, &dataset, clusters, sweeps, seed)?;
    let extrapolation_seconds = extrapolation_start.elapsed().as_secs_f64();
    let mut csv = String::from("num_tasks,rmse\n");
    for entry in &extrapolation {
        csv.push_str(&format!("{},{}\n", entry.num_tasks, entry.rmse));
    }
    let curve_path = write_atomic(out, "extrapolation.csv", &csv)?;

    let hp = &fit.model.hyperparameters;
    let final_mll = fit.trace.last().map(|r| r.mll).unwrap_or(f64::NAN);
    let report = MultitaskReport {
        version: VERSION.to_string(),
        command: "multitask".to_string(),
        data: data_path.display().to_string(),
        clusters,
        sweeps,
        seed,
        num_tasks: dataset.num_tasks(),
        num_observations: dataset.len(),
        task_labels: tasks.labels.clone(),
        final_assignment: fit.state.lambda().to_vec(),
        final_mll,
        hyperparameters: ClusterHyperparameterSummary {
            cluster_lengthscale: hp.cluster_kernel.lengthscales[0],
            cluster_outputscale: hp.cluster_kernel.outputscale,
            individual_lengthscale: hp.individual_kernel.lengthscales[0],
            individual_outputscale: hp.individual_kernel.outputscale,
            noise_variance: hp.noise_variance,
        },
        extrapolation,
        timings: Timings {
            load_seconds: Some(load_seconds),
            fit_seconds: Some(fit_seconds),
            predict_seconds: Some(extrapolation_seconds),
            total_seconds: total.elapsed().as_secs_f64(),
            ..Timings::default()
        },
    };
    let metrics_path = write_json(out, "metrics.json", &report)?;
    println!(
        "trace {} extrapolation {} metrics {}",
        trace_path.display(),
        curve_path.display(),
        metrics_path.display()
    );
    Ok(())
}

/// Held-out error on the first task's upper input range as more tasks are
/// made available; sharing across tasks should push the error down as the
/// pool grows.
fn extrapolation_curve(
    model: &ClusterModel,
    dataset: &TaskDataset,
    clusters: usize,
    sweeps: usize,
    seed: u64,
) -> CliResult<Vec<ExtrapolationEntry>> {
    let s = dataset.num_tasks();
    let mut counts: Vec<usize> = [3usize, 6, 9, 12, 15]
        .into_iter()
        .filter(|&t| t <= s)
        .collect();
    if counts.last() != Some(&s) && s >= 2 {
        counts.push(s);
    }
    if counts.is_empty() {
        return Ok(Vec::new());
    }

    // The target's held-out points: its highest inputs.
    let target_obs = dataset.assignment().observations_of(0);
    if target_obs.len() < 3 {
        return Ok(Vec::new());
    }
    let mut by_x: Vec<usize> = target_obs.clone();
    by_x.sort_by(|&a, &b| dataset.inputs()[a].partial_cmp(&dataset.inputs()[b]).unwrap());
    let holdout = ((target_obs.len() as f64 * HOLDOUT_FRACTION).ceil() as usize)
        .clamp(1, target_obs.len() - 2);
    let held: Vec<usize> = by_x[by_x.len() - holdout..].to_vec();
    let held_x: Vec<f64> = held.iter().map(|&i| dataset.inputs()[i]).collect();
    let held_y: Vec<f64> = held.iter().map(|&i| dataset.targets()[i]).collect();

    let mut entries = Vec::with_capacity(counts.len());
    for t in counts {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut task_of = Vec::new();
        for i in 0..dataset.len() {
            let task = dataset.assignment().task(i);
            if task < t && !held.contains(&i) {
                xs.push(dataset.inputs()[i]);
                ys.push(dataset.targets()[i]);
                task_of.push(task);
            }
        }
        let train = TaskDataset::new(xs, ys, TaskAssignment::new(task_of, t)?)?;
        let options = ClusterFitOptions {
            sweeps,
            burn_in: sweeps,
            optimize_hyperparameters: false,
            seed: seed.wrapping_add(t as u64),
            ..ClusterFitOptions::default()
        };
        let fit = fit_clusters(model, &train, clusters.min(t), &options)?;
        let (mean, _) = fit
            .model
            .predict_existing_task(&train, &fit.state, 0, &held_x)?;
        let rmse = (mean
            .iter()
            .zip(held_y.iter())
            .map(|(p, a)| (p - a) * (p - a))
            .sum::<f64>()
            / held_x.len() as f64)
            .sqrt();
        entries.push(ExtrapolationEntry {
            num_tasks: t,
            rmse,
        });
    }
    Ok(entries)
}
