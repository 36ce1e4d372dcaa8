use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skipgp::{
    kernel_matrix, skip_decompose, ski_operator, GpModel, InferenceMode, KernelFamily, KernelSpec,
    LinearOperator, SkipSettings,
};

use crate::artifacts::{write_atomic, write_json};
use crate::dataset::{load_dataset, DatasetSchema};
use crate::error::{CliError, CliResult};
use crate::report::{BenchInducingEntry, BenchInducingReport, BenchMvmReport, Timings, VERSION};

const PROBES: usize = 20;
const DIMENSIONS: [(usize, f64); 3] = [(4, 2.0), (8, 4.0), (12, 5.0)];
const RANKS: [usize; 6] = [5, 10, 20, 30, 50, 100];

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Accuracy of the fast product-kernel multiply against the dense
/// element-wise product, tabulated over input dimensionality and
/// decomposition rank. The dense oracle is materialized, so `n` is capped.
pub fn mvm(n: usize, seed: u64, out: &Path) -> CliResult<()> {
    let total = Instant::now();
    if !(50..=3000).contains(&n) {
        return Err(CliError::validation(format!(
            "n must be between 50 and 3000 (the exact comparison matrix is dense), got {n}"
        )));
    }
    let mut csv = String::from("d,r,median_relative_error,first_quartile,third_quartile\n");
    let mut table_rows = 0;
    for (d, lengthscale) in DIMENSIONS {
        let mut input_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(d as u64));
        let spec = KernelSpec::rbf(vec![lengthscale], 1.0).map_err(CliError::from)?;
        let mut dense = DMatrix::from_element(n, n, 1.0);
        let mut components = Vec::with_capacity(d);
        for _ in 0..d {
            let col: Vec<f64> = (0..n)
                .map(|_| input_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let col_matrix = DMatrix::from_column_slice(n, 1, &col);
            dense.component_mul_assign(&kernel_matrix(&spec, &col_matrix, &col_matrix));
            components.push(ski_operator(&spec, &col, 100).map_err(CliError::from)?);
        }
        let refs: Vec<&dyn LinearOperator> =
            components.iter().map(|c| c as &dyn LinearOperator).collect();
        for rank in RANKS {
            let tree = skip_decompose(&refs, rank, seed.wrapping_add(1)).map_err(CliError::from)?;
            let mut probe_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100 + d as u64));
            let mut errors: Vec<f64> = (0..PROBES)
                .map(|_| {
                    let v = DVector::from_fn(n, |_, _| probe_rng.sample::<f64, _>(StandardNormal));
                    let exact = &dense * &v;
                    (tree.apply(&v) - &exact).norm() / exact.norm()
                })
                .collect();
            errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
            csv.push_str(&format!(
                "{d},{rank},{},{},{}\n",
                quantile(&errors, 0.5),
                quantile(&errors, 0.25),
                quantile(&errors, 0.75)
            ));
            table_rows += 1;
        }
    }
    let table_path = write_atomic(out, "mvm_error.csv", &csv)?;
    let report = BenchMvmReport {
        version: VERSION.to_string(),
        command: "bench-mvm".to_string(),
        n,
        seed,
        probes: PROBES,
        table_rows,
        timings: Timings {
            total_seconds: total.elapsed().as_secs_f64(),
            ..Timings::default()
        },
    };
    let metrics_path = write_json(out, "metrics.json", &report)?;
    println!(
        "mvm error table {} metrics {}",
        table_path.display(),
        metrics_path.display()
    );
    Ok(())
}

/// Wall time per likelihood evaluation as the interpolation grid grows on a
/// fixed dataset; with the matrix-free path the grid size should barely
/// register.
pub fn inducing(data_path: &Path, m_list: &[usize], out: &Path) -> CliResult<()> {
    let total = Instant::now();
    if m_list.is_empty() {
        return Err(CliError::validation("m-list must not be empty"));
    }
    if let Some(&bad) = m_list.iter().find(|&&m| m < 4) {
        return Err(CliError::validation(format!(
            "grid sizes need at least 4 nodes, got {bad}"
        )));
    }
    let load_start = Instant::now();
    let data = load_dataset(data_path, &DatasetSchema::default())?;
    let y = data.targets_required()?.clone();
    let load_seconds = load_start.elapsed().as_secs_f64();

    let mut entries = Vec::with_capacity(m_list.len());
    let mut csv = String::from("m,seconds_per_mll\n");
    for &m in m_list {
        let settings = SkipSettings {
            grid_size: m,
            rank: 30,
            probe_seed: 5,
            num_probes: 10,
            cg_tolerance: 1e-6,
            max_cg_iterations: 1000,
        };
        let model = GpModel::init_from_data(
            &data.features,
            &y,
            KernelFamily::Rbf,
            InferenceMode::Skip,
            settings,
        )?;
        model.mll(&data.features, &y)?;
        let mut reps: Vec<f64> = (0..3)
            .map(|_| {
                let t = Instant::now();
                model.mll(&data.features, &y).map(|_| t.elapsed().as_secs_f64())
            })
            .collect::<Result<Vec<f64>, skipgp::Error>>()?;
        reps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let seconds = reps[reps.len() / 2];
        csv.push_str(&format!("{m},{seconds}\n"));
        entries.push(BenchInducingEntry {
            grid_size: m,
            seconds_per_mll: seconds,
        });
    }
    let table_path = write_atomic(out, "inducing_time.csv", &csv)?;
    let report = BenchInducingReport {
        version: VERSION.to_string(),
        command: "bench-inducing".to_string(),
        data: data_path.display().to_string(),
        rows: data.rows(),
        grid_sizes: entries.iter().map(|e| e.grid_size).collect(),
        timings: Timings {
            load_seconds: Some(load_seconds),
            total_seconds: total.elapsed().as_secs_f64(),
            ..Timings::default()
        },
    };
    let metrics_path = write_json(out, "metrics.json", &report)?;
    println!(
        "inducing time table {} metrics {}",
        table_path.display(),
        metrics_path.display()
    );
    Ok(())
}
