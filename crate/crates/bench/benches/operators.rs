use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use skipgp::{
    ski_operator, skip_decompose, FitOptions, GpModel, InferenceMode, KernelFamily, KernelSpec,
    LinearOperator, SkipSettings, ToeplitzOperator,
};
use skipgp_bench::gaussian_inputs;

fn unit_vector(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let norm = v.norm();
    v / norm
}

/// Symmetric Toeplitz multiply through the circulant embedding. The cost per
/// apply should grow close to m log m.
fn toeplitz_mvm(c: &mut Criterion) {
    let mut group = c.benchmark_group("toeplitz_mvm");
    for m in [256usize, 1024, 4096, 16384] {
        let h = 10.0 / (m as f64 - 1.0);
        let column: Vec<f64> = (0..m)
            .map(|k| {
                let d = k as f64 * h;
                (-0.5 * d * d).exp()
            })
            .collect();
        let op = ToeplitzOperator::new(column).unwrap();
        let v = unit_vector(m, 1);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| op.apply(&v))
        });
    }
    group.finish();
}

/// One interpolated kernel multiply at fixed n as the grid grows.
fn ski_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("ski_apply");
    let n = 2000;
    let x = gaussian_inputs(n, 1, 2);
    let points: Vec<f64> = x.column(0).iter().cloned().collect();
    let spec = KernelSpec::new(KernelFamily::Rbf, vec![0.8], 1.0).unwrap();
    let v = unit_vector(n, 3);
    for m in [50usize, 200, 800, 3200] {
        let op = ski_operator(&spec, &points, m).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| op.apply(&v))
        });
    }
    group.finish();
}

/// The one-time product factorization against the per-apply cost it buys:
/// decomposition does all the Lanczos work, after which each multiply
/// through the d-dimensional product is a few thin-matrix products.
fn skip_product(c: &mut Criterion) {
    let mut group = c.benchmark_group("skip_product");
    group.sample_size(20);
    let n = 1000;
    let d = 4;
    let rank = 30;
    let x = gaussian_inputs(n, d, 4);
    let spec = KernelSpec::new(KernelFamily::Rbf, vec![2.0], 1.0).unwrap();
    let components: Vec<_> = (0..d)
        .map(|j| {
            let points: Vec<f64> = x.column(j).iter().cloned().collect();
            ski_operator(&spec, &points, 100).unwrap()
        })
        .collect();
    let refs: Vec<&dyn LinearOperator> = components
        .iter()
        .map(|op| op as &dyn LinearOperator)
        .collect();

    group.bench_function("decompose_rank_30", |b| {
        b.iter(|| skip_decompose(&refs, rank, 9).unwrap())
    });

    let tree = skip_decompose(&refs, rank, 9).unwrap();
    let v = unit_vector(n, 5);
    group.bench_function("mvm_after_decompose", |b| b.iter(|| tree.apply(&v)));
    group.finish();
}

fn synthetic_targets(x: &DMatrix<f64>, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(x.nrows(), |i, _| {
        (x[(i, 0)]).sin() + 0.5 * (2.0 * x[(i, 1)]).cos() + 0.05 * (rng.random::<f64>() - 0.5)
    })
}

/// Full marginal likelihood evaluation, dense Cholesky against the
/// matrix-free route.
fn gp_mll(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp_mll");
    group.sample_size(10);
    let n = 500;
    let x = gaussian_inputs(n, 2, 6);
    let y = synthetic_targets(&x, 7);
    let settings = SkipSettings {
        grid_size: 100,
        rank: 30,
        probe_seed: 11,
        num_probes: 10,
        cg_tolerance: 1e-6,
        max_cg_iterations: 1000,
    };
    for (label, mode) in [
        ("exact_dense", InferenceMode::ExactDense),
        ("skip", InferenceMode::Skip),
    ] {
        let model = GpModel::init_from_data(&x, &y, KernelFamily::Rbf, mode, settings).unwrap();
        group.bench_function(label, |b| b.iter(|| model.mll(&x, &y).unwrap()));
    }
    group.finish();
}

/// A short optimizer run end to end, exact mode at modest n.
fn gp_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp_fit");
    group.sample_size(10);
    let n = 120;
    let x = gaussian_inputs(n, 2, 8);
    let y = synthetic_targets(&x, 9);
    let options = FitOptions {
        steps: 10,
        ..FitOptions::default()
    };
    group.bench_function("exact_10_steps", |b| {
        b.iter(|| {
            let model = GpModel::init_from_data(
                &x,
                &y,
                KernelFamily::Rbf,
                InferenceMode::ExactDense,
                SkipSettings::default(),
            )
            .unwrap();
            model.fit(&x, &y, &options).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, toeplitz_mvm, ski_apply, skip_product, gp_mll, gp_fit);
criterion_main!(benches);
