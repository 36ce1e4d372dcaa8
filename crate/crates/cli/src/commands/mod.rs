pub mod bench;
pub mod fit;
pub mod multitask;
pub mod predict;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::report::Standardization;

pub fn rmse(predicted: &DVector<f64>, actual: &DVector<f64>) -> f64 {
    let n = predicted.len() as f64;
    (predicted
        .iter()
        .zip(actual.iter())
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / n)
        .sqrt()
}

pub fn mae(predicted: &DVector<f64>, actual: &DVector<f64>) -> f64 {
    let n = predicted.len() as f64;
    predicted
        .iter()
        .zip(actual.iter())
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / n
}

pub fn population_mean(values: &DVector<f64>) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn population_std(values: &DVector<f64>) -> f64 {
    let mu = population_mean(values);
    (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Deterministic shuffle split; the test set takes the rounded fraction and
/// the train set always keeps at least one row.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    if test_fraction <= 0.0 {
        return (order, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut test_count = ((n as f64) * test_fraction).round() as usize;
    test_count = test_count.min(n - 1);
    let test = order.split_off(n - test_count);
    let mut train = order;
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    (train, test)
}

pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select_elements(y: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| y[idx[i]])
}

/// Per-column standardization fitted on the training rows. Constant columns
/// keep a unit scale so the transform stays invertible.
pub fn fit_standardization(x: &DMatrix<f64>, y: &DVector<f64>) -> Standardization {
    let mut feature_means = Vec::with_capacity(x.ncols());
    let mut feature_stds = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = DVector::from_iterator(x.nrows(), x.column(j).iter().cloned());
        feature_means.push(population_mean(&col));
        let s = population_std(&col);
        feature_stds.push(if s > 0.0 { s } else { 1.0 });
    }
    let target_mean = population_mean(y);
    let s = population_std(y);
    Standardization {
        feature_means,
        feature_stds,
        target_mean,
        target_std: if s > 0.0 { s } else { 1.0 },
    }
}

pub fn standardize_features(x: &DMatrix<f64>, s: &Standardization) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        (x[(i, j)] - s.feature_means[j]) / s.feature_stds[j]
    })
}

pub fn standardize_targets(y: &DVector<f64>, s: &Standardization) -> DVector<f64> {
    y.map(|v| (v - s.target_mean) / s.target_std)
}

pub fn destandardize_mean(mean: &DVector<f64>, s: &Standardization) -> DVector<f64> {
    mean.map(|v| v * s.target_std + s.target_mean)
}

pub fn destandardize_variance(variance: &DVector<f64>, s: &Standardization) -> DVector<f64> {
    variance.map(|v| v * s.target_std * s.target_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_partitions_the_rows() {
        let (train_a, test_a) = split_indices(10, 0.3, 5);
        let (train_b, test_b) = split_indices(10, 0.3, 5);
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert_eq!(test_a.len(), 3);
        let mut all: Vec<usize> = train_a.iter().chain(test_a.iter()).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<usize>>());
    }

    #[test]
    fn zero_fraction_keeps_everything_in_train() {
        let (train, test) = split_indices(5, 0.0, 1);
        assert_eq!(train, vec![0, 1, 2, 3, 4]);
        assert!(test.is_empty());
    }

    #[test]
    fn standardization_round_trips() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![10.0, 20.0, 60.0]);
        let s = fit_standardization(&x, &y);
        let ys = standardize_targets(&y, &s);
        assert!((population_mean(&ys)).abs() < 1e-12);
        assert!((population_std(&ys) - 1.0).abs() < 1e-12);
        let back = destandardize_mean(&ys, &s);
        assert!((back - &y).abs().max() < 1e-12);
    }
}
