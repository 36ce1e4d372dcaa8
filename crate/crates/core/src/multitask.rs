//! Multi-task Gaussian processes with clustered task structure.
//!
//! Observations carry a task index. Task covariance is a coregionalization
//! matrix `M = BBᵀ + diag(κ)` lifted to observations by the one-hot
//! incidence `V`, so `V·M·Vᵀ` multiplies in O(n + sq) without ever being
//! formed. Combining that exact low-rank task side with a Lanczos factor of
//! the data kernel gives a fast multiply for `K_data ∘ (V M Vᵀ)`.
//!
//! The clustered model ties tasks together: covariance
//! `k_cluster·[same cluster] + k_indiv·[same task] + σ²·I`, with latent
//! cluster assignments sampled by Gibbs sweeps over their conditional
//! posteriors and kernel hyperparameters optimized between sweeps.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{InferenceMode, SkipSettings, LN_2PI};
use crate::kernels::KernelSpec;
use crate::krylov::{cg_solve, lanczos_decompose, slq_logdet};
use crate::linop::{LanczosFactor, LinearOperator};
use crate::optim::Adam;
use crate::rng::{stream_rng, unit_probe, LOGDET_SEED_MIX};
use crate::ski::SkiApproximation;

/// Maps each observation to its task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAssignment {
    task_of: Vec<usize>,
    num_tasks: usize,
}

impl TaskAssignment {
    pub fn new(task_of: Vec<usize>, num_tasks: usize) -> Result<Self> {
        if num_tasks == 0 {
            return Err(Error::InvalidArgument("need at least one task".into()));
        }
        if let Some(&bad) = task_of.iter().find(|&&t| t >= num_tasks) {
            return Err(Error::DimensionMismatch {
                expected: num_tasks,
                actual: bad,
            });
        }
        Ok(Self { task_of, num_tasks })
    }

    /// Builds from raw indices, inferring the task count.
    pub fn from_indices(task_of: Vec<usize>) -> Result<Self> {
        let num_tasks = task_of.iter().max().map_or(0, |m| m + 1);
        Self::new(task_of, num_tasks.max(1))
    }

    pub fn len(&self) -> usize {
        self.task_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_of.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn task(&self, i: usize) -> usize {
        self.task_of[i]
    }

    pub fn tasks(&self) -> &[usize] {
        &self.task_of
    }

    pub fn observations_of(&self, task: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.task_of[i] == task).collect()
    }

    /// Dense incidence matrix `V` (observations × tasks), for oracles.
    pub fn incidence_dense(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.len(), self.num_tasks);
        for (i, &t) in self.task_of.iter().enumerate() {
            v[(i, t)] = 1.0;
        }
        v
    }
}

/// Task covariance `M = BBᵀ + diag(κ)`, kept in factored form.
#[derive(Clone, Debug)]
pub struct Coregionalization {
    b: DMatrix<f64>,
    kappa: DVector<f64>,
}

impl Coregionalization {
    pub fn new(b: DMatrix<f64>, kappa: DVector<f64>) -> Result<Self> {
        if b.nrows() != kappa.len() {
            return Err(Error::DimensionMismatch {
                expected: b.nrows(),
                actual: kappa.len(),
            });
        }
        if kappa.iter().any(|k| *k < 0.0 || !k.is_finite()) {
            return Err(Error::InvalidArgument(
                "task variances must be nonnegative and finite".into(),
            ));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "task factor entries must be finite".into(),
            ));
        }
        Ok(Self { b, kappa })
    }

    pub fn num_tasks(&self) -> usize {
        self.b.nrows()
    }

    pub fn rank(&self) -> usize {
        self.b.ncols()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn kappa(&self) -> &DVector<f64> {
        &self.kappa
    }

    /// Dense `M`, for oracles and small problems.
    pub fn task_matrix(&self) -> DMatrix<f64> {
        let mut m = &self.b * self.b.transpose();
        for i in 0..self.kappa.len() {
            m[(i, i)] += self.kappa[i];
        }
        m
    }

    /// `M` with ones exactly where two tasks share a cluster: `B` is the
    /// one-hot cluster incidence, `κ = 0`.
    pub fn cluster_indicator(lambda: &[usize], num_clusters: usize) -> Result<Self> {
        if num_clusters == 0 {
            return Err(Error::InvalidArgument("need at least one cluster".into()));
        }
        let s = lambda.len();
        let mut b = DMatrix::zeros(s, num_clusters);
        for (t, &g) in lambda.iter().enumerate() {
            if g >= num_clusters {
                return Err(Error::DimensionMismatch {
                    expected: num_clusters,
                    actual: g,
                });
            }
            b[(t, g)] = 1.0;
        }
        Self::new(b, DVector::zeros(s))
    }

    /// `M = I`: every task only covaries with itself.
    pub fn task_indicator(num_tasks: usize) -> Self {
        Self {
            b: DMatrix::zeros(num_tasks, 0),
            kappa: DVector::from_element(num_tasks, 1.0),
        }
    }

    /// `M` all ones: a single shared signal across every task.
    pub fn fully_shared(num_tasks: usize) -> Self {
        Self {
            b: DMatrix::from_element(num_tasks, 1, 1.0),
            kappa: DVector::zeros(num_tasks),
        }
    }
}

/// `V·(M·(Vᵀ·v))` using the scatter/gather structure of the incidence and
/// the factored task matrix; O(n + sq) operations.
pub fn task_operator_mvm(
    assignment: &TaskAssignment,
    coreg: &Coregionalization,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    if coreg.num_tasks() != assignment.num_tasks() {
        return Err(Error::DimensionMismatch {
            expected: assignment.num_tasks(),
            actual: coreg.num_tasks(),
        });
    }
    let n = assignment.len();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    let s = assignment.num_tasks();
    let mut per_task = DVector::zeros(s);
    for i in 0..n {
        per_task[assignment.task(i)] += v[i];
    }
    let mut mixed = &coreg.b * (coreg.b.transpose() * &per_task);
    for t in 0..s {
        mixed[t] += coreg.kappa[t] * per_task[t];
    }
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] = mixed[assignment.task(i)];
    }
    Ok(out)
}

/// The lifted task covariance `V·M·Vᵀ` as an operator.
#[derive(Clone, Debug)]
pub struct TaskOperator {
    assignment: TaskAssignment,
    coreg: Coregionalization,
}

impl TaskOperator {
    pub fn new(assignment: TaskAssignment, coreg: Coregionalization) -> Result<Self> {
        if coreg.num_tasks() != assignment.num_tasks() {
            return Err(Error::DimensionMismatch {
                expected: assignment.num_tasks(),
                actual: coreg.num_tasks(),
            });
        }
        Ok(Self { assignment, coreg })
    }

    pub fn assignment(&self) -> &TaskAssignment {
        &self.assignment
    }

    pub fn coregionalization(&self) -> &Coregionalization {
        &self.coreg
    }
}

impl LinearOperator for TaskOperator {
    fn size(&self) -> usize {
        self.assignment.len()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        task_operator_mvm(&self.assignment, &self.coreg, v)
            .expect("dimensions validated at construction")
    }
}

/// `K_data ∘ (V·M·Vᵀ)`: the data side is a Lanczos factor, the task side is
/// applied exactly through its factored form, so no second Lanczos pass is
/// needed.
#[derive(Debug)]
pub struct MultitaskOperator {
    data_factor: LanczosFactor,
    task: TaskOperator,
}

impl MultitaskOperator {
    pub fn from_factor(data_factor: LanczosFactor, task: TaskOperator) -> Result<Self> {
        if data_factor.size() != task.size() {
            return Err(Error::DimensionMismatch {
                expected: task.size(),
                actual: data_factor.size(),
            });
        }
        Ok(Self { data_factor, task })
    }

    pub fn data_factor(&self) -> &LanczosFactor {
        &self.data_factor
    }

    pub fn task_operator(&self) -> &TaskOperator {
        &self.task
    }
}

/// Builds the product operator by Lanczos-decomposing the data kernel at
/// rank `r` with a probe derived from `probe_seed`.
pub fn multitask_operator(
    data_kernel: &dyn LinearOperator,
    assignment: TaskAssignment,
    coreg: Coregionalization,
    r: usize,
    probe_seed: u64,
) -> Result<MultitaskOperator> {
    let n = data_kernel.size();
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be positive".into()));
    }
    let probe = unit_probe(probe_seed, 0, n);
    let factor = lanczos_decompose(data_kernel, &probe, r.min(n))?;
    MultitaskOperator::from_factor(factor, TaskOperator::new(assignment, coreg)?)
}

impl LinearOperator for MultitaskOperator {
    fn size(&self) -> usize {
        self.data_factor.size()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        // Δ(Q T Qᵀ · D_v · VMVᵀ): scale Q's rows by v, push the r columns
        // through the exact task operator, multiply by T, and read out the
        // diagonal row by row.
        let n = self.size();
        let q = self.data_factor.q();
        let r = self.data_factor.rank();
        let mut scaled = q.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= v[i];
        }
        let mut task_side = DMatrix::zeros(n, r);
        for k in 0..r {
            let col = self.task.apply(&scaled.column(k).clone_owned());
            task_side.set_column(k, &col);
        }
        // out_i = q_i · T · (task_side row i)ᵀ, via one tridiagonal product.
        let t_cols = self.data_factor.t_mul_mat(&task_side.transpose());
        let mut out = DVector::zeros(n);
        for i in 0..n {
            out[i] = q.row(i).dot(&t_cols.column(i).transpose());
        }
        out
    }
}

/// One-dimensional observations grouped by task.
#[derive(Clone, Debug)]
pub struct TaskDataset {
    x: Vec<f64>,
    y: DVector<f64>,
    assignment: TaskAssignment,
}

impl TaskDataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, assignment: TaskAssignment) -> Result<Self> {
        if x.len() != y.len() || x.len() != assignment.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: y.len().min(assignment.len()),
            });
        }
        if x.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "dataset values must be finite".into(),
            ));
        }
        Ok(Self {
            x,
            y: DVector::from_vec(y),
            assignment,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.assignment.num_tasks()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.x
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn assignment(&self) -> &TaskAssignment {
        &self.assignment
    }

    pub fn mean_target(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.len() as f64
    }

    /// Appends the observations of one extra task and returns the extended
    /// dataset together with the new task's index.
    pub fn with_new_task(&self, x: &[f64], y: &[f64]) -> Result<(TaskDataset, usize)> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: y.len(),
            });
        }
        let new_task = self.num_tasks();
        let mut all_x = self.x.clone();
        all_x.extend_from_slice(x);
        let mut all_y: Vec<f64> = self.y.iter().cloned().collect();
        all_y.extend_from_slice(y);
        let mut task_of = self.assignment.tasks().to_vec();
        task_of.extend(std::iter::repeat_n(new_task, x.len()));
        let assignment = TaskAssignment::new(task_of, new_task + 1)?;
        Ok((TaskDataset::new(all_x, all_y, assignment)?, new_task))
    }

    /// Keeps only the observations whose index satisfies the predicate,
    /// preserving task numbering.
    pub fn filtered(&self, mut keep: impl FnMut(usize) -> bool) -> Result<TaskDataset> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut tasks = Vec::new();
        for i in 0..self.len() {
            if keep(i) {
                x.push(self.x[i]);
                y.push(self.y[i]);
                tasks.push(self.assignment.task(i));
            }
        }
        TaskDataset::new(x, y, TaskAssignment::new(tasks, self.num_tasks())?)
    }
}

/// Kernels and noise of the clustered model: one Matérn for the shared
/// cluster trend, one for per-task deviations.
#[derive(Clone, Debug)]
pub struct ClusterHyperparameters {
    pub cluster_kernel: KernelSpec,
    pub individual_kernel: KernelSpec,
    pub noise_variance: f64,
}

impl ClusterHyperparameters {
    pub fn new(
        cluster_kernel: KernelSpec,
        individual_kernel: KernelSpec,
        noise_variance: f64,
    ) -> Result<Self> {
        for k in [&cluster_kernel, &individual_kernel] {
            k.validate()?;
            if k.lengthscales.len() != 1 {
                return Err(Error::InvalidArgument(
                    "cluster model kernels are one-dimensional".into(),
                ));
            }
        }
        if !noise_variance.is_finite() || noise_variance <= 0.0 {
            return Err(Error::InvalidArgument(
                "noise variance must be positive and finite".into(),
            ));
        }
        Ok(Self {
            cluster_kernel,
            individual_kernel,
            noise_variance,
        })
    }

    pub fn matern(
        cluster_lengthscale: f64,
        cluster_outputscale: f64,
        individual_lengthscale: f64,
        individual_outputscale: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        Self::new(
            KernelSpec::matern52(vec![cluster_lengthscale], cluster_outputscale)?,
            KernelSpec::matern52(vec![individual_lengthscale], individual_outputscale)?,
            noise_variance,
        )
    }

    fn log_hypers(&self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.cluster_kernel.lengthscales[0].ln(),
            self.cluster_kernel.outputscale.ln(),
            self.individual_kernel.lengthscales[0].ln(),
            self.individual_kernel.outputscale.ln(),
            self.noise_variance.ln(),
        ])
    }

    fn with_log_hypers(&self, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != 5 {
            return Err(Error::DimensionMismatch {
                expected: 5,
                actual: flat.len(),
            });
        }
        Self::new(
            KernelSpec::new(self.cluster_kernel.family, vec![flat[0].exp()], flat[1].exp())?,
            KernelSpec::new(
                self.individual_kernel.family,
                vec![flat[2].exp()],
                flat[3].exp(),
            )?,
            flat[4].exp(),
        )
    }
}

/// Cluster assignment per task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterState {
    lambda: Vec<usize>,
    num_clusters: usize,
}

impl ClusterState {
    pub fn new(lambda: Vec<usize>, num_clusters: usize) -> Result<Self> {
        if num_clusters == 0 {
            return Err(Error::InvalidArgument("need at least one cluster".into()));
        }
        if let Some(&bad) = lambda.iter().find(|&&g| g >= num_clusters) {
            return Err(Error::DimensionMismatch {
                expected: num_clusters,
                actual: bad,
            });
        }
        Ok(Self {
            lambda,
            num_clusters,
        })
    }

    /// Uniform random initialization.
    pub fn random(num_tasks: usize, num_clusters: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if num_clusters == 0 {
            return Err(Error::InvalidArgument("need at least one cluster".into()));
        }
        let lambda = (0..num_tasks)
            .map(|_| rng.random_range(0..num_clusters))
            .collect();
        Self::new(lambda, num_clusters)
    }

    pub fn lambda(&self) -> &[usize] {
        &self.lambda
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_tasks(&self) -> usize {
        self.lambda.len()
    }
}

/// The clustered multi-task model: hyperparameters plus inference settings.
#[derive(Clone, Debug)]
pub struct ClusterModel {
    pub hyperparameters: ClusterHyperparameters,
    pub constant_mean: f64,
    pub inference_mode: InferenceMode,
    pub skip_settings: SkipSettings,
}

impl ClusterModel {
    pub fn new(
        hyperparameters: ClusterHyperparameters,
        constant_mean: f64,
        inference_mode: InferenceMode,
        skip_settings: SkipSettings,
    ) -> Result<Self> {
        if !constant_mean.is_finite() {
            return Err(Error::InvalidArgument("mean must be finite".into()));
        }
        Ok(Self {
            hyperparameters,
            constant_mean,
            inference_mode,
            skip_settings,
        })
    }

    fn kernel_value(&self, spec: &KernelSpec, a: f64, b: f64) -> f64 {
        spec.eval1d(a, b)
    }

    /// Dense covariance of the dataset under an assignment, without noise.
    fn dense_covariance(&self, data: &TaskDataset, state: &ClusterState) -> DMatrix<f64> {
        let n = data.len();
        let hp = &self.hyperparameters;
        let tasks = data.assignment().tasks();
        DMatrix::from_fn(n, n, |i, j| {
            let mut v = 0.0;
            if state.lambda[tasks[i]] == state.lambda[tasks[j]] {
                v += self.kernel_value(&hp.cluster_kernel, data.x[i], data.x[j]);
            }
            if tasks[i] == tasks[j] {
                v += self.kernel_value(&hp.individual_kernel, data.x[i], data.x[j]);
            }
            v
        })
    }

    /// Marginal log likelihood of the dataset under an assignment.
    ///
    /// The exact route assembles the dense covariance and factorizes it. The
    /// matrix-free route expresses both delta terms as data-kernel Hadamard
    /// products with exact task operators and runs conjugate gradients plus
    /// stochastic Lanczos quadrature.
    pub fn mll(&self, data: &TaskDataset, state: &ClusterState) -> Result<f64> {
        if state.num_tasks() != data.num_tasks() {
            return Err(Error::DimensionMismatch {
                expected: data.num_tasks(),
                actual: state.num_tasks(),
            });
        }
        let n = data.len();
        let residual = data.y.map(|v| v - self.constant_mean);
        let constant_term = -(n as f64) / 2.0 * LN_2PI;
        match self.inference_mode {
            InferenceMode::ExactDense => {
                let mut k = self.dense_covariance(data, state);
                for i in 0..n {
                    k[(i, i)] += self.hyperparameters.noise_variance;
                }
                let chol = Cholesky::new(k).ok_or_else(|| {
                    Error::FactorizationFailed(
                        "cluster covariance is not positive definite".into(),
                    )
                })?;
                let alpha = chol.solve(&residual);
                let logdet: f64 =
                    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                Ok(-0.5 * residual.dot(&alpha) - 0.5 * logdet + constant_term)
            }
            InferenceMode::Skip => {
                let op = self.skip_covariance(data, state)?;
                let s = &self.skip_settings;
                let cg = cg_solve(&op, &residual, s.cg_tolerance, s.max_cg_iterations)?;
                if !cg.converged {
                    return Err(Error::CgDidNotConverge {
                        residual: cg.final_relative_residual,
                        iterations: cg.iterations,
                    });
                }
                let slq = slq_logdet(
                    &op,
                    s.num_probes,
                    s.rank.min(n),
                    s.probe_seed ^ LOGDET_SEED_MIX,
                )?;
                Ok(-0.5 * residual.dot(&cg.solution) - 0.5 * slq.logdet + constant_term)
            }
        }
    }

    fn skip_covariance(
        &self,
        data: &TaskDataset,
        state: &ClusterState,
    ) -> Result<ClusterCovarianceOperator> {
        let hp = &self.hyperparameters;
        let s = &self.skip_settings;
        let ski_cluster = SkiApproximation::new(&hp.cluster_kernel, &data.x, s.grid_size)?;
        let ski_indiv = SkiApproximation::new(&hp.individual_kernel, &data.x, s.grid_size)?;
        let cluster_term = multitask_operator(
            &ski_cluster,
            data.assignment().clone(),
            Coregionalization::cluster_indicator(&state.lambda, state.num_clusters)?,
            s.rank,
            s.probe_seed,
        )?;
        let individual_term = multitask_operator(
            &ski_indiv,
            data.assignment().clone(),
            Coregionalization::task_indicator(data.num_tasks()),
            s.rank,
            s.probe_seed.wrapping_add(1),
        )?;
        Ok(ClusterCovarianceOperator {
            cluster_term,
            individual_term,
            noise: hp.noise_variance,
        })
    }
}

/// Sum of the two Hadamard terms plus observation noise.
pub struct ClusterCovarianceOperator {
    cluster_term: MultitaskOperator,
    individual_term: MultitaskOperator,
    noise: f64,
}

impl LinearOperator for ClusterCovarianceOperator {
    fn size(&self) -> usize {
        self.cluster_term.size()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.cluster_term.apply(v);
        out += self.individual_term.apply(v);
        out.axpy(self.noise, v, 1.0);
        out
    }
}

/// Result of one Gibbs sweep over all task assignments.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub state: ClusterState,
    /// Number of marginal-likelihood evaluations performed; always the task
    /// count times the cluster count.
    pub mll_evaluations: usize,
    /// Normalized conditional posterior over clusters for each task, in
    /// scan order.
    pub task_weights: Vec<Vec<f64>>,
    /// Marginal log likelihood of the sampled final state, reused from the
    /// last task's candidate evaluations.
    pub final_mll: f64,
}

/// One pass resampling every task's cluster from its conditional posterior.
///
/// For each task in order, the likelihood of every candidate cluster is
/// evaluated with all other assignments fixed, combined with the uniform
/// prior by a softmax in log space, and sampled. Exactly `clusters × tasks`
/// likelihood evaluations are performed.
pub fn gibbs_sweep(
    model: &ClusterModel,
    data: &TaskDataset,
    state: &ClusterState,
    rng: &mut ChaCha8Rng,
) -> Result<SweepOutcome> {
    let s = state.num_tasks();
    let c = state.num_clusters();
    if s != data.num_tasks() {
        return Err(Error::DimensionMismatch {
            expected: data.num_tasks(),
            actual: s,
        });
    }
    let mut lambda = state.lambda().to_vec();
    let mut evaluations = 0;
    let mut task_weights = Vec::with_capacity(s);
    let mut final_mll = f64::NAN;

    for task in 0..s {
        let mut log_liks = Vec::with_capacity(c);
        for candidate in 0..c {
            let mut trial = lambda.clone();
            trial[task] = candidate;
            let trial_state = ClusterState::new(trial, c)?;
            log_liks.push(model.mll(data, &trial_state)?);
            evaluations += 1;
        }
        let max = log_liks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = log_liks.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        let weights: Vec<f64> = unnorm.iter().map(|w| w / z).collect();

        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = c - 1;
        for (a, &w) in weights.iter().enumerate() {
            acc += w;
            if draw < acc {
                chosen = a;
                break;
            }
        }
        lambda[task] = chosen;
        final_mll = log_liks[chosen];
        task_weights.push(weights);
    }

    Ok(SweepOutcome {
        state: ClusterState::new(lambda, c)?,
        mll_evaluations: evaluations,
        task_weights,
        final_mll,
    })
}

/// Per-sweep trace record, serializable as a JSON line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub lambda: Vec<usize>,
    pub mll: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ClusterFitOptions {
    pub sweeps: usize,
    /// Sweeps to run before hyperparameter updates begin.
    pub burn_in: usize,
    /// ADAM steps on the kernel hyperparameters between consecutive sweeps.
    pub adam_steps_per_sweep: usize,
    pub learning_rate: f64,
    pub fd_step: f64,
    pub optimize_hyperparameters: bool,
    pub seed: u64,
}

impl Default for ClusterFitOptions {
    fn default() -> Self {
        Self {
            sweeps: 20,
            burn_in: 5,
            adam_steps_per_sweep: 5,
            learning_rate: 0.1,
            fd_step: 1e-4,
            optimize_hyperparameters: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClusterFitResult {
    pub model: ClusterModel,
    pub state: ClusterState,
    pub trace: Vec<SweepRecord>,
}

/// Alternates blocked inference: a few ADAM steps on the kernel
/// hyperparameters at the current assignment, then one Gibbs sweep over the
/// assignments. Hyperparameter updates wait out the burn-in sweeps so the
/// labels settle first.
pub fn fit_clusters(
    model: &ClusterModel,
    data: &TaskDataset,
    num_clusters: usize,
    options: &ClusterFitOptions,
) -> Result<ClusterFitResult> {
    if options.sweeps == 0 {
        return Err(Error::InvalidArgument("need at least one sweep".into()));
    }
    let mut rng = stream_rng(options.seed, 0);
    let mut state = ClusterState::random(data.num_tasks(), num_clusters, &mut rng)?;
    let mut current = model.clone();
    let mut adam = Adam::new(5, options.learning_rate)?;
    let mut trace = Vec::with_capacity(options.sweeps);

    for sweep in 0..options.sweeps {
        if options.optimize_hyperparameters && sweep >= options.burn_in {
            for _ in 0..options.adam_steps_per_sweep {
                let mut flat = current.hyperparameters.log_hypers();
                let mut gradient = DVector::zeros(5);
                for i in 0..5 {
                    let mut plus = flat.clone();
                    plus[i] += options.fd_step;
                    let mut minus = flat.clone();
                    minus[i] -= options.fd_step;
                    let up = current.with_hypers(&plus)?.mll(data, &state)?;
                    let down = current.with_hypers(&minus)?.mll(data, &state)?;
                    // Ascent on the likelihood via descent on its negation.
                    gradient[i] = -(up - down) / (2.0 * options.fd_step);
                }
                adam.step(&mut flat, &gradient)?;
                current.hyperparameters = current.hyperparameters.with_log_hypers(&flat)?;
            }
        }
        let outcome = gibbs_sweep(&current, data, &state, &mut rng)?;
        state = outcome.state;
        trace.push(SweepRecord {
            sweep,
            lambda: state.lambda().to_vec(),
            mll: outcome.final_mll,
        });
    }

    Ok(ClusterFitResult {
        model: current,
        state,
        trace,
    })
}

impl ClusterModel {
    fn with_hypers(&self, flat: &DVector<f64>) -> Result<ClusterModel> {
        Ok(ClusterModel {
            hyperparameters: self.hyperparameters.with_log_hypers(flat)?,
            constant_mean: self.constant_mean,
            inference_mode: self.inference_mode,
            skip_settings: self.skip_settings,
        })
    }

    /// Posterior mean and variance for one existing task at new inputs,
    /// using the dense covariance of the full dataset.
    pub fn predict_existing_task(
        &self,
        data: &TaskDataset,
        state: &ClusterState,
        task: usize,
        query_x: &[f64],
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if task >= data.num_tasks() {
            return Err(Error::DimensionMismatch {
                expected: data.num_tasks(),
                actual: task,
            });
        }
        let n = data.len();
        let hp = &self.hyperparameters;
        let mut k = self.dense_covariance(data, state);
        for i in 0..n {
            k[(i, i)] += hp.noise_variance;
        }
        let chol = Cholesky::new(k).ok_or_else(|| {
            Error::FactorizationFailed("cluster covariance is not positive definite".into())
        })?;
        let residual = data.y.map(|v| v - self.constant_mean);
        let alpha = chol.solve(&residual);

        let cluster = state.lambda()[task];
        let tasks = data.assignment().tasks();
        let prior = hp.cluster_kernel.outputscale + hp.individual_kernel.outputscale;
        let mut mean = DVector::zeros(query_x.len());
        let mut variance = DVector::zeros(query_x.len());
        for (j, &q) in query_x.iter().enumerate() {
            let cross = DVector::from_fn(n, |i, _| {
                let mut v = 0.0;
                if state.lambda()[tasks[i]] == cluster {
                    v += self.kernel_value(&hp.cluster_kernel, q, data.x[i]);
                }
                if tasks[i] == task {
                    v += self.kernel_value(&hp.individual_kernel, q, data.x[i]);
                }
                v
            });
            mean[j] = self.constant_mean + cross.dot(&alpha);
            let solved = chol.solve(&cross);
            variance[j] = (prior - cross.dot(&solved)).max(0.0);
        }
        Ok((mean, variance))
    }

    /// Prediction for a new task from a few revealed observations.
    ///
    /// The new task's data is appended under each candidate cluster in turn;
    /// the resulting marginal likelihoods, normalized in log space, give the
    /// cluster membership. The returned mean and variance are the
    /// membership-weighted mixture of the per-cluster posteriors. With no
    /// revealed observations the membership is uniform and the prediction is
    /// the prior.
    pub fn predict_task(
        &self,
        data: &TaskDataset,
        state: &ClusterState,
        revealed_x: &[f64],
        revealed_y: &[f64],
        query_x: &[f64],
    ) -> Result<TaskPrediction> {
        let c = state.num_clusters();
        let hp = &self.hyperparameters;
        let prior_var = hp.cluster_kernel.outputscale + hp.individual_kernel.outputscale;

        if revealed_x.is_empty() {
            return Ok(TaskPrediction {
                mean: DVector::from_element(query_x.len(), self.constant_mean),
                variance: DVector::from_element(query_x.len(), prior_var),
                membership: vec![1.0 / c as f64; c],
            });
        }

        let (extended, new_task) = data.with_new_task(revealed_x, revealed_y)?;
        let mut log_liks = Vec::with_capacity(c);
        let mut per_cluster: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(c);
        for candidate in 0..c {
            let mut lambda = state.lambda().to_vec();
            lambda.push(candidate);
            let cand_state = ClusterState::new(lambda, c)?;
            log_liks.push(self.mll(&extended, &cand_state)?);
            per_cluster.push(self.predict_existing_task(
                &extended,
                &cand_state,
                new_task,
                query_x,
            )?);
        }

        let max = log_liks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = log_liks.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        let membership: Vec<f64> = unnorm.iter().map(|w| w / z).collect();

        let k = query_x.len();
        let mut mean: DVector<f64> = DVector::zeros(k);
        let mut second_moment: DVector<f64> = DVector::zeros(k);
        for (w, (m, v)) in membership.iter().zip(&per_cluster) {
            for j in 0..k {
                mean[j] += w * m[j];
                second_moment[j] += w * (v[j] + m[j] * m[j]);
            }
        }
        let mut variance = DVector::zeros(k);
        for j in 0..k {
            variance[j] = (second_moment[j] - mean[j] * mean[j]).max(0.0);
        }
        Ok(TaskPrediction {
            mean,
            variance,
            membership,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TaskPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    /// Posterior probability of each cluster for the queried task.
    pub membership: Vec<f64>,
}

/// Adjusted Rand index between two clusterings of the same items; 1 for
/// identical partitions (up to label permutation), near 0 for independent
/// ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two items to compare clusterings".into(),
        ));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut contingency = vec![vec![0u64; kb]; ka];
    for (&i, &j) in a.iter().zip(b.iter()) {
        contingency[i][j] += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = contingency
        .iter()
        .flat_map(|row| row.iter())
        .map(|&x| choose2(x))
        .sum();
    let sum_a: f64 = contingency
        .iter()
        .map(|row| choose2(row.iter().sum()))
        .sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(contingency.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-15 {
        // Both partitions are single clusters; they agree trivially.
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / (max_index - expected))
}

/// Synthetic growth-curve benchmark: tasks fall into clusters that share a
/// linear-plus-seasonal trend, each task adds a smooth offset, observations
/// add white noise. Returns the dataset and the true cluster of each task.
pub fn generate_growth_curves(
    seed: u64,
    num_tasks: usize,
    num_clusters: usize,
    obs_per_task: usize,
) -> Result<(TaskDataset, Vec<usize>)> {
    if num_tasks == 0 || num_clusters == 0 || obs_per_task == 0 {
        return Err(Error::InvalidArgument(
            "tasks, clusters, and observations must all be positive".into(),
        ));
    }
    let slopes = [0.2, 0.5, 0.8, 0.35, 0.65];
    let bases = [1.0, 3.0, 5.0, 2.0, 4.0];
    if num_clusters > slopes.len() {
        return Err(Error::InvalidArgument(format!(
            "at most {} clusters supported by the generator",
            slopes.len()
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut tasks = Vec::new();
    let mut truth = Vec::with_capacity(num_tasks);
    for task in 0..num_tasks {
        let g = task % num_clusters;
        truth.push(g);
        let mut x: Vec<f64> = (0..obs_per_task)
            .map(|_| rng.random_range(0.0..10.0))
            .collect();
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let task_offset: f64 = 0.25 * rng.sample::<f64, _>(StandardNormal);
        let phase: f64 = rng.random_range(0.0..6.0);
        for &xi in &x {
            let trend = bases[g] + slopes[g] * xi + 0.6 * (0.5 * xi + g as f64).sin();
            let indiv = task_offset + 0.2 * (0.8 * xi + phase).sin();
            let noise: f64 = 0.1 * rng.sample::<f64, _>(StandardNormal);
            ys.push(trend + indiv + noise);
            tasks.push(task);
        }
        xs.extend(x);
    }
    let dataset = TaskDataset::new(xs, ys, TaskAssignment::new(tasks, num_tasks)?)?;
    Ok((dataset, truth))
}
