//! Gaussian-process regression: marginal likelihood, training, prediction.
//!
//! Two inference backends share one model type. `ExactDense` forms the
//! covariance matrix and uses a Cholesky factorization, which is the oracle
//! path for small n. `Skip` never forms the matrix: the product kernel is
//! interpolated per dimension onto grids, compressed into a [`SkipTree`],
//! and all linear algebra runs through conjugate gradients and stochastic
//! Lanczos quadrature.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, KernelFamily, KernelSpec, ProductKernelSpec};
use crate::krylov::{cg_solve, slq_logdet};
use crate::linop::{LinearOperator, ShiftedOperator};
use crate::optim::Adam;
use crate::ski::{interpolation_weights, Grid1D, SkiApproximation};
use crate::skip::{skip_decompose, SkipTree};

use crate::rng::LOGDET_SEED_MIX;

/// Observation noise is floored at this fraction of the target variance so
/// the shifted system stays well conditioned.
pub const NOISE_FLOOR_FACTOR: f64 = 1e-6;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    ExactDense,
    Skip,
}

/// Parameters of the matrix-free backend. Fields omitted from a serialized
/// form fall back to the defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipSettings {
    /// Grid nodes per input dimension.
    pub grid_size: usize,
    /// Lanczos rank budget for the product decomposition and for the
    /// log-determinant quadrature.
    pub rank: usize,
    /// Seed all probe vectors derive from.
    pub probe_seed: u64,
    /// Probe count for the log-determinant estimator.
    pub num_probes: usize,
    /// Relative residual at which conjugate gradients stops.
    pub cg_tolerance: f64,
    pub max_cg_iterations: usize,
}

impl Default for SkipSettings {
    fn default() -> Self {
        Self {
            grid_size: 100,
            rank: 100,
            probe_seed: 0,
            num_probes: 30,
            cg_tolerance: 1e-8,
            max_cg_iterations: 1000,
        }
    }
}

/// Either a plain kernel over all input dimensions or an explicit product of
/// one-dimensional components.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKernel {
    Single(KernelSpec),
    Product(ProductKernelSpec),
}

impl ModelKernel {
    fn validate_for_dim(&self, d: usize) -> Result<()> {
        match self {
            ModelKernel::Single(k) => {
                k.validate()?;
                if k.active_dimension.is_some() {
                    return Err(Error::InvalidArgument(
                        "a model kernel must consume the whole input vector".into(),
                    ));
                }
                if k.lengthscales.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: k.lengthscales.len(),
                    });
                }
            }
            ModelKernel::Product(p) => {
                for c in p.components() {
                    let dim = c.active_dimension.expect("validated at construction");
                    if dim >= d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            actual: dim,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn eval_between(&self, x: &DMatrix<f64>, i: usize, z: &DMatrix<f64>, j: usize) -> f64 {
        match self {
            ModelKernel::Single(k) => k.eval_between(x, i, z, j),
            ModelKernel::Product(p) => p.eval_between(x, i, z, j),
        }
    }

    pub fn diagonal_value(&self) -> f64 {
        match self {
            ModelKernel::Single(k) => k.diagonal_value(),
            ModelKernel::Product(p) => p.diagonal_value(),
        }
    }

    pub fn matrix(&self, x: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ModelKernel::Single(k) => kernel_matrix(k, x, z),
            ModelKernel::Product(p) => p.kernel_matrix(x, z),
        }
    }

    /// One-dimensional components for the interpolation backend.
    fn product_components(&self) -> Result<Vec<KernelSpec>> {
        match self {
            ModelKernel::Single(k) => Ok(k.decompose_product()?.components().to_vec()),
            ModelKernel::Product(p) => Ok(p.components().to_vec()),
        }
    }

    fn num_lengthscales(&self) -> usize {
        match self {
            ModelKernel::Single(k) => k.lengthscales.len(),
            ModelKernel::Product(p) => p.num_components(),
        }
    }

    /// Flattens trainable hyperparameters (lengthscales and the overall
    /// outputscale) into log space. For a product kernel the outputscale is
    /// the product of the component scales.
    fn log_hypers(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_lengthscales() + 1);
        match self {
            ModelKernel::Single(k) => {
                out.extend(k.lengthscales.iter().map(|l| l.ln()));
                out.push(k.outputscale.ln());
            }
            ModelKernel::Product(p) => {
                out.extend(p.components().iter().map(|c| c.lengthscales[0].ln()));
                out.push(p.components().iter().map(|c| c.outputscale).product::<f64>().ln());
            }
        }
        out
    }

    /// Rebuilds the kernel from the flattened log-hyperparameters, keeping
    /// its structure. A product kernel puts the outputscale on its first
    /// component.
    fn with_log_hypers(&self, hypers: &[f64]) -> Result<ModelKernel> {
        let p = self.num_lengthscales();
        if hypers.len() != p + 1 {
            return Err(Error::DimensionMismatch {
                expected: p + 1,
                actual: hypers.len(),
            });
        }
        match self {
            ModelKernel::Single(k) => {
                let lengthscales = hypers[..p].iter().map(|h| h.exp()).collect();
                Ok(ModelKernel::Single(KernelSpec::new(
                    k.family,
                    lengthscales,
                    hypers[p].exp(),
                )?))
            }
            ModelKernel::Product(prod) => {
                let components = prod
                    .components()
                    .iter()
                    .enumerate()
                    .map(|(c, spec)| {
                        KernelSpec::component(
                            spec.family,
                            spec.active_dimension.expect("validated at construction"),
                            hypers[c].exp(),
                            if c == 0 { hypers[p].exp() } else { 1.0 },
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ModelKernel::Product(ProductKernelSpec::new(components)?))
            }
        }
    }
}

/// A Gaussian-process regression model with constant mean and Gaussian
/// observation noise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpModel {
    pub kernel: ModelKernel,
    pub noise_variance: f64,
    pub constant_mean: f64,
    pub inference_mode: InferenceMode,
    pub skip_settings: SkipSettings,
}

/// Term-by-term breakdown of one marginal-log-likelihood evaluation, with
/// wall time per phase so the cost of decomposition vs solves is visible.
#[derive(Clone, Debug, Serialize)]
pub struct MllBreakdown {
    pub value: f64,
    pub quadratic_term: f64,
    pub logdet_term: f64,
    pub constant_term: f64,
    pub cg_iterations: usize,
    pub clamped_ritz_values: usize,
    pub decompose_seconds: f64,
    pub solve_seconds: f64,
    pub logdet_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct MllGradient {
    /// Objective value at the evaluation point.
    pub value: f64,
    /// Gradient over `[log lengthscales.., log outputscale, log noise]`.
    pub gradient: DVector<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub learning_rate: f64,
    pub steps: usize,
    /// Central-difference step in log-hyperparameter space.
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            steps: 100,
            fd_step: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: GpModel,
    /// Objective value before each step, then once more after the last.
    pub trace: Vec<f64>,
    pub best_mll: f64,
    pub best_step: usize,
}

fn mean_of(y: &DVector<f64>) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

fn population_variance(y: &DVector<f64>) -> f64 {
    let mu = mean_of(y);
    y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / y.len() as f64
}

impl GpModel {
    pub fn new(
        kernel: ModelKernel,
        noise_variance: f64,
        constant_mean: f64,
        inference_mode: InferenceMode,
        skip_settings: SkipSettings,
    ) -> Result<Self> {
        if !noise_variance.is_finite() || noise_variance <= 0.0 {
            return Err(Error::InvalidArgument(
                "noise variance must be positive and finite".into(),
            ));
        }
        if !constant_mean.is_finite() {
            return Err(Error::InvalidArgument("mean must be finite".into()));
        }
        Ok(Self {
            kernel,
            noise_variance,
            constant_mean,
            inference_mode,
            skip_settings,
        })
    }

    /// Data-driven initialization: per-dimension lengthscale from the input
    /// standard deviations, outputscale from the target variance, noise at a
    /// tenth of it, and the constant mean at the target mean.
    pub fn init_from_data(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        family: KernelFamily,
        inference_mode: InferenceMode,
        skip_settings: SkipSettings,
    ) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("empty training inputs".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        let var_y = {
            let v = population_variance(y);
            if v > 0.0 { v } else { 1.0 }
        };
        let lengthscales: Vec<f64> = (0..x.ncols())
            .map(|c| {
                let col = DVector::from_iterator(x.nrows(), x.column(c).iter().cloned());
                let s = population_variance(&col).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        let kernel = ModelKernel::Single(KernelSpec::new(family, lengthscales, var_y)?);
        Self::new(
            kernel,
            0.1 * var_y,
            mean_of(y),
            inference_mode,
            skip_settings,
        )
    }

    fn effective_noise(&self, y: &DVector<f64>) -> f64 {
        self.noise_variance.max(NOISE_FLOOR_FACTOR * population_variance(y))
    }

    fn check_data(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("need at least one observation".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        self.kernel.validate_for_dim(x.ncols())
    }

    /// Marginal log likelihood of the targets under the model.
    pub fn mll(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(self.mll_instrumented(x, y)?.value)
    }

    pub fn mll_instrumented(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<MllBreakdown> {
        self.check_data(x, y)?;
        let n = x.nrows();
        let noise = self.effective_noise(y);
        let residual = y.map(|v| v - self.constant_mean);
        let constant_term = -(n as f64) / 2.0 * LN_2PI;

        match self.inference_mode {
            InferenceMode::ExactDense => {
                let tick = Instant::now();
                let mut k = self.kernel.matrix(x, x);
                for i in 0..n {
                    k[(i, i)] += noise;
                }
                let chol = Cholesky::new(k).ok_or_else(|| {
                    Error::FactorizationFailed(
                        "covariance matrix is not positive definite".into(),
                    )
                })?;
                let decompose_seconds = tick.elapsed().as_secs_f64();

                let tick = Instant::now();
                let alpha = chol.solve(&residual);
                let quadratic_term = -0.5 * residual.dot(&alpha);
                let solve_seconds = tick.elapsed().as_secs_f64();

                let tick = Instant::now();
                let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let logdet_term = -0.5 * logdet;
                let logdet_seconds = tick.elapsed().as_secs_f64();

                Ok(MllBreakdown {
                    value: quadratic_term + logdet_term + constant_term,
                    quadratic_term,
                    logdet_term,
                    constant_term,
                    cg_iterations: 0,
                    clamped_ritz_values: 0,
                    decompose_seconds,
                    solve_seconds,
                    logdet_seconds,
                })
            }
            InferenceMode::Skip => {
                let s = &self.skip_settings;
                let tick = Instant::now();
                let ops = SkipOps::build(&self.kernel, x, s)?;
                let decompose_seconds = tick.elapsed().as_secs_f64();
                let shifted = ShiftedOperator::new(&ops.tree, noise);

                let tick = Instant::now();
                let cg = cg_solve(&shifted, &residual, s.cg_tolerance, s.max_cg_iterations)?;
                if !cg.converged {
                    return Err(Error::CgDidNotConverge {
                        residual: cg.final_relative_residual,
                        iterations: cg.iterations,
                    });
                }
                let quadratic_term = -0.5 * residual.dot(&cg.solution);
                let solve_seconds = tick.elapsed().as_secs_f64();

                let tick = Instant::now();
                let slq = slq_logdet(
                    &shifted,
                    s.num_probes,
                    s.rank.min(n),
                    s.probe_seed ^ LOGDET_SEED_MIX,
                )?;
                let logdet_term = -0.5 * slq.logdet;
                let logdet_seconds = tick.elapsed().as_secs_f64();

                Ok(MllBreakdown {
                    value: quadratic_term + logdet_term + constant_term,
                    quadratic_term,
                    logdet_term,
                    constant_term,
                    cg_iterations: cg.iterations,
                    clamped_ritz_values: slq.clamped_ritz_count,
                    decompose_seconds,
                    solve_seconds,
                    logdet_seconds,
                })
            }
        }
    }

    /// Current hyperparameters in optimizer coordinates: log lengthscales,
    /// log outputscale, then log noise variance.
    pub fn log_hypers(&self) -> DVector<f64> {
        let mut flat = self.kernel.log_hypers();
        flat.push(self.noise_variance.ln());
        DVector::from_vec(flat)
    }

    fn with_log_hypers(&self, flat: &DVector<f64>) -> Result<GpModel> {
        let slice = flat.as_slice();
        let (kernel_part, noise_part) = slice.split_at(slice.len() - 1);
        let kernel = self.kernel.with_log_hypers(kernel_part)?;
        GpModel::new(
            kernel,
            noise_part[0].exp(),
            self.constant_mean,
            self.inference_mode,
            self.skip_settings,
        )
    }

    /// Central finite differences of the marginal log likelihood over the
    /// log-hyperparameters. Probe and solver seeds are identical on both
    /// sides of every difference, so the stochastic parts of the estimator
    /// cancel instead of polluting the gradient.
    pub fn mll_gradient(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        fd_step: f64,
    ) -> Result<MllGradient> {
        if !fd_step.is_finite() || fd_step <= 0.0 {
            return Err(Error::InvalidArgument(
                "finite-difference step must be positive".into(),
            ));
        }
        let value = self.mll(x, y)?;
        let center = self.log_hypers();
        let mut gradient = DVector::zeros(center.len());
        for i in 0..center.len() {
            let mut plus = center.clone();
            plus[i] += fd_step;
            let mut minus = center.clone();
            minus[i] -= fd_step;
            let up = self.with_log_hypers(&plus)?.mll(x, y)?;
            let down = self.with_log_hypers(&minus)?.mll(x, y)?;
            gradient[i] = (up - down) / (2.0 * fd_step);
        }
        Ok(MllGradient { value, gradient })
    }

    /// Maximizes the marginal log likelihood with ADAM in log-hyperparameter
    /// space and returns the best hyperparameters seen along the trace.
    pub fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>, options: &FitOptions) -> Result<FitResult> {
        if options.steps == 0 {
            return Err(Error::InvalidArgument(
                "training needs at least one step".into(),
            ));
        }
        let mut flat = self.log_hypers();
        let mut adam = Adam::new(flat.len(), options.learning_rate)?;
        let mut trace = Vec::with_capacity(options.steps + 1);
        let mut best_mll = f64::NEG_INFINITY;
        let mut best_flat = flat.clone();
        let mut best_step = 0;

        for step in 0..options.steps {
            let grad = self
                .with_log_hypers(&flat)?
                .mll_gradient(x, y, options.fd_step)?;
            if step == 0 && !grad.value.is_finite() {
                return Err(Error::InvalidArgument(
                    "marginal log likelihood is not finite at initialization".into(),
                ));
            }
            trace.push(grad.value);
            if grad.value > best_mll {
                best_mll = grad.value;
                best_flat = flat.clone();
                best_step = step;
            }
            let ascent = -&grad.gradient;
            adam.step(&mut flat, &ascent)?;
        }
        let final_value = self.with_log_hypers(&flat)?.mll(x, y)?;
        trace.push(final_value);
        if final_value > best_mll {
            best_mll = final_value;
            best_flat = flat;
            best_step = options.steps;
        }

        Ok(FitResult {
            model: self.with_log_hypers(&best_flat)?,
            trace,
            best_mll,
            best_step,
        })
    }

    /// Solves for the representer weights and caches whatever the backend
    /// needs to answer predictions.
    pub fn posterior(&self, x: DMatrix<f64>, y: DVector<f64>) -> Result<TrainedPosterior> {
        self.check_data(&x, &y)?;
        let noise = self.effective_noise(&y);
        let residual = y.map(|v| v - self.constant_mean);
        let backend = match self.inference_mode {
            InferenceMode::ExactDense => {
                let n = x.nrows();
                let mut k = self.kernel.matrix(&x, &x);
                for i in 0..n {
                    k[(i, i)] += noise;
                }
                let chol = Cholesky::new(k).ok_or_else(|| {
                    Error::FactorizationFailed(
                        "covariance matrix is not positive definite".into(),
                    )
                })?;
                Backend::Exact { chol }
            }
            InferenceMode::Skip => Backend::Skip(Box::new(SkipOps::build(&self.kernel, &x, &self.skip_settings)?)),
        };
        let alpha = match &backend {
            Backend::Exact { chol } => chol.solve(&residual),
            Backend::Skip(ops) => ops.solve(&residual, noise, &self.skip_settings)?,
        };
        Ok(TrainedPosterior {
            model: self.clone(),
            x,
            y,
            noise,
            alpha,
            backend,
        })
    }
}

/// Everything the interpolation backend holds for a fixed point set: the
/// per-dimension grids, the interpolated component operators, and the merged
/// product tree.
struct SkipOps {
    components: Vec<KernelSpec>,
    grids: Vec<Grid1D>,
    skis: Vec<SkiApproximation>,
    tree: SkipTree,
}

impl SkipOps {
    fn build(kernel: &ModelKernel, x: &DMatrix<f64>, settings: &SkipSettings) -> Result<Self> {
        let components = kernel.product_components()?;
        let grids = components
            .iter()
            .map(|c| {
                let col = column_of(x, c);
                Grid1D::covering(&col, settings.grid_size)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build_on_grids(kernel, x, settings, components, grids)
    }

    /// Builds on caller-chosen grids; used when prediction inputs force the
    /// grids to cover more than the training range.
    fn build_on_grids(
        _kernel: &ModelKernel,
        x: &DMatrix<f64>,
        settings: &SkipSettings,
        components: Vec<KernelSpec>,
        grids: Vec<Grid1D>,
    ) -> Result<Self> {
        let skis = components
            .iter()
            .zip(&grids)
            .map(|(c, g)| SkiApproximation::with_grid(c, *g, &column_of(x, c)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&dyn LinearOperator> = skis.iter().map(|s| s as &dyn LinearOperator).collect();
        let tree = skip_decompose(&refs, settings.rank, settings.probe_seed)?;
        Ok(Self {
            components,
            grids,
            skis,
            tree,
        })
    }

    fn solve(
        &self,
        rhs: &DVector<f64>,
        noise: f64,
        settings: &SkipSettings,
    ) -> Result<DVector<f64>> {
        let shifted = ShiftedOperator::new(&self.tree, noise);
        let cg = cg_solve(&shifted, rhs, settings.cg_tolerance, settings.max_cg_iterations)?;
        if !cg.converged {
            return Err(Error::CgDidNotConverge {
                residual: cg.final_relative_residual,
                iterations: cg.iterations,
            });
        }
        Ok(cg.solution)
    }

    /// True when every prediction coordinate falls inside the interpolable
    /// interval of its dimension's grid.
    fn covers(&self, xstar: &DMatrix<f64>) -> bool {
        self.components.iter().zip(&self.grids).all(|(c, g)| {
            column_of(xstar, c).iter().all(|&v| g.contains_interpolable(v))
        })
    }

    /// Interpolated cross-covariance between prediction rows and training
    /// rows: the product over components of `w*ᵀ · K_UU · w`, evaluated from
    /// the two four-entry weight rows and the Toeplitz generator.
    fn cross_matrix(&self, xstar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = xstar.nrows();
        let n = self.skis.first().map(|s| s.size()).unwrap_or(0);
        let mut cross = DMatrix::from_element(k, n, 1.0);
        for (c, ski) in self.components.iter().zip(&self.skis) {
            let star_weights = interpolation_weights(&column_of(xstar, c), ski.grid())?;
            let kuu = ski.kuu().first_column();
            for j in 0..k {
                let wj = star_weights.row(j);
                for i in 0..n {
                    let wi = ski.weights().row(i);
                    let mut acc = 0.0;
                    for &(a, wa) in wj {
                        for &(b, wb) in wi {
                            acc += wa * wb * kuu[a.abs_diff(b)];
                        }
                    }
                    cross[(j, i)] *= acc;
                }
            }
        }
        Ok(cross)
    }
}

fn column_of(x: &DMatrix<f64>, component: &KernelSpec) -> Vec<f64> {
    let dim = component.active_dimension.expect("components are one-dimensional");
    x.column(dim).iter().cloned().collect()
}

enum Backend {
    Exact { chol: Cholesky<f64, Dyn> },
    Skip(Box<SkipOps>),
}

/// Predictive means and latent-function variances at the queried points.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct PredictOptions {
    /// When prediction inputs fall outside the training grids, rebuild the
    /// grids over the union and re-solve; disabled, such inputs error.
    pub allow_grid_rebuild: bool,
    /// Matrix-free variance solves run in batches of this many points.
    pub variance_batch_size: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            allow_grid_rebuild: true,
            variance_batch_size: 500,
        }
    }
}

/// A model bound to its training set with the representer weights solved.
pub struct TrainedPosterior {
    model: GpModel,
    x: DMatrix<f64>,
    y: DVector<f64>,
    noise: f64,
    alpha: DVector<f64>,
    backend: Backend,
}

impl TrainedPosterior {
    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn training_inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn training_targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn representer_weights(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Whether predicting at `xstar` would force the interpolation grids to
    /// be rebuilt. Always false in exact mode.
    pub fn needs_grid_rebuild(&self, xstar: &DMatrix<f64>) -> bool {
        match &self.backend {
            Backend::Exact { .. } => false,
            Backend::Skip(ops) => !ops.covers(xstar),
        }
    }

    pub fn predict(&self, xstar: &DMatrix<f64>) -> Result<Prediction> {
        self.predict_with(xstar, &PredictOptions::default(), |_, _| {})
    }

    /// Prediction with explicit options; `progress(done, total)` is called
    /// after every variance batch in matrix-free mode.
    pub fn predict_with(
        &self,
        xstar: &DMatrix<f64>,
        options: &PredictOptions,
        mut progress: impl FnMut(usize, usize),
    ) -> Result<Prediction> {
        if xstar.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.ncols(),
                actual: xstar.ncols(),
            });
        }
        let k = xstar.nrows();
        let mu = self.model.constant_mean;
        let prior_var = self.model.kernel.diagonal_value();

        match &self.backend {
            Backend::Exact { chol } => {
                let cross = self.model.kernel.matrix(xstar, &self.x);
                let mean = cross.clone() * &self.alpha + DVector::from_element(k, mu);
                let solved = chol.solve(&cross.transpose());
                let mut variance = DVector::zeros(k);
                for j in 0..k {
                    let reduction: f64 = cross.row(j).transpose().dot(&solved.column(j).clone_owned());
                    variance[j] = (prior_var - reduction).max(0.0);
                }
                Ok(Prediction { mean, variance })
            }
            Backend::Skip(ops) => {
                // Rebuild over train ∪ test when a query point leaves the
                // training grids, re-solving the representer weights on the
                // rebuilt operator.
                let rebuilt;
                let rebuilt_alpha;
                let (ops, alpha) = if ops.covers(xstar) {
                    (ops.as_ref(), &self.alpha)
                } else if options.allow_grid_rebuild {
                    let settings = &self.model.skip_settings;
                    let components = self.model.kernel.product_components()?;
                    let grids = components
                        .iter()
                        .map(|c| {
                            let mut vals = column_of(&self.x, c);
                            vals.extend(column_of(xstar, c));
                            Grid1D::covering(&vals, settings.grid_size)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    rebuilt = SkipOps::build_on_grids(
                        &self.model.kernel,
                        &self.x,
                        settings,
                        components,
                        grids,
                    )?;
                    let residual = self.y.map(|v| v - mu);
                    rebuilt_alpha = rebuilt.solve(&residual, self.noise, settings)?;
                    (&rebuilt, &rebuilt_alpha)
                } else {
                    // Surface the offending point through the usual
                    // interpolation error path.
                    ops.cross_matrix(xstar)?;
                    unreachable!("cross_matrix must fail for uncovered points");
                };

                let cross = ops.cross_matrix(xstar)?;
                let mean = &cross * alpha + DVector::from_element(k, mu);
                let settings = &self.model.skip_settings;
                let shifted = ShiftedOperator::new(&ops.tree, self.noise);
                let mut variance = DVector::zeros(k);
                let batch = options.variance_batch_size.max(1);
                let mut done = 0;
                while done < k {
                    let end = (done + batch).min(k);
                    for j in done..end {
                        let b = cross.row(j).transpose();
                        let cg =
                            cg_solve(&shifted, &b, settings.cg_tolerance, settings.max_cg_iterations)?;
                        if !cg.converged {
                            return Err(Error::CgDidNotConverge {
                                residual: cg.final_relative_residual,
                                iterations: cg.iterations,
                            });
                        }
                        variance[j] = (prior_var - b.dot(&cg.solution)).max(0.0);
                    }
                    done = end;
                    progress(done, k);
                }
                Ok(Prediction { mean, variance })
            }
        }
    }
}

/// On-disk model document: log-hyperparameters, inference settings, and the
/// training set with a checksum so a loaded model provably matches its data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub kernel_family: KernelFamily,
    pub log_lengthscales: Vec<f64>,
    pub log_outputscale: f64,
    pub log_noise_variance: f64,
    pub constant_mean: f64,
    pub inference_mode: InferenceMode,
    pub skip_settings: SkipSettings,
    pub training_inputs: Vec<Vec<f64>>,
    pub training_targets: Vec<f64>,
    pub data_checksum: String,
}

fn data_checksum(x: &DMatrix<f64>, y: &DVector<f64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((x.nrows() as u64).to_le_bytes());
    hasher.update((x.ncols() as u64).to_le_bytes());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            hasher.update(x[(i, j)].to_le_bytes());
        }
    }
    for v in y.iter() {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl SavedModel {
    /// Captures a model and its training set. Only plain (non-product) model
    /// kernels have a file representation.
    pub fn capture(model: &GpModel, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let ModelKernel::Single(kernel) = &model.kernel else {
            return Err(Error::Serialization(
                "only whole-input kernels can be saved".into(),
            ));
        };
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        Ok(Self {
            kernel_family: kernel.family,
            log_lengthscales: kernel.lengthscales.iter().map(|l| l.ln()).collect(),
            log_outputscale: kernel.outputscale.ln(),
            log_noise_variance: model.noise_variance.ln(),
            constant_mean: model.constant_mean,
            inference_mode: model.inference_mode,
            skip_settings: model.skip_settings,
            training_inputs: (0..x.nrows())
                .map(|i| x.row(i).iter().cloned().collect())
                .collect(),
            training_targets: y.iter().cloned().collect(),
            data_checksum: data_checksum(x, y),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Parses and verifies the embedded checksum.
    pub fn from_json(text: &str) -> Result<Self> {
        let saved: SavedModel =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        let (x, y) = saved.data()?;
        let expect = data_checksum(&x, &y);
        if expect != saved.data_checksum {
            return Err(Error::Serialization(format!(
                "training-data checksum mismatch: stored {}, computed {expect}",
                saved.data_checksum
            )));
        }
        Ok(saved)
    }

    pub fn model(&self) -> Result<GpModel> {
        let kernel = KernelSpec::new(
            self.kernel_family,
            self.log_lengthscales.iter().map(|l| l.exp()).collect(),
            self.log_outputscale.exp(),
        )?;
        GpModel::new(
            ModelKernel::Single(kernel),
            self.log_noise_variance.exp(),
            self.constant_mean,
            self.inference_mode,
            self.skip_settings,
        )
    }

    pub fn data(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.training_inputs.len();
        if n == 0 {
            return Err(Error::Serialization("saved model holds no data".into()));
        }
        let d = self.training_inputs[0].len();
        if self.training_inputs.iter().any(|row| row.len() != d) {
            return Err(Error::Serialization("ragged training inputs".into()));
        }
        if self.training_targets.len() != n {
            return Err(Error::Serialization(
                "target count does not match input rows".into(),
            ));
        }
        let x = DMatrix::from_fn(n, d, |i, j| self.training_inputs[i][j]);
        let y = DVector::from_vec(self.training_targets.clone());
        Ok((x, y))
    }

    /// Rebuilds the ready-to-predict posterior from the document.
    pub fn posterior(&self) -> Result<TrainedPosterior> {
        let model = self.model()?;
        let (x, y) = self.data()?;
        model.posterior(x, y)
    }
}
