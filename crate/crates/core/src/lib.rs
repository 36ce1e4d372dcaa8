//! Scalable Gaussian process regression built on structured kernel
//! interpolation for product kernels.
//!
//! The crate provides matrix-free covariance operators: each kernel matrix is
//! represented by its action `v -> K v` instead of dense storage. Product
//! kernels over several dimensions are handled by interpolating each
//! one-dimensional component onto a regular grid, compressing the components
//! with Lanczos, and merging them pairwise, so a multiply through the full
//! kernel costs far less than forming it. On top of the operators sit
//! conjugate-gradient solves, stochastic Lanczos quadrature log-determinants,
//! marginal-likelihood training, and a clustered multi-task model.

pub mod error;
pub mod gp;
pub mod kernels;
pub mod krylov;
pub mod linop;
pub mod multitask;
pub mod optim;
pub(crate) mod rng;
pub mod ski;
pub mod skip;

pub use error::{Error, Result};
pub use gp::{
    FitOptions, FitResult, GpModel, InferenceMode, MllBreakdown, ModelKernel, PredictOptions,
    Prediction, SavedModel, SkipSettings, TrainedPosterior,
};
pub use kernels::{kernel_matrix, KernelFamily, KernelSpec, ProductKernelSpec};
pub use optim::Adam;
pub use krylov::{cg_solve, lanczos_decompose, slq_logdet, CgResult, SlqEstimate};
pub use linop::{
    ApplyCounter, DenseOperator, DiagonalOperator, LanczosFactor, LinearOperator,
    ShiftedOperator, SparseInterpolationMatrix, ToeplitzOperator,
};
pub use multitask::{
    adjusted_rand_index, fit_clusters, generate_growth_curves, gibbs_sweep, multitask_operator,
    task_operator_mvm, ClusterFitOptions, ClusterFitResult, ClusterHyperparameters, ClusterModel,
    ClusterState, Coregionalization, MultitaskOperator, SweepOutcome, SweepRecord, TaskAssignment,
    TaskDataset, TaskOperator, TaskPrediction,
};
pub use ski::{interpolation_weights, ski_operator, Grid1D, SkiApproximation};
pub use skip::{
    hadamard_mvm, skip_decompose, skip_decompose_with, HadamardProductOperator,
    SkipDecomposeOptions, SkipTree,
};
