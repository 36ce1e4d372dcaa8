//! Covariance kernels and their product decompositions.
//!
//! A [`KernelSpec`] is a serializable description of an RBF or Matérn-5/2
//! kernel with ARD lengthscales. [`KernelSpec::decompose_product`] splits an
//! RBF over d dimensions into d one-dimensional components whose elementwise
//! product reproduces the original kernel exactly; that factorization is what
//! the interpolation-based fast multiplies operate on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    Matern52,
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::Rbf => write!(f, "rbf"),
            KernelFamily::Matern52 => write!(f, "matern52"),
        }
    }
}

/// A stationary kernel with per-dimension lengthscales.
///
/// `active_dimension` marks a one-dimensional component kernel that reads a
/// single coordinate of the full input; `None` means the kernel consumes the
/// whole vector, with `lengthscales` either one-per-dimension or a single
/// shared value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub outputscale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_dimension: Option<usize>,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        lengthscales: Vec<f64>,
        outputscale: f64,
    ) -> Result<Self> {
        let spec = Self {
            family,
            lengthscales,
            outputscale,
            active_dimension: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf(lengthscales: Vec<f64>, outputscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Rbf, lengthscales, outputscale)
    }

    pub fn matern52(lengthscales: Vec<f64>, outputscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern52, lengthscales, outputscale)
    }

    /// Isotropic kernel over `dims` dimensions: one shared lengthscale,
    /// stored per-dimension so the product decomposition stays well defined.
    pub fn isotropic(
        family: KernelFamily,
        dims: usize,
        lengthscale: f64,
        outputscale: f64,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("kernel needs >= 1 dimension".into()));
        }
        Self::new(family, vec![lengthscale; dims], outputscale)
    }

    /// One-dimensional component bound to coordinate `dimension` of the full
    /// input.
    pub fn component(
        family: KernelFamily,
        dimension: usize,
        lengthscale: f64,
        outputscale: f64,
    ) -> Result<Self> {
        let mut spec = Self::new(family, vec![lengthscale], outputscale)?;
        spec.active_dimension = Some(dimension);
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidArgument(
                "kernel needs at least one lengthscale".into(),
            ));
        }
        if self.lengthscales.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::InvalidArgument(
                "lengthscales must be positive and finite".into(),
            ));
        }
        if !self.outputscale.is_finite() || self.outputscale <= 0.0 {
            return Err(Error::InvalidArgument(
                "outputscale must be positive and finite".into(),
            ));
        }
        if self.active_dimension.is_some() && self.lengthscales.len() != 1 {
            return Err(Error::InvalidArgument(
                "a component kernel carries exactly one lengthscale".into(),
            ));
        }
        Ok(())
    }

    fn lengthscale_for(&self, dim: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[dim]
        }
    }

    /// Squared scaled distance between two points given by indexed access.
    fn scaled_sq_dist(&self, dims: usize, coord: impl Fn(usize) -> (f64, f64)) -> f64 {
        match self.active_dimension {
            Some(c) => {
                let (a, b) = coord(c);
                let d = (a - b) / self.lengthscales[0];
                d * d
            }
            None => (0..dims)
                .map(|c| {
                    let (a, b) = coord(c);
                    let d = (a - b) / self.lengthscale_for(c);
                    d * d
                })
                .sum(),
        }
    }

    fn eval_sq_dist(&self, t2: f64) -> f64 {
        match self.family {
            KernelFamily::Rbf => self.outputscale * (-0.5 * t2).exp(),
            KernelFamily::Matern52 => {
                let t = t2.sqrt();
                self.outputscale * (1.0 + SQRT5 * t + 5.0 * t2 / 3.0) * (-SQRT5 * t).exp()
            }
        }
    }

    /// Kernel value between two full input vectors.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        assert_eq!(x.len(), z.len(), "kernel inputs must share dimensionality");
        self.eval_sq_dist(self.scaled_sq_dist(x.len(), |c| (x[c], z[c])))
    }

    /// Kernel value between two scalars, ignoring any active-dimension
    /// binding. Used on grid nodes and other already-projected coordinates.
    pub fn eval1d(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.lengthscales[0];
        self.eval_sq_dist(d * d)
    }

    /// Kernel value between row `i` of `x` and row `j` of `z`.
    pub fn eval_between(&self, x: &DMatrix<f64>, i: usize, z: &DMatrix<f64>, j: usize) -> f64 {
        assert_eq!(x.ncols(), z.ncols(), "kernel inputs must share dimensionality");
        self.eval_sq_dist(self.scaled_sq_dist(x.ncols(), |c| (x[(i, c)], z[(j, c)])))
    }

    /// Variance at a single point, `k(x, x)`.
    pub fn diagonal_value(&self) -> f64 {
        self.outputscale
    }

    /// Splits the kernel into one-dimensional components whose product equals
    /// the original kernel.
    ///
    /// Exact for RBF with ARD lengthscales because the exponential of a sum
    /// factors. A multi-dimensional Matérn does not factor and is rejected;
    /// a one-dimensional kernel of either family is its own decomposition.
    /// The outputscale rides on the first component, the rest get 1.
    pub fn decompose_product(&self) -> Result<ProductKernelSpec> {
        self.validate()?;
        if self.active_dimension.is_some() {
            return Err(Error::UnsupportedDecomposition(
                "kernel is already a one-dimensional component".into(),
            ));
        }
        let d = self.lengthscales.len();
        if d > 1 && self.family == KernelFamily::Matern52 {
            return Err(Error::UnsupportedDecomposition(
                "a Matérn-5/2 kernel over several dimensions does not factor into a product"
                    .into(),
            ));
        }
        let components = (0..d)
            .map(|c| {
                KernelSpec::component(
                    self.family,
                    c,
                    self.lengthscales[c],
                    if c == 0 { self.outputscale } else { 1.0 },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ProductKernelSpec::new(components)
    }
}

/// Dense covariance matrix between the rows of `x` and the rows of `z`.
pub fn kernel_matrix(spec: &KernelSpec, x: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| spec.eval_between(x, i, z, j))
}

/// An elementwise product of one-dimensional component kernels over disjoint
/// input dimensions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProductKernelSpec {
    components: Vec<KernelSpec>,
}

impl ProductKernelSpec {
    pub fn new(components: Vec<KernelSpec>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument(
                "product kernel needs at least one component".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &components {
            c.validate()?;
            let dim = c.active_dimension.ok_or_else(|| {
                Error::InvalidArgument(
                    "product components must be bound to an input dimension".into(),
                )
            })?;
            if !seen.insert(dim) {
                return Err(Error::InvalidArgument(format!(
                    "two product components bound to dimension {dim}"
                )));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[KernelSpec] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        self.components.iter().map(|c| c.eval(x, z)).product()
    }

    pub fn eval_between(&self, x: &DMatrix<f64>, i: usize, z: &DMatrix<f64>, j: usize) -> f64 {
        self.components
            .iter()
            .map(|c| c.eval_between(x, i, z, j))
            .product()
    }

    pub fn diagonal_value(&self) -> f64 {
        self.components.iter().map(|c| c.outputscale).product()
    }

    pub fn kernel_matrix(&self, x: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| self.eval_between(x, i, z, j))
    }
}
