//! Matrix-free linear operators.
//!
//! Everything downstream (Krylov routines, kernel interpolation, product
//! kernel trees) works against the [`LinearOperator`] trait so that no n×n
//! matrix is ever materialized on the hot path. Operators expose an exact
//! dense materialization for small sizes, used only by tests and oracles.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Largest operator size for which [`LinearOperator::to_dense`] may be called.
pub const DENSE_MATERIALIZATION_CAP: usize = 4096;

/// A square symmetric linear map applied without materializing its matrix.
pub trait LinearOperator: Send + Sync {
    /// Number of rows (= columns).
    fn size(&self) -> usize;

    /// Computes `A v`.
    ///
    /// Panics if `v.len() != self.size()`; sized inputs are the caller's
    /// contract, mirroring the dense algebra this replaces.
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;

    /// Exact dense materialization, intended for tests and small oracles
    /// only. Panics when `size() > DENSE_MATERIALIZATION_CAP`.
    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        assert!(
            n <= DENSE_MATERIALIZATION_CAP,
            "dense materialization capped at {DENSE_MATERIALIZATION_CAP} rows"
        );
        let mut out = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            out.set_column(j, &self.apply(&e));
            e[j] = 0.0;
        }
        out
    }
}

/// Dense symmetric matrix wrapped as an operator. Test and oracle helper.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn size(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// Diagonal operator.
#[derive(Clone, Debug)]
pub struct DiagonalOperator {
    diag: DVector<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: DVector<f64>) -> Self {
        Self { diag }
    }
}

impl LinearOperator for DiagonalOperator {
    fn size(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.diag.len(), "diagonal operator size mismatch");
        v.component_mul(&self.diag)
    }
}

/// `A + shift·I` for a borrowed operator `A`.
pub struct ShiftedOperator<'a> {
    inner: &'a dyn LinearOperator,
    shift: f64,
}

impl<'a> ShiftedOperator<'a> {
    pub fn new(inner: &'a dyn LinearOperator, shift: f64) -> Self {
        Self { inner, shift }
    }
}

impl LinearOperator for ShiftedOperator<'_> {
    fn size(&self) -> usize {
        self.inner.size()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.inner.apply(v);
        out.axpy(self.shift, v, 1.0);
        out
    }
}

/// Wrapper that counts how many times `apply` runs. Used to assert the
/// operator-apply budgets of the decomposition routines.
pub struct ApplyCounter<'a> {
    inner: &'a dyn LinearOperator,
    count: AtomicUsize,
}

impl<'a> ApplyCounter<'a> {
    pub fn new(inner: &'a dyn LinearOperator) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl LinearOperator for ApplyCounter<'_> {
    fn size(&self) -> usize {
        self.inner.size()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(v)
    }
}

/// Symmetric Toeplitz operator with an O(m log m) multiply.
///
/// The matrix is embedded in a circulant of the next power of two at least
/// `2m`; the product is three FFTs and a pointwise multiply against the
/// precomputed circulant spectrum.
pub struct ToeplitzOperator {
    first_column: Vec<f64>,
    embed_len: usize,
    spectrum: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ToeplitzOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToeplitzOperator")
            .field("size", &self.first_column.len())
            .field("embed_len", &self.embed_len)
            .finish()
    }
}

impl ToeplitzOperator {
    pub fn new(first_column: Vec<f64>) -> Result<Self> {
        if first_column.is_empty() {
            return Err(Error::InvalidArgument(
                "Toeplitz generator must be nonempty".into(),
            ));
        }
        if first_column.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "Toeplitz generator must be finite".into(),
            ));
        }
        let m = first_column.len();
        let embed_len = (2 * m).next_power_of_two();
        // First column of the circulant embedding: the generator, zero
        // padding, then the generator reversed (entry L-j holds c[j]).
        let mut circ = vec![Complex64::new(0.0, 0.0); embed_len];
        for (j, &c) in first_column.iter().enumerate() {
            circ[j] = Complex64::new(c, 0.0);
            if j > 0 {
                circ[embed_len - j] = Complex64::new(c, 0.0);
            }
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(embed_len);
        let ifft = planner.plan_fft_inverse(embed_len);
        fft.process(&mut circ);
        Ok(Self {
            first_column,
            embed_len,
            spectrum: circ,
            fft,
            ifft,
        })
    }

    pub fn first_column(&self) -> &[f64] {
        &self.first_column
    }

    /// Embedding length; exposed so cost models can see the m-dependent part.
    pub fn embedding_len(&self) -> usize {
        self.embed_len
    }

    /// Fast product `T v` via the circulant embedding.
    pub fn mvm(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.first_column.len();
        if v.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: v.len(),
            });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.embed_len];
        for (slot, &x) in buf.iter_mut().zip(v.iter()) {
            *slot = Complex64::new(x, 0.0);
        }
        self.fft.process(&mut buf);
        for (slot, &s) in buf.iter_mut().zip(self.spectrum.iter()) {
            *slot *= s;
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / self.embed_len as f64;
        Ok(DVector::from_iterator(m, buf[..m].iter().map(|c| c.re * scale)))
    }
}

impl LinearOperator for ToeplitzOperator {
    fn size(&self) -> usize {
        self.first_column.len()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.mvm(v).expect("Toeplitz operator size mismatch")
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let m = self.first_column.len();
        assert!(m <= DENSE_MATERIALIZATION_CAP);
        DMatrix::from_fn(m, m, |i, j| self.first_column[i.abs_diff(j)])
    }
}

/// Sparse interpolation matrix with exactly four weighted entries per row.
///
/// Rows correspond to data points, columns to grid nodes. Apply and
/// transposed apply cost four multiplies per row.
#[derive(Clone, Debug)]
pub struct SparseInterpolationMatrix {
    cols: usize,
    entries: Vec<[(usize, f64); 4]>,
}

impl SparseInterpolationMatrix {
    pub fn new(cols: usize, entries: Vec<[(usize, f64); 4]>) -> Result<Self> {
        for row in &entries {
            for &(j, w) in row {
                if j >= cols {
                    return Err(Error::InvalidArgument(format!(
                        "interpolation column {j} out of range (grid has {cols} nodes)"
                    )));
                }
                if !w.is_finite() {
                    return Err(Error::InvalidArgument(
                        "interpolation weight must be finite".into(),
                    ));
                }
            }
        }
        Ok(Self { cols, entries })
    }

    pub fn nrows(&self) -> usize {
        self.entries.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// Number of stored entries (four per row).
    pub fn nnz(&self) -> usize {
        4 * self.entries.len()
    }

    /// The four `(column, weight)` pairs of one row.
    pub fn row(&self, i: usize) -> &[(usize, f64); 4] {
        &self.entries[i]
    }

    /// `W v`, mapping grid values to data points.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.entries.len(),
            self.entries
                .iter()
                .map(|row| row.iter().map(|&(j, w)| w * v[j]).sum()),
        ))
    }

    /// `Wᵀ u`, scattering data-point values onto the grid.
    pub fn apply_transpose(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.entries.len() {
            return Err(Error::DimensionMismatch {
                expected: self.entries.len(),
                actual: u.len(),
            });
        }
        let mut out = DVector::zeros(self.cols);
        for (row, &x) in self.entries.iter().zip(u.iter()) {
            for &(j, w) in row {
                out[j] += w * x;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.entries.len(), self.cols);
        for (i, row) in self.entries.iter().enumerate() {
            for &(j, w) in row {
                out[(i, j)] += w;
            }
        }
        out
    }
}

/// Rank-r factorization `Q T Qᵀ` with orthonormal `Q` and symmetric
/// tridiagonal `T`, as produced by the Lanczos process.
#[derive(Clone, Debug)]
pub struct LanczosFactor {
    q: DMatrix<f64>,
    alpha: DVector<f64>,
    beta: DVector<f64>,
}

impl LanczosFactor {
    pub fn new(q: DMatrix<f64>, alpha: DVector<f64>, beta: DVector<f64>) -> Result<Self> {
        let r = q.ncols();
        if r == 0 {
            return Err(Error::InvalidArgument("factor rank must be positive".into()));
        }
        if alpha.len() != r || beta.len() + 1 != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                actual: alpha.len(),
            });
        }
        Ok(Self { q, alpha, beta })
    }

    /// Number of data rows.
    pub fn size(&self) -> usize {
        self.q.nrows()
    }

    /// Rank of the factorization (columns of `Q`).
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// Dense `T`, for eigendecompositions and tests.
    pub fn tridiagonal_dense(&self) -> DMatrix<f64> {
        let r = self.rank();
        let mut t = DMatrix::zeros(r, r);
        for i in 0..r {
            t[(i, i)] = self.alpha[i];
            if i + 1 < r {
                t[(i, i + 1)] = self.beta[i];
                t[(i + 1, i)] = self.beta[i];
            }
        }
        t
    }

    /// `T w` using the tridiagonal structure.
    pub fn t_mul_vec(&self, w: &DVector<f64>) -> DVector<f64> {
        let r = self.rank();
        let mut out = DVector::zeros(r);
        for i in 0..r {
            let mut acc = self.alpha[i] * w[i];
            if i > 0 {
                acc += self.beta[i - 1] * w[i - 1];
            }
            if i + 1 < r {
                acc += self.beta[i] * w[i + 1];
            }
            out[i] = acc;
        }
        out
    }

    /// `T C` for a dense `C` with `rank()` rows, in O(rank · cols).
    pub fn t_mul_mat(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.rank();
        assert_eq!(c.nrows(), r, "tridiagonal multiply shape mismatch");
        let mut out = DMatrix::zeros(r, c.ncols());
        for j in 0..c.ncols() {
            for i in 0..r {
                let mut acc = self.alpha[i] * c[(i, j)];
                if i > 0 {
                    acc += self.beta[i - 1] * c[(i - 1, j)];
                }
                if i + 1 < r {
                    acc += self.beta[i] * c[(i + 1, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// `C T` for a dense `C` with `rank()` columns; `T` is symmetric so this
    /// is the transposed counterpart of [`t_mul_mat`](Self::t_mul_mat).
    pub fn mat_mul_t(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.rank();
        assert_eq!(c.ncols(), r, "tridiagonal multiply shape mismatch");
        let mut out = DMatrix::zeros(c.nrows(), r);
        for i in 0..c.nrows() {
            for j in 0..r {
                let mut acc = c[(i, j)] * self.alpha[j];
                if j > 0 {
                    acc += c[(i, j - 1)] * self.beta[j - 1];
                }
                if j + 1 < r {
                    acc += c[(i, j + 1)] * self.beta[j];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// Dense reconstruction `Q T Qᵀ`; tests only.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.q * self.tridiagonal_dense() * self.q.transpose()
    }
}

impl LinearOperator for LanczosFactor {
    fn size(&self) -> usize {
        self.q.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.size(), "Lanczos factor size mismatch");
        let w = self.q.tr_mul(v);
        &self.q * self.t_mul_vec(&w)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        assert!(self.size() <= DENSE_MATERIALIZATION_CAP);
        self.reconstruct()
    }
}
