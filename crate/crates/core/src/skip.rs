//! Fast multiplies with elementwise (Hadamard) products of kernels.
//!
//! Given low-rank Lanczos factors `Q¹T¹Q¹ᵀ` and `Q²T²Q²ᵀ` of two component
//! operators, the product operator `(A¹ ∘ A²)·v` is the diagonal of
//! `A¹ D_v A²`, which collapses to a small `r×r` core `M = T¹(Q¹ᵀ D_v Q²)T²`
//! followed by one row-wise bilinear form per output entry. Nothing of size
//! n×n is ever formed.
//!
//! For a product of d components the pairwise construction is applied
//! recursively: decompose each component, merge halves, and re-decompose each
//! merged operator at the same rank budget. The resulting [`SkipTree`] keeps
//! only the factors needed at the top, so repeated multiplies never touch the
//! original component operators again.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::krylov::lanczos_decompose;
use crate::linop::{LanczosFactor, LinearOperator};
use crate::rng::unit_probe;

pub const DEFAULT_MAX_LANCZOS_ITERATIONS: usize = 100;

/// `(A ∘ B)·v` from Lanczos factors of `A` and `B`.
///
/// Cost is O(n·r₁·r₂) for the core matrix plus O(n·max(r₁,r₂)) for the
/// per-row readout.
pub fn hadamard_mvm(
    left: &LanczosFactor,
    right: &LanczosFactor,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = left.size();
    if right.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: right.size(),
        });
    }
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
        });
    }

    // Scale the rows of Q² by v: this is D_v Q², still n×r₂.
    let mut dv_q2 = right.q().clone();
    for (i, mut row) in dv_q2.row_iter_mut().enumerate() {
        row *= v[i];
    }
    // Core: M = T¹ (Q¹ᵀ D_v Q²) T², an r₁×r₂ matrix.
    let inner = left.q().transpose() * dv_q2;
    let core = left.t_mul_mat(&inner);
    let core = right.mat_mul_t(&core);
    // Row-wise readout: out_i = q¹_i · M · (q²_i)ᵀ.
    let projected = left.q() * core;
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] = projected.row(i).dot(&right.q().row(i));
    }
    Ok(out)
}

/// The product operator `A ∘ B` represented by Lanczos factors of its two
/// sides. Multiplication runs through [`hadamard_mvm`]; the factors are
/// computed once and reused for every apply.
#[derive(Debug)]
pub struct HadamardProductOperator {
    left: LanczosFactor,
    right: LanczosFactor,
}

impl HadamardProductOperator {
    pub fn new(left: LanczosFactor, right: LanczosFactor) -> Result<Self> {
        if left.size() != right.size() {
            return Err(Error::DimensionMismatch {
                expected: left.size(),
                actual: right.size(),
            });
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &LanczosFactor {
        &self.left
    }

    pub fn right(&self) -> &LanczosFactor {
        &self.right
    }

    pub fn into_parts(self) -> (LanczosFactor, LanczosFactor) {
        (self.left, self.right)
    }
}

impl LinearOperator for HadamardProductOperator {
    fn size(&self) -> usize {
        self.left.size()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        hadamard_mvm(&self.left, &self.right, v)
            .expect("factor sizes were validated at construction")
    }
}

/// Settings for [`skip_decompose_with`].
#[derive(Clone, Copy, Debug)]
pub struct SkipDecomposeOptions {
    /// Rank budget for every Lanczos factorization, leaves and merges alike.
    pub rank: usize,
    /// Seed from which each factorization's probe vector is derived; node k
    /// in construction order uses stream k.
    pub probe_seed: u64,
    /// Hard cap on Lanczos iterations regardless of the rank budget.
    pub max_iterations: usize,
    /// Keep the per-component leaf factors on the tree for inspection.
    pub retain_leaf_factors: bool,
}

impl SkipDecomposeOptions {
    pub fn new(rank: usize, probe_seed: u64) -> Self {
        Self {
            rank,
            probe_seed,
            max_iterations: DEFAULT_MAX_LANCZOS_ITERATIONS,
            retain_leaf_factors: false,
        }
    }
}

#[derive(Debug)]
enum SkipRoot {
    /// A single component: the root is its own Lanczos factor.
    Single(LanczosFactor),
    /// Two merged halves. The topmost product is applied directly through
    /// [`hadamard_mvm`] rather than being compressed one more time, so the
    /// root keeps both children.
    Merge(HadamardProductOperator),
}

/// A built product-kernel multiplier.
///
/// Construction performs all Lanczos factorizations; afterwards
/// [`SkipTree::mvm`] costs O(n·r²) and never applies the original component
/// operators.
#[derive(Debug)]
pub struct SkipTree {
    n: usize,
    num_components: usize,
    rank_budget: usize,
    root: SkipRoot,
    leaf_factors: Option<Vec<LanczosFactor>>,
}

impl SkipTree {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn rank_budget(&self) -> usize {
        self.rank_budget
    }

    /// The factor(s) the root multiplies through: one for a single
    /// component, two for a merged product.
    pub fn root_factors(&self) -> (&LanczosFactor, Option<&LanczosFactor>) {
        match &self.root {
            SkipRoot::Single(f) => (f, None),
            SkipRoot::Merge(h) => (h.left(), Some(h.right())),
        }
    }

    /// Per-component factors, present only when the tree was built with
    /// `retain_leaf_factors`.
    pub fn leaf_factors(&self) -> Option<&[LanczosFactor]> {
        self.leaf_factors.as_deref()
    }

    pub fn mvm(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.n, "vector length must match operator size");
        match &self.root {
            SkipRoot::Single(f) => f.apply(v),
            SkipRoot::Merge(h) => h.apply(v),
        }
    }
}

impl LinearOperator for SkipTree {
    fn size(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.mvm(v)
    }
}

struct TreeBuilder<'a> {
    options: &'a SkipDecomposeOptions,
    n: usize,
    effective_rank: usize,
    next_stream: u64,
}

impl TreeBuilder<'_> {
    fn next_probe(&mut self) -> DVector<f64> {
        let probe = unit_probe(self.options.probe_seed, self.next_stream, self.n);
        self.next_stream += 1;
        probe
    }

    fn decompose_leaf(&mut self, component: &dyn LinearOperator) -> Result<LanczosFactor> {
        let probe = self.next_probe();
        lanczos_decompose(component, &probe, self.effective_rank)
    }

    /// Reduces a contiguous run of factors to one factor, splitting in half
    /// (left half takes the extra element when odd) and compressing each
    /// non-trivial merge back to the rank budget.
    fn merge(&mut self, mut factors: Vec<LanczosFactor>) -> Result<LanczosFactor> {
        if factors.len() == 1 {
            return Ok(factors.pop().expect("nonempty"));
        }
        let split = factors.len().div_ceil(2);
        let right_half = factors.split_off(split);
        let left = self.merge(factors)?;
        let right = self.merge(right_half)?;
        let product = HadamardProductOperator::new(left, right)?;
        let probe = self.next_probe();
        lanczos_decompose(&product, &probe, self.effective_rank)
    }
}

/// Builds a [`SkipTree`] over the given component operators with a shared
/// rank budget and a deterministic probe seed.
pub fn skip_decompose(
    components: &[&dyn LinearOperator],
    rank: usize,
    probe_seed: u64,
) -> Result<SkipTree> {
    skip_decompose_with(components, &SkipDecomposeOptions::new(rank, probe_seed))
}

pub fn skip_decompose_with(
    components: &[&dyn LinearOperator],
    options: &SkipDecomposeOptions,
) -> Result<SkipTree> {
    if components.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one component operator".into(),
        ));
    }
    let n = components[0].size();
    for c in components {
        if c.size() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: c.size(),
            });
        }
    }
    if options.rank == 0 {
        return Err(Error::InvalidArgument("rank budget must be positive".into()));
    }
    if options.max_iterations == 0 {
        return Err(Error::InvalidArgument(
            "iteration cap must be positive".into(),
        ));
    }

    let mut builder = TreeBuilder {
        options,
        n,
        effective_rank: options.rank.min(options.max_iterations).min(n),
        next_stream: 0,
    };

    let leaves = components
        .iter()
        .map(|c| builder.decompose_leaf(*c))
        .collect::<Result<Vec<_>>>()?;
    let retained = options.retain_leaf_factors.then(|| leaves.clone());

    let d = leaves.len();
    let root = if d == 1 {
        let mut leaves = leaves;
        SkipRoot::Single(leaves.pop().expect("nonempty"))
    } else {
        let mut leaves = leaves;
        let right_half = leaves.split_off(d.div_ceil(2));
        let left = builder.merge(leaves)?;
        let right = builder.merge(right_half)?;
        SkipRoot::Merge(HadamardProductOperator::new(left, right)?)
    };

    Ok(SkipTree {
        n,
        num_components: d,
        rank_budget: builder.effective_rank,
        root,
        leaf_factors: retained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::linop::{ApplyCounter, DenseOperator};
    use crate::ski::ski_operator;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n)
    }

    fn full_rank_factor(m: &DMatrix<f64>, seed: u64) -> LanczosFactor {
        let op = DenseOperator::new(m.clone()).unwrap();
        let probe = unit_probe(seed, 0, m.nrows());
        lanczos_decompose(&op, &probe, m.nrows()).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn ones_matrix_is_the_hadamard_identity() {
        let n = 40;
        let ones = DMatrix::from_element(n, n, 1.0);
        let b = random_spd(n, 1);
        let fj = full_rank_factor(&ones, 2);
        let fb = full_rank_factor(&b, 3);
        let v = random_vec(n, 4);
        let out = hadamard_mvm(&fj, &fb, &v).unwrap();
        let expect = &b * &v;
        assert!((out - &expect).norm() < 1e-8 * expect.norm());
    }

    #[test]
    fn identity_factors_give_identity_product() {
        // Lanczos on I stops at rank 1, so build the exact full-rank factor
        // by hand: Q = I and T = I.
        let n = 30;
        let f = LanczosFactor::new(
            DMatrix::identity(n, n),
            DVector::from_element(n, 1.0),
            DVector::zeros(n - 1),
        )
        .unwrap();
        let v = random_vec(n, 6);
        let out = hadamard_mvm(&f, &f, &v).unwrap();
        assert!((out - &v).norm() < 1e-12);
    }

    #[test]
    fn full_rank_product_matches_dense_elementwise_oracle() {
        let n = 100;
        let a = random_spd(n, 7);
        let b = random_spd(n, 8);
        let fa = full_rank_factor(&a, 9);
        let fb = full_rank_factor(&b, 10);
        let v = random_vec(n, 11);
        let out = hadamard_mvm(&fa, &fb, &v).unwrap();
        let expect = a.component_mul(&b) * &v;
        let rel = (out - &expect).norm() / expect.norm();
        assert!(rel <= 1e-8, "relative error {rel:.3e}");
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let a = random_spd(20, 12);
        let b = random_spd(25, 13);
        let fa = full_rank_factor(&a, 14);
        let fb = full_rank_factor(&b, 15);
        assert!(matches!(
            hadamard_mvm(&fa, &fb, &random_vec(20, 16)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            hadamard_mvm(&fa, &fa, &random_vec(21, 17)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(HadamardProductOperator::new(fa, fb).is_err());
    }

    #[test]
    fn rank_zero_factors_cannot_be_built() {
        let q = DMatrix::<f64>::zeros(10, 0);
        let alpha = DVector::<f64>::zeros(0);
        let beta = DVector::<f64>::zeros(0);
        assert!(LanczosFactor::new(q, alpha, beta).is_err());
    }

    #[test]
    fn single_component_tree_is_its_own_factor() {
        let a = random_spd(35, 18);
        let op = DenseOperator::new(a.clone()).unwrap();
        let tree = skip_decompose(&[&op], 35, 99).unwrap();
        assert_eq!(tree.num_components(), 1);
        let (root, second) = tree.root_factors();
        assert!(second.is_none());
        let v = random_vec(35, 19);
        let expect = &a * &v;
        assert!((tree.mvm(&v) - &expect).norm() < 1e-7 * expect.norm());
        assert_eq!(root.size(), 35);
    }

    #[test]
    fn two_component_tree_reconstructs_the_product_at_full_rank() {
        let n = 40;
        let a = random_spd(n, 20);
        let b = random_spd(n, 21);
        let oa = DenseOperator::new(a.clone()).unwrap();
        let ob = DenseOperator::new(b.clone()).unwrap();
        let tree = skip_decompose(&[&oa, &ob], n, 7).unwrap();
        let expect = a.component_mul(&b);
        let got = tree.to_dense();
        let rel = (&got - &expect).norm() / expect.norm();
        assert!(rel <= 1e-6, "Frobenius relative error {rel:.3e}");
    }

    #[test]
    fn four_component_grid_kernels_multiply_accurately_at_modest_rank() {
        let n = 500;
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        // Inputs drawn wider than the lengthscale so the product kernel has
        // real structure to capture.
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
        let mut components: Vec<Box<dyn LinearOperator>> = Vec::new();
        let mut dense = DMatrix::from_element(n, n, 1.0);
        for c in 0..d {
            let col: Vec<f64> = (0..n).map(|i| x[(i, c)]).collect();
            let k = KernelSpec::rbf(vec![2.0], 1.0).unwrap();
            let op = ski_operator(&k, &col, 100).unwrap();
            dense = dense.component_mul(&op.to_dense());
            components.push(Box::new(op));
        }
        let refs: Vec<&dyn LinearOperator> = components.iter().map(|b| b.as_ref()).collect();
        let tree = skip_decompose(&refs, 30, 1).unwrap();
        let mut worst: f64 = 0.0;
        for probe in 0..5 {
            let v = random_vec(n, 100 + probe);
            let expect = &dense * &v;
            let rel = (tree.mvm(&v) - &expect).norm() / expect.norm();
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-2, "worst relative error {worst:.3e}");
    }

    #[test]
    fn mvm_is_linear_and_zero_preserving() {
        let a = random_spd(30, 23);
        let b = random_spd(30, 24);
        let oa = DenseOperator::new(a).unwrap();
        let ob = DenseOperator::new(b).unwrap();
        let tree = skip_decompose(&[&oa, &ob], 10, 2).unwrap();
        assert_eq!(tree.mvm(&DVector::zeros(30)).norm(), 0.0);
        let u = random_vec(30, 25);
        let w = random_vec(30, 26);
        let lhs = tree.mvm(&(2.0 * &u + &w));
        let rhs = 2.0 * tree.mvm(&u) + tree.mvm(&w);
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn decompose_applies_each_leaf_exactly_rank_times_and_mvm_never_again() {
        let n = 50;
        let rank = 12;
        let a = random_spd(n, 27);
        let b = random_spd(n, 28);
        let c = random_spd(n, 29);
        let oa = DenseOperator::new(a).unwrap();
        let ob = DenseOperator::new(b).unwrap();
        let oc = DenseOperator::new(c).unwrap();
        let ca = ApplyCounter::new(&oa);
        let cb = ApplyCounter::new(&ob);
        let cc = ApplyCounter::new(&oc);
        let tree = skip_decompose(&[&ca, &cb, &cc], rank, 3).unwrap();
        assert_eq!(ca.count(), rank);
        assert_eq!(cb.count(), rank);
        assert_eq!(cc.count(), rank);
        for i in 0..50 {
            tree.mvm(&random_vec(n, 200 + i));
        }
        assert_eq!(ca.count(), rank);
        assert_eq!(cb.count(), rank);
        assert_eq!(cc.count(), rank);
    }

    #[test]
    fn represented_operator_is_symmetric() {
        let n = 60;
        let a = random_spd(n, 30);
        let b = random_spd(n, 31);
        let oa = DenseOperator::new(a).unwrap();
        let ob = DenseOperator::new(b).unwrap();
        let tree = skip_decompose(&[&oa, &ob], 15, 4).unwrap();
        let u = random_vec(n, 32);
        let v = random_vec(n, 33);
        let asym = (u.dot(&tree.mvm(&v)) - v.dot(&tree.mvm(&u))).abs();
        assert!(asym <= 1e-6 * u.norm() * v.norm(), "asymmetry {asym:.3e}");
    }

    #[test]
    fn leaf_factors_are_retained_only_on_request() {
        let a = random_spd(20, 34);
        let oa = DenseOperator::new(a).unwrap();
        let tree = skip_decompose(&[&oa, &oa], 8, 5).unwrap();
        assert!(tree.leaf_factors().is_none());
        let mut opts = SkipDecomposeOptions::new(8, 5);
        opts.retain_leaf_factors = true;
        let tree = skip_decompose_with(&[&oa, &oa], &opts).unwrap();
        assert_eq!(tree.leaf_factors().unwrap().len(), 2);
    }

    #[test]
    fn iteration_cap_bounds_the_effective_rank() {
        let a = random_spd(40, 35);
        let oa = DenseOperator::new(a).unwrap();
        let mut opts = SkipDecomposeOptions::new(500, 6);
        opts.max_iterations = 10;
        let tree = skip_decompose_with(&[&oa], &opts).unwrap();
        assert_eq!(tree.rank_budget(), 10);
        assert!(tree.root_factors().0.rank() <= 10);
    }

    #[test]
    fn fixed_seed_reproduces_the_mvm_bitwise() {
        let a = random_spd(45, 36);
        let b = random_spd(45, 37);
        let oa = DenseOperator::new(a).unwrap();
        let ob = DenseOperator::new(b).unwrap();
        let v = random_vec(45, 38);
        let t1 = skip_decompose(&[&oa, &ob], 12, 77).unwrap();
        let t2 = skip_decompose(&[&oa, &ob], 12, 77).unwrap();
        assert_eq!(t1.mvm(&v), t2.mvm(&v));
    }
}
