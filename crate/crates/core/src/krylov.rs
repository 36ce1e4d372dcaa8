//! Krylov-subspace routines: conjugate gradients, Lanczos factorization, and
//! stochastic Lanczos quadrature for log determinants.
//!
//! All three touch the operator only through [`LinearOperator::apply`], one
//! apply per iteration (CG), one per retained column (Lanczos), so apply
//! counts are exact and cheap to audit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linop::{LanczosFactor, LinearOperator};
use crate::rng::unit_probe;

/// Relative threshold under which a Lanczos off-diagonal counts as breakdown.
pub const LANCZOS_BREAKDOWN_RTOL: f64 = 1e-10;

/// Floor applied to nonpositive Ritz values before taking logarithms.
pub const RITZ_VALUE_FLOOR: f64 = 1e-12;

/// Outcome of a conjugate-gradients solve.
#[derive(Clone, Debug)]
pub struct CgResult {
    pub solution: DVector<f64>,
    /// Operator applies performed (one per iteration).
    pub iterations: usize,
    /// Recurrence residual norm relative to `‖b‖` at exit.
    pub final_relative_residual: f64,
    pub converged: bool,
    /// Relative residual after each iteration, starting with iteration zero.
    pub residual_norms: Vec<f64>,
}

/// Solves `A x = b` for symmetric positive definite `A`.
///
/// Runs at most `max_iters` iterations and stops once the relative residual
/// drops to `tol`. Non-convergence is reported through the `converged` flag
/// with the final iterate returned; indefiniteness or non-finite arithmetic
/// is an error.
pub fn cg_solve(
    a: &dyn LinearOperator,
    b: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<CgResult> {
    let n = a.size();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    if !tol.is_finite() || tol <= 0.0 || max_iters == 0 {
        return Err(Error::InvalidArgument(
            "cg requires tol > 0 and max_iters >= 1".into(),
        ));
    }
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(CgResult {
            solution: DVector::zeros(n),
            iterations: 0,
            final_relative_residual: 0.0,
            converged: true,
            residual_norms: vec![0.0],
        });
    }

    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut p = b.clone();
    let mut rs = r.norm_squared();
    let mut history = vec![rs.sqrt() / b_norm];

    for k in 1..=max_iters {
        let ap = a.apply(&p);
        let p_ap = p.dot(&ap);
        if !p_ap.is_finite() || p_ap <= 0.0 {
            return Err(Error::NumericalBreakdown {
                iteration: k,
                detail: format!("nonpositive curvature p·Ap = {p_ap:.3e}; operator not SPD"),
            });
        }
        let alpha = rs / p_ap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rs_new = r.norm_squared();
        if !rs_new.is_finite() {
            return Err(Error::NumericalBreakdown {
                iteration: k,
                detail: "residual became non-finite".into(),
            });
        }
        let rel = rs_new.sqrt() / b_norm;
        history.push(rel);
        if rel <= tol {
            return Ok(CgResult {
                solution: x,
                iterations: k,
                final_relative_residual: rel,
                converged: true,
                residual_norms: history,
            });
        }
        let beta = rs_new / rs;
        p = &r + beta * p;
        rs = rs_new;
    }

    let rel = rs.sqrt() / b_norm;
    Ok(CgResult {
        solution: x,
        iterations: max_iters,
        final_relative_residual: rel,
        converged: false,
        residual_norms: history,
    })
}

/// Rank-`max_rank` Lanczos factorization `A ≈ Q T Qᵀ` started from `probe`.
///
/// Every retained column costs exactly one operator apply. Columns are kept
/// orthonormal by two full Gram-Schmidt passes against the current basis.
/// When the next off-diagonal falls below `LANCZOS_BREAKDOWN_RTOL` times an
/// estimate of `‖A‖`, the Krylov space is exhausted and the factorization
/// returns early with the rank reached; that is a normal exit, not an error.
pub fn lanczos_decompose(
    a: &dyn LinearOperator,
    probe: &DVector<f64>,
    max_rank: usize,
) -> Result<LanczosFactor> {
    let n = a.size();
    if probe.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: probe.len(),
        });
    }
    if max_rank == 0 || max_rank > n {
        return Err(Error::InvalidArgument(format!(
            "lanczos rank must lie in 1..={n}, got {max_rank}"
        )));
    }
    let probe_norm = probe.norm();
    if probe_norm == 0.0 || !probe_norm.is_finite() {
        return Err(Error::InvalidArgument(
            "lanczos probe must be nonzero and finite".into(),
        ));
    }

    let mut columns: Vec<DVector<f64>> = vec![probe / probe_norm];
    let mut alpha: Vec<f64> = Vec::with_capacity(max_rank);
    let mut beta: Vec<f64> = Vec::with_capacity(max_rank.saturating_sub(1));
    let mut a_norm_est: f64 = 0.0;

    for j in 0..max_rank {
        let q_j = columns[j].clone();
        let mut w = a.apply(&q_j);
        let a_j = q_j.dot(&w);
        if !a_j.is_finite() {
            return Err(Error::NumericalBreakdown {
                iteration: j,
                detail: "non-finite diagonal entry".into(),
            });
        }
        alpha.push(a_j);
        w.axpy(-a_j, &q_j, 1.0);
        if j > 0 {
            w.axpy(-beta[j - 1], &columns[j - 1], 1.0);
        }
        // Full reorthogonalization, two passes.
        for _ in 0..2 {
            for q in &columns {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let b_j = w.norm();
        if !b_j.is_finite() {
            return Err(Error::NumericalBreakdown {
                iteration: j,
                detail: "non-finite off-diagonal entry".into(),
            });
        }
        let prev_beta = if j > 0 { beta[j - 1] } else { 0.0 };
        a_norm_est = a_norm_est.max(a_j.abs() + prev_beta + b_j);
        if j + 1 == max_rank {
            break;
        }
        if b_j <= LANCZOS_BREAKDOWN_RTOL * a_norm_est {
            break;
        }
        beta.push(b_j);
        columns.push(w / b_j);
    }

    let rank = alpha.len();
    let q = DMatrix::from_columns(&columns[..rank]);
    LanczosFactor::new(
        q,
        DVector::from_vec(alpha),
        DVector::from_vec(beta[..rank - 1].to_vec()),
    )
}

/// Stochastic Lanczos quadrature estimate of `log det A`.
#[derive(Clone, Debug)]
pub struct SlqEstimate {
    pub logdet: f64,
    pub num_probes: usize,
    pub rank: usize,
    pub probe_seed: u64,
    /// Ritz values clamped to `RITZ_VALUE_FLOOR` before the logarithm;
    /// nonzero counts signal a spectrum brushing against zero.
    pub clamped_ritz_count: usize,
}

/// Estimates `log det A` for SPD `A` by Gauss quadrature on `num_probes`
/// seeded unit-norm Gaussian probes, each expanded to a rank-`rank` Lanczos
/// factorization.
///
/// The estimate is `n / num_probes · Σ_probes Σ_j τ_j² log θ_j`, where
/// `(θ_j, τ_j)` are the Ritz values of the probe's tridiagonal matrix and
/// the first components of its eigenvectors. Probes are drawn from per-index
/// streams of `probe_seed`, so the estimate is reproducible and independent
/// of evaluation order.
pub fn slq_logdet(
    a: &dyn LinearOperator,
    num_probes: usize,
    rank: usize,
    probe_seed: u64,
) -> Result<SlqEstimate> {
    let n = a.size();
    if num_probes == 0 || rank == 0 {
        return Err(Error::InvalidArgument(
            "slq requires at least one probe and rank >= 1".into(),
        ));
    }
    let rank = rank.min(n);
    let mut acc = 0.0;
    let mut clamped = 0usize;
    for i in 0..num_probes {
        let probe = unit_probe(probe_seed, i as u64, n);
        let factor = lanczos_decompose(a, &probe, rank)?;
        let eig = factor.tridiagonal_dense().symmetric_eigen();
        for (j, &theta) in eig.eigenvalues.iter().enumerate() {
            let tau = eig.eigenvectors[(0, j)];
            let value = if theta > RITZ_VALUE_FLOOR {
                theta
            } else {
                clamped += 1;
                RITZ_VALUE_FLOOR
            };
            acc += tau * tau * value.ln();
        }
    }
    Ok(SlqEstimate {
        logdet: n as f64 * acc / num_probes as f64,
        num_probes,
        rank,
        probe_seed,
        clamped_ritz_count: clamped,
    })
}
