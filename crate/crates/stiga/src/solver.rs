//! Preconditioned conjugate gradients over matrix-free operators, with
//! convergence reporting, and Lanczos probes for the extreme generalized
//! eigenvalues of an (operator, preconditioner) pencil.

use crate::dense::{lu_factor, sym_tridiag_eigenvalues, LuFactors};
use crate::error::{Error, Result};
use crate::kronecker::LinearOperator;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Conjugate-gradient settings. The stopping test is the relative 2-norm of
/// the (recurrence) residual against the right-hand side; the true residual
/// is recomputed afterwards and reported.
#[derive(Clone, Debug)]
pub struct PcgConfig {
    pub tol: f64,
    /// Defaults to `10 sqrt(n)`, clamped to `[50, 20000]`.
    pub max_iter: Option<usize>,
    pub initial_guess: Option<Vec<f64>>,
}

impl Default for PcgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            initial_guess: None,
        }
    }
}

impl PcgConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn validate(&self, n: usize) -> Result<usize> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance {} outside (0, 1)",
                self.tol
            )));
        }
        let max_iter = self
            .max_iter
            .unwrap_or_else(|| ((10.0 * (n as f64).sqrt()).ceil() as usize).clamp(50, 20_000));
        if max_iter < 1 {
            return Err(Error::InvalidConfig("max iterations must be >= 1".into()));
        }
        if let Some(x0) = &self.initial_guess {
            if x0.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: x0.len(),
                });
            }
        }
        Ok(max_iter)
    }
}

/// Iteration counts, residual history and timer/flop breakdown of one solve.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    /// Recurrence residual at exit, relative to `||b||`.
    pub final_relative_residual: f64,
    /// `||b - A x|| / ||b||` recomputed from scratch at exit.
    pub true_relative_residual: f64,
    pub residual_history: Vec<f64>,
    pub operator_seconds: f64,
    pub precond_seconds: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator; `pc` applies the preconditioner inverse. Running out of
/// iterations is reported through the stats, not as an error; a breakdown of
/// the recurrence (indefiniteness, NaN) is.
pub fn pcg(
    op: &dyn LinearOperator,
    pc: &dyn LinearOperator,
    b: &[f64],
    cfg: &PcgConfig,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let max_iter = cfg.validate(n)?;
    let mut stats = SolveStats::default();

    let b_norm = norm2(b);
    if b_norm == 0.0 {
        stats.converged = true;
        return Ok((vec![0.0; n], stats));
    }

    let mut x = cfg.initial_guess.clone().unwrap_or_else(|| vec![0.0; n]);
    let mut r = if x.iter().all(|&v| v == 0.0) {
        b.to_vec()
    } else {
        let t0 = Instant::now();
        let ax = op.apply(&x);
        stats.operator_seconds += t0.elapsed().as_secs_f64();
        b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect()
    };

    let t0 = Instant::now();
    let mut z = pc.apply(&r);
    stats.precond_seconds += t0.elapsed().as_secs_f64();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rel = norm2(&r) / b_norm;
    if rel <= cfg.tol {
        stats.converged = true;
        stats.final_relative_residual = rel;
        stats.true_relative_residual = rel;
        return Ok((x, stats));
    }

    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        let t0 = Instant::now();
        op.apply_into(&p, &mut ap);
        stats.operator_seconds += t0.elapsed().as_secs_f64();
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::NumericalBreakdown(format!(
                "conjugate gradient curvature {pap} is not positive"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        stats.iterations += 1;
        rel = norm2(&r) / b_norm;
        if !rel.is_finite() {
            return Err(Error::NumericalBreakdown(
                "residual is no longer finite".into(),
            ));
        }
        stats.residual_history.push(rel);
        if rel <= cfg.tol {
            stats.converged = true;
            break;
        }
        let t0 = Instant::now();
        pc.apply_into(&r, &mut z);
        stats.precond_seconds += t0.elapsed().as_secs_f64();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    stats.final_relative_residual = rel;
    let ax = op.apply(&x);
    let mut true_res = 0.0;
    for i in 0..n {
        let d = b[i] - ax[i];
        true_res += d * d;
    }
    stats.true_relative_residual = true_res.sqrt() / b_norm;
    Ok((x, stats))
}

/// Largest relative symmetry defect `|r^T Ps - s^T Pr|` of an operator over a
/// few seeded random pairs, normalized by the magnitudes involved.
pub fn symmetry_defect(op: &dyn LinearOperator, seed: u64, pairs: usize) -> f64 {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ps = op.apply(&s);
        let pr = op.apply(&r);
        let a = dot(&r, &ps);
        let b = dot(&s, &pr);
        let scale = a.abs().max(b.abs()).max(1e-300);
        worst = worst.max((a - b).abs() / scale);
    }
    worst
}

/// Identity preconditioner (plain conjugate gradients).
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

/// Exact dense inverse behind the operator interface; the `exact-small`
/// preconditioner for tiny instances.
pub struct DenseInverse {
    lu: LuFactors,
    n: usize,
}

impl DenseInverse {
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        Ok(Self {
            lu: lu_factor(a)?,
            n: a.nrows(),
        })
    }
}

impl LinearOperator for DenseInverse {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.lu.solve_vec(x));
    }
}

/// Extreme generalized eigenvalues of the pencil `(A, P)` by Lanczos on
/// `P^{-1} A` in the P-inner product, with full reorthogonalization.
///
/// `p_inv` applies `P^{-1}`, `p_op` applies `P`. Both extremes are polished
/// until their relative change over a probe interval drops below `tol`.
pub fn pencil_extreme_eigenvalues(
    a_op: &dyn LinearOperator,
    p_op: &dyn LinearOperator,
    p_inv: &dyn LinearOperator,
    max_steps: usize,
    tol: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = a_op.dim();
    let steps = max_steps.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut q: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut pq: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut alpha: Vec<f64> = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);

    let v0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pv0 = p_op.apply(&v0);
    let nrm = dot(&v0, &pv0).sqrt();
    if !(nrm > 0.0) {
        return Err(Error::NumericalBreakdown("degenerate start vector".into()));
    }
    q.push(v0.iter().map(|v| v / nrm).collect());
    pq.push(pv0.iter().map(|v| v / nrm).collect());

    let mut last = (f64::NAN, f64::NAN);
    for j in 0..steps {
        let z = a_op.apply(&q[j]);
        let mut w = p_inv.apply(&z);
        let aj = dot(&q[j], &z);
        alpha.push(aj);
        for i in 0..n {
            w[i] -= aj * q[j][i];
        }
        if j > 0 {
            let bj = beta[j - 1];
            for i in 0..n {
                w[i] -= bj * q[j - 1][i];
            }
        }
        // Full reorthogonalization in the P-inner product, twice.
        for _ in 0..2 {
            for (qi, pqi) in q.iter().zip(pq.iter()) {
                let c = dot(&w, pqi);
                if c != 0.0 {
                    for i in 0..n {
                        w[i] -= c * qi[i];
                    }
                }
            }
        }
        let pw = p_op.apply(&w);
        let bj = dot(&w, &pw);
        let bj = if bj > 0.0 { bj.sqrt() } else { 0.0 };
        if bj <= 1e-14 {
            break;
        }
        beta.push(bj);
        q.push(w.iter().map(|v| v / bj).collect());
        pq.push(pw.iter().map(|v| v / bj).collect());

        if (j + 1) % 10 == 0 || j + 1 == steps {
            let vals = sym_tridiag_eigenvalues(&alpha, &beta[..alpha.len() - 1])?;
            let lo = vals[0];
            let hi = vals[vals.len() - 1];
            if last.0.is_finite() {
                let dlo = (lo - last.0).abs() / lo.abs().max(1e-300);
                let dhi = (hi - last.1).abs() / hi.abs().max(1e-300);
                if dlo < tol && dhi < tol {
                    return Ok((lo, hi));
                }
            }
            last = (lo, hi);
        }
    }
    if alpha.is_empty() {
        return Err(Error::NumericalBreakdown("lanczos made no progress".into()));
    }
    let vals = sym_tridiag_eigenvalues(&alpha, &beta[..alpha.len().saturating_sub(1)])?;
    Ok((vals[0], vals[vals.len() - 1]))
}
