//! Fast-diagonalization preconditioning: generalized eigendecomposition of
//! the univariate pencils, the Sylvester-like solve through mode products,
//! and the geometry-aware variant built on separable coefficient
//! approximation with diagonal scaling.

use crate::assembly::ParametricFactors;
use crate::dense::{cholesky, solve_lower_mat, solve_lower_transpose_mat, sym_eig};
use crate::error::{Error, Result};
use crate::flops::{self, Category};
use crate::geometry::GeometryMap;
use crate::kronecker::{mode_multiply_flops, LinearOperator, Tensor};
use crate::splines::{QuadratureGrid, TensorSpace};
use ndarray::Array2;

/// Eigenvectors and eigenvalues of one pencil `K U = M U diag(lambda)`,
/// normalized so `U^T M U = I`.
#[derive(Clone, Debug)]
pub struct GeneralizedEigenPair {
    pub u: Array2<f64>,
    pub lambda: Vec<f64>,
}

impl GeneralizedEigenPair {
    /// Relative residual `max |K U - M U diag(lambda)| / max |K|`.
    pub fn residual(&self, k: &Array2<f64>, m: &Array2<f64>) -> f64 {
        let ku = k.dot(&self.u);
        let mut mul = m.dot(&self.u);
        for (j, &l) in self.lambda.iter().enumerate() {
            mul.column_mut(j).mapv_inplace(|v| v * l);
        }
        let scale = k.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        (&ku - &mul).iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale
    }
}

/// Generalized symmetric eigendecomposition via Cholesky reduction:
/// `M = L L^T`, a standard symmetric solve of `L^{-1} K L^{-T}`, and the
/// back-transform `U = L^{-T} Q`.
pub fn generalized_eig(k: &Array2<f64>, m: &Array2<f64>) -> Result<GeneralizedEigenPair> {
    let n = k.nrows();
    if k.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.nrows(),
        });
    }
    let l = cholesky(m)?;
    let half = solve_lower_mat(&l, k);
    let c_raw = solve_lower_mat(&l, &half.t().to_owned());
    // Symmetrize away the rounding skew before the eigensolve.
    let c = 0.5 * (&c_raw + &c_raw.t());
    let (lambda, q) = sym_eig(&c)?;
    let u = solve_lower_transpose_mat(&l, &q);
    Ok(GeneralizedEigenPair { u, lambda })
}

/// Separable (rank-one per direction) approximation of the geometry
/// coefficients, sampled at the quadrature points of each direction.
#[derive(Clone, Debug)]
pub struct SeparableCoefficient {
    /// Mass weights per spatial direction, at that direction's quadrature points.
    pub mu: Vec<Vec<f64>>,
    /// Second-derivative weights per spatial direction.
    pub omega: Vec<Vec<f64>>,
    /// Temporal mass weight samples.
    pub mu_t: Vec<f64>,
    /// Temporal derivative weight samples.
    pub omega_t: Vec<f64>,
    /// Largest relative rank-one reconstruction error at element midpoints.
    pub separation_residual: f64,
}

impl SeparableCoefficient {
    /// All weights equal to one constant; handy in tests.
    pub fn constant(space: &TensorSpace, quad: &QuadratureGrid, value: f64) -> Self {
        let d = space.dim();
        Self {
            mu: (0..d)
                .map(|k| vec![value; quad.spatial[k].num_points()])
                .collect(),
            omega: (0..d)
                .map(|k| vec![value; quad.spatial[k].num_points()])
                .collect(),
            mu_t: vec![value; quad.temporal.num_points()],
            omega_t: vec![value; quad.temporal.num_points()],
            separation_residual: 0.0,
        }
    }
}

// Piecewise-linear extension of per-element midpoint values to arbitrary
// points, constant beyond the outermost midpoints.
fn interp_midpoints(mids: &[f64], values: &[f64], x: f64) -> f64 {
    if x <= mids[0] {
        return values[0];
    }
    if x >= mids[mids.len() - 1] {
        return values[values.len() - 1];
    }
    let mut i = 0;
    while mids[i + 1] < x {
        i += 1;
    }
    let t = (x - mids[i]) / (mids[i + 1] - mids[i]);
    values[i] * (1.0 - t) + values[i + 1] * t
}

/// Separable approximation of the geometry coefficients
/// `c_tau = |det J| / T` and `c_k = ||grad_x eta_k||^4 |det J| T`, where
/// `grad_x eta_k` is the k-th row of the inverse Jacobian.
///
/// Samples one point per element (the midpoint grid) and fits the shared
/// factorization `c_tau ~ mu_1...mu_d omega_t`,
/// `c_k ~ mu_1...omega_k...mu_d mu_t` jointly, by alternating geometric-mean
/// sweeps (block descent on the log-space least-squares problem) until the
/// update drops below 1e-8 or 50 sweeps. The temporal factors are the exact
/// constants `omega_t = 1/T`, `mu_t = T`. Factors are extended to quadrature
/// points by piecewise-linear interpolation. The fit is exact on separable
/// coefficients (e.g. axis-aligned affine maps); the worst relative
/// reconstruction error over all coefficients is recorded.
pub fn separable_approx(
    geom: &GeometryMap,
    space: &TensorSpace,
    quad: &QuadratureGrid,
) -> Result<SeparableCoefficient> {
    let d = space.dim();
    let t_final = geom.final_time();
    let mids: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            quad.spatial[k]
                .spans
                .iter()
                .map(|&(a, b)| 0.5 * (a + b))
                .collect::<Vec<f64>>()
        })
        .collect();
    let dims: Vec<usize> = mids.iter().map(|m| m.len()).collect();
    let total: usize = dims.iter().product();
    let decomp = |flat: usize| {
        let mut rem = flat;
        let mut id = [0usize; 3];
        for (k, &dk) in dims.iter().enumerate() {
            id[k] = rem % dk;
            rem /= dk;
        }
        id
    };

    // Midpoint samples of log c_tau and log c_k.
    let mut log_ctau = Tensor::zeros(dims.clone());
    let mut log_ck = vec![Tensor::zeros(dims.clone()); d];
    let mut eta = vec![0.0f64; d];
    for flat in 0..total {
        let id = decomp(flat);
        for k in 0..d {
            eta[k] = mids[k][id[k]];
        }
        let pd = geom.eval(&eta)?;
        let det = pd.det.abs();
        if det <= 0.0 {
            return Err(Error::NonpositiveCoefficient {
                direction: 0,
                value: det,
            });
        }
        log_ctau.data_mut()[flat] = (det / t_final).ln();
        for k in 0..d {
            let mut row_sq = 0.0;
            for j in 0..d {
                row_sq += pd.jac_inv[k][j] * pd.jac_inv[k][j];
            }
            log_ck[k].data_mut()[flat] = (row_sq * row_sq * det * t_final).ln();
        }
    }

    // Joint alternating fit in log space. The temporal parts are pinned to
    // their exact values; mu_j is shared by the c_tau constraint and every
    // c_k with k != j, omega_k belongs to c_k alone.
    let log_mu_t = t_final.ln();
    let log_omega_t = -t_final.ln();
    let mut m: Vec<Vec<f64>> = dims.iter().map(|&n| vec![0.0; n]).collect();
    let mut w: Vec<Vec<f64>> = dims.iter().map(|&n| vec![0.0; n]).collect();
    for _sweep in 0..50 {
        let mut update: f64 = 0.0;
        for j in 0..d {
            let mut sums = vec![0.0f64; dims[j]];
            let mut counts = vec![0usize; dims[j]];
            for flat in 0..total {
                let id = decomp(flat);
                let mut r = log_ctau.data()[flat] - log_omega_t;
                for l in 0..d {
                    if l != j {
                        r -= m[l][id[l]];
                    }
                }
                sums[id[j]] += r;
                counts[id[j]] += 1;
                for k in 0..d {
                    if k == j {
                        continue;
                    }
                    let mut r = log_ck[k].data()[flat] - log_mu_t - w[k][id[k]];
                    for l in 0..d {
                        if l != j && l != k {
                            r -= m[l][id[l]];
                        }
                    }
                    sums[id[j]] += r;
                    counts[id[j]] += 1;
                }
            }
            for i in 0..dims[j] {
                let new = sums[i] / counts[i] as f64;
                update = update.max((new - m[j][i]).abs());
                m[j][i] = new;
            }
        }
        for k in 0..d {
            let mut sums = vec![0.0f64; dims[k]];
            let mut counts = vec![0usize; dims[k]];
            for flat in 0..total {
                let id = decomp(flat);
                let mut r = log_ck[k].data()[flat] - log_mu_t;
                for j in 0..d {
                    if j != k {
                        r -= m[j][id[j]];
                    }
                }
                sums[id[k]] += r;
                counts[id[k]] += 1;
            }
            for i in 0..dims[k] {
                let new = sums[i] / counts[i] as f64;
                update = update.max((new - w[k][i]).abs());
                w[k][i] = new;
            }
        }
        if update < 1e-8 {
            break;
        }
    }

    // Worst relative reconstruction error over all d+1 coefficients.
    let mut residual: f64 = 0.0;
    for flat in 0..total {
        let id = decomp(flat);
        let mut r = log_ctau.data()[flat] - log_omega_t;
        for l in 0..d {
            r -= m[l][id[l]];
        }
        residual = residual.max((r.exp() - 1.0).abs());
        for k in 0..d {
            let mut r = log_ck[k].data()[flat] - log_mu_t - w[k][id[k]];
            for l in 0..d {
                if l != k {
                    r -= m[l][id[l]];
                }
            }
            residual = residual.max((r.exp() - 1.0).abs());
        }
    }

    // Extend to quadrature points.
    let mut mu = Vec::with_capacity(d);
    let mut omega = Vec::with_capacity(d);
    for k in 0..d {
        let mu_elem: Vec<f64> = m[k].iter().map(|v| v.exp()).collect();
        let omega_elem: Vec<f64> = w[k].iter().map(|v| v.exp()).collect();
        let pts = &quad.spatial[k].points;
        let mu_k: Vec<f64> = pts
            .iter()
            .map(|&x| interp_midpoints(&mids[k], &mu_elem, x))
            .collect();
        let om_k: Vec<f64> = pts
            .iter()
            .map(|&x| interp_midpoints(&mids[k], &omega_elem, x))
            .collect();
        if mu_k.iter().chain(om_k.iter()).any(|&v| v <= 0.0) {
            return Err(Error::NonpositiveCoefficient {
                direction: k,
                value: 0.0,
            });
        }
        mu.push(mu_k);
        omega.push(om_k);
    }
    let nt_pts = quad.temporal.num_points();
    Ok(SeparableCoefficient {
        mu,
        omega,
        mu_t: vec![t_final; nt_pts],
        omega_t: vec![1.0 / t_final; nt_pts],
        separation_residual: residual,
    })
}

/// The fast-diagonalization preconditioner: one generalized eigen-pair per
/// direction plus the combined inverse diagonal, with an optional symmetric
/// diagonal scaling for the geometry-aware variant.
#[derive(Clone, Debug)]
pub struct FdPreconditioner {
    spatial: Vec<GeneralizedEigenPair>,
    temporal: GeneralizedEigenPair,
    dims: Vec<usize>,
    inv_diag: Vec<f64>,
    /// `D^{-1/2}` entries when diagonally scaled.
    scale: Option<Vec<f64>>,
    max_pencil_residual: f64,
}

/// Builds the preconditioner from parametric factor matrices. Passing the
/// diagonal of the system operator turns on the symmetric diagonal scaling
/// `D^{1/2} P D^{1/2}` with `D_ii = A_ii / P_ii`; the diagonal of `P` is
/// computed from the factor diagonals, never from the assembled operator.
pub fn build_fd(factors: &ParametricFactors, system_diag: Option<&[f64]>) -> Result<FdPreconditioner> {
    let d = factors.j_hat.len();
    let temporal = generalized_eig(&factors.kt_hat, &factors.mt_hat)?;
    let mut spatial = Vec::with_capacity(d);
    for k in 0..d {
        spatial.push(generalized_eig(&factors.j_hat[k], &factors.m_hat[k])?);
    }
    let mut max_res = temporal.residual(&factors.kt_hat, &factors.mt_hat);
    for k in 0..d {
        max_res = max_res.max(spatial[k].residual(&factors.j_hat[k], &factors.m_hat[k]));
    }

    let mut dims: Vec<usize> = spatial.iter().map(|p| p.lambda.len()).collect();
    dims.push(temporal.lambda.len());
    let total: usize = dims.iter().product();

    let mut inv_diag = vec![0.0f64; total];
    let mut idx = vec![0usize; d + 1];
    for (flat, slot) in inv_diag.iter_mut().enumerate() {
        let mut rem = flat;
        for (k, &dk) in dims.iter().enumerate() {
            idx[k] = rem % dk;
            rem /= dk;
        }
        let mut sum = temporal.lambda[idx[d]];
        for k in 0..d {
            sum += spatial[k].lambda[idx[k]];
        }
        if !(sum > 0.0) {
            return Err(Error::NumericalBreakdown(format!(
                "nonpositive eigenvalue sum {sum} in the diagonal solve"
            )));
        }
        *slot = 1.0 / sum;
    }

    let scale = match system_diag {
        None => None,
        Some(diag_a) => {
            if diag_a.len() != total {
                return Err(Error::DimensionMismatch {
                    expected: total,
                    got: diag_a.len(),
                });
            }
            // diag(P) from the univariate factor diagonals.
            let mut s = vec![0.0f64; total];
            for (flat, slot) in s.iter_mut().enumerate() {
                let mut rem = flat;
                for (k, &dk) in dims.iter().enumerate() {
                    idx[k] = rem % dk;
                    rem /= dk;
                }
                let mut mass_prod = 1.0;
                for k in 0..d {
                    mass_prod *= factors.m_hat[k][(idx[k], idx[k])];
                }
                let mut diag_p = factors.kt_hat[(idx[d], idx[d])] * mass_prod;
                for k in 0..d {
                    let mut term = factors.mt_hat[(idx[d], idx[d])]
                        * factors.j_hat[k][(idx[k], idx[k])];
                    for j in 0..d {
                        if j != k {
                            term *= factors.m_hat[j][(idx[j], idx[j])];
                        }
                    }
                    diag_p += term;
                }
                let ratio = diag_p / diag_a[flat];
                if !(ratio > 0.0) {
                    return Err(Error::NonpositiveScaling {
                        index: flat,
                        value: ratio,
                    });
                }
                *slot = ratio.sqrt();
            }
            Some(s)
        }
    };

    Ok(FdPreconditioner {
        spatial,
        temporal,
        dims,
        inv_diag,
        scale,
        max_pencil_residual: max_res,
    })
}

impl FdPreconditioner {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn max_pencil_residual(&self) -> f64 {
        self.max_pencil_residual
    }

    pub fn is_scaled(&self) -> bool {
        self.scale.is_some()
    }

    pub fn spatial_pairs(&self) -> &[GeneralizedEigenPair] {
        &self.spatial
    }

    pub fn temporal_pair(&self) -> &GeneralizedEigenPair {
        &self.temporal
    }

    /// Solves `P s = r` (or realizes `(P^G)^{-1} r` when scaled): transform
    /// by the eigenvector basis, divide by the eigenvalue sums, transform
    /// back.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.inv_diag.len() {
            return Err(Error::DimensionMismatch {
                expected: self.inv_diag.len(),
                got: r.len(),
            });
        }
        let d = self.dims.len() - 1;
        let mut work = Tensor::from_vec(self.dims.clone(), r.to_vec());
        if let Some(s) = &self.scale {
            for (v, si) in work.data_mut().iter_mut().zip(s.iter()) {
                *v *= si;
            }
        }
        let mut transform_flops: u64 = 0;
        for k in 0..d {
            transform_flops += mode_multiply_flops(work.dims(), k, self.spatial[k].u.ncols());
            work = work.mode_multiply_transposed(&self.spatial[k].u, k)?;
        }
        transform_flops += mode_multiply_flops(work.dims(), d, self.temporal.u.ncols());
        work = work.mode_multiply_transposed(&self.temporal.u, d)?;
        for (v, inv) in work.data_mut().iter_mut().zip(self.inv_diag.iter()) {
            *v *= inv;
        }
        for k in 0..d {
            transform_flops += mode_multiply_flops(work.dims(), k, self.spatial[k].u.nrows());
            work = work.mode_multiply(&self.spatial[k].u, k)?;
        }
        transform_flops += mode_multiply_flops(work.dims(), d, self.temporal.u.nrows());
        work = work.mode_multiply(&self.temporal.u, d)?;
        if let Some(s) = &self.scale {
            for (v, si) in work.data_mut().iter_mut().zip(s.iter()) {
                *v *= si;
            }
        }
        flops::add(Category::FdTransform, transform_flops);
        Ok(work.into_vec())
    }
}

impl LinearOperator for FdPreconditioner {
    fn dim(&self) -> usize {
        self.inv_diag.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let out = self.solve(x).expect("preconditioner dimensions checked at build");
        y.copy_from_slice(&out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_parametric_factors;
    use crate::geometry::{make_domain, DomainName};
    use crate::kronecker::dense_kron;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let b = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let mut a = b.t().dot(&b);
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        a
    }

    #[test]
    fn identity_pencil() {
        let eye = Array2::<f64>::eye(4);
        let pair = generalized_eig(&eye, &eye).unwrap();
        for &l in &pair.lambda {
            assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);
        }
        let qtq = pair.u.t().dot(&pair.u);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(qtq[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_pencil() {
        let k = array![[1.0, 0.0], [0.0, 4.0]];
        let m = Array2::<f64>::eye(2);
        let pair = generalized_eig(&k, &m).unwrap();
        assert_abs_diff_eq!(pair.lambda[0], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(pair.lambda[1], 4.0, epsilon = 1e-13);
    }

    #[test]
    fn random_pencil_residual_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &n in &[3usize, 8, 17] {
            let k = {
                let b = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
                0.5 * (&b + &b.t())
            };
            let m = random_spd(n, &mut rng);
            let pair = generalized_eig(&k, &m).unwrap();
            assert!(pair.residual(&k, &m) <= 1e-10);
            // U^T M U = I and U^T K U = diag(lambda).
            let utmu = pair.u.t().dot(&m).dot(&pair.u);
            let utku = pair.u.t().dot(&k).dot(&pair.u);
            for i in 0..n {
                for j in 0..n {
                    let eye = if i == j { 1.0 } else { 0.0 };
                    let lam = if i == j { pair.lambda[i] } else { 0.0 };
                    assert_abs_diff_eq!(utmu[(i, j)], eye, epsilon = 1e-10);
                    assert_abs_diff_eq!(utku[(i, j)], lam, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_indefinite_mass() {
        let k = Array2::<f64>::eye(2);
        let m = array![[1.0, 3.0], [3.0, 1.0]];
        assert!(generalized_eig(&k, &m).is_err());
    }

    fn identity_factors(n_s: usize, n_t: usize) -> ParametricFactors {
        ParametricFactors {
            kt_hat: Array2::eye(n_t),
            mt_hat: Array2::eye(n_t),
            j_hat: vec![Array2::eye(n_s)],
            m_hat: vec![Array2::eye(n_s)],
        }
    }

    #[test]
    fn identity_factors_halve_the_input() {
        // P = I (x) I + I (x) I = 2 I, so the solve returns r / 2.
        let fd = build_fd(&identity_factors(2, 2), None).unwrap();
        let r = vec![1.0, 2.0, 3.0, 4.0];
        let s = fd.solve(&r).unwrap();
        for (si, ri) in s.iter().zip(r.iter()) {
            assert_abs_diff_eq!(*si, ri / 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn solve_inverts_dense_preconditioner() {
        // Unit cube factors at small size: materialize P densely through its
        // Kronecker structure and check P * solve(r) = r.
        let space = TensorSpace::uniform(3, 2, 2, 2).unwrap();
        let quad = QuadratureGrid::for_space(&space, false).unwrap();
        let pf = assemble_parametric_factors(&space, None, &quad).unwrap();
        let fd = build_fd(&pf, None).unwrap();
        let op = pf.operator().unwrap();
        let n = op.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = fd.solve(&r).unwrap();
            let back = op.apply(&s);
            let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err: f64 = back
                .iter()
                .zip(r.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err / rnorm <= 1e-10, "relative defect {}", err / rnorm);
        }
        assert!(fd.max_pencil_residual() <= 1e-10);
    }

    #[test]
    fn scaled_solve_inverts_scaled_operator() {
        // Geometry-aware variant on the annulus: (P^G)^{-1} must invert
        // D^{1/2} P D^{1/2.}.
        let space = TensorSpace::uniform(2, 2, 2, 3).unwrap();
        let geom = make_domain(DomainName::QuarterAnnulus2d, 1.0).unwrap();
        let quad = QuadratureGrid::for_space(&space, false).unwrap();
        let fm = crate::assembly::assemble_system(&space, &geom, &quad, 1).unwrap();
        let a_op = fm.operator().unwrap();
        let sep = separable_approx(&geom, &space, &quad).unwrap();
        let pf = assemble_parametric_factors(&space, Some(&sep), &quad).unwrap();
        let fd = build_fd(&pf, Some(&a_op.diagonal())).unwrap();
        let inner = pf.operator().unwrap();
        let diag_a = a_op.diagonal();
        let diag_p = inner.diagonal();
        let scaled = crate::kronecker::SymmetricallyScaled {
            inner,
            scale: diag_a
                .iter()
                .zip(diag_p.iter())
                .map(|(a, p)| (a / p).sqrt())
                .collect(),
        };
        let n = scaled.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = fd.solve(&r).unwrap();
        let back = scaled.apply(&s);
        let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = back
            .iter()
            .zip(r.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err / rnorm <= 1e-10, "relative defect {}", err / rnorm);
    }

    #[test]
    fn solve_is_linear_and_zero_preserving() {
        let space = TensorSpace::uniform(2, 2, 1, 2).unwrap();
        let quad = QuadratureGrid::for_space(&space, false).unwrap();
        let pf = assemble_parametric_factors(&space, None, &quad).unwrap();
        let fd = build_fd(&pf, None).unwrap();
        let n = fd.dim();
        assert!(fd.solve(&vec![0.0; n]).unwrap().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        let sa = fd.solve(&a).unwrap();
        let sb = fd.solve(&b).unwrap();
        let ssum = fd.solve(&sum).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(ssum[i], sa[i] + sb[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_inverts_dense_preconditioner_on_3d_benchmark_meshes() {
        // Benchmark configurations small enough to materialize densely.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (domain, p) in [
            (DomainName::UnitCube, 3usize),
            (DomainName::RotatedQuarterAnnulus3d, 2),
        ] {
            let space = TensorSpace::uniform(3, p, p, 4).unwrap();
            let geom = make_domain(domain, 1.0).unwrap();
            let quad = QuadratureGrid::for_space(&space, false).unwrap();
            let pf = match domain {
                DomainName::RotatedQuarterAnnulus3d => {
                    let sep = separable_approx(&geom, &space, &quad).unwrap();
                    assemble_parametric_factors(&space, Some(&sep), &quad).unwrap()
                }
                _ => assemble_parametric_factors(&space, None, &quad).unwrap(),
            };
            let fd = build_fd(&pf, None).unwrap();
            let op = pf.operator().unwrap();
            let n = op.dim();
            let dense = op.materialize();
            for _ in 0..10 {
                let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s = fd.solve(&r).unwrap();
                let mut defect = 0.0;
                let mut rnorm = 0.0;
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += dense[(i, j)] * s[j];
                    }
                    defect += (acc - r[i]) * (acc - r[i]);
                    rnorm += r[i] * r[i];
                }
                let rel = (defect / rnorm).sqrt();
                assert!(rel <= 1e-9, "{domain} p={p}: defect {rel:.2e}");
            }
        }
    }

    #[test]
    fn separable_approx_identity_map() {
        let space = TensorSpace::uniform(2, 2, 2, 3).unwrap();
        let geom = make_domain(DomainName::UnitSquare, 1.0).unwrap();
        let quad = QuadratureGrid::for_space(&space, false).unwrap();
        let sep = separable_approx(&geom, &space, &quad).unwrap();
        assert!(sep.separation_residual <= 1e-12);
        for k in 0..2 {
            assert!(sep.mu[k].iter().all(|&v| (v - 1.0).abs() <= 1e-12));
            assert!(sep.omega[k].iter().all(|&v| (v - 1.0).abs() <= 1e-12));
        }
        assert!(sep.mu_t.iter().all(|&v| (v - 1.0).abs() <= 1e-12));
        assert!(sep.omega_t.iter().all(|&v| (v - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn separable_approx_affine_map_is_exact() {
        use crate::splines::Basis1D;
        let c = 3.0;
        let bases = vec![
            Basis1D::open_uniform(1, 1).unwrap(),
            Basis1D::open_uniform(1, 1).unwrap(),
        ];
        let mut control = Vec::new();
        for i2 in 0..2 {
            for i1 in 0..2 {
                control.extend([c * i1 as f64, 0.5 * c * i2 as f64]);
            }
        }
        let geom = GeometryMap::new(bases, control, None, 2.0).unwrap();
        let space = TensorSpace::uniform(2, 2, 2, 4).unwrap();
        let quad = QuadratureGrid::for_space(&space, false).unwrap();
        let sep = separable_approx(&geom, &space, &quad).unwrap();
        // Constants are exactly separable; the sweep tolerance (1e-8 on log
        // updates) bounds what is left.
        assert!(
            sep.separation_residual <= 1e-7,
            "residual {}",
            sep.separation_residual
        );
        assert!(sep.mu.iter().flatten().all(|&v| v > 0.0));
        assert!(sep.omega.iter().flatten().all(|&v| v > 0.0));
    }

    #[test]
    fn separable_approx_annulus_reports_residual() {
        let space = TensorSpace::uniform(2, 2, 2, 8).unwrap();
        let geom = make_domain(DomainName::QuarterAnnulus2d, 1.0).unwrap();
        let quad = QuadratureGrid::for_space(&space, false).unwrap();
        let sep = separable_approx(&geom, &space, &quad).unwrap();
        assert!(sep.separation_residual > 0.0);
        assert!(sep.separation_residual.is_finite());
        assert!(sep.mu.iter().flatten().all(|&v| v > 0.0));
        assert!(sep.omega.iter().flatten().all(|&v| v > 0.0));
    }

    #[test]
    fn fd_transform_flop_count_matches_model() {
        // 4 N (d n_s + n_t) for the forward and backward transforms.
        let space = TensorSpace::uniform(3, 2, 2, 4).unwrap();
        let quad = QuadratureGrid::for_space(&space, false).unwrap();
        let pf = assemble_parametric_factors(&space, None, &quad).unwrap();
        let fd = build_fd(&pf, None).unwrap();
        let n = fd.dim() as u64;
        let n_s = space.n_s(0) as u64;
        let n_t = space.n_t() as u64;
        crate::flops::reset_all();
        let _ = fd.solve(&vec![1.0; fd.dim()]).unwrap();
        let measured = crate::flops::read(crate::flops::Category::FdTransform);
        let model = 4 * n * (3 * n_s + n_t);
        let ratio = measured as f64 / model as f64;
        assert!(
            (ratio - 1.0).abs() <= 0.10,
            "measured {measured} vs model {model}"
        );
    }

    #[test]
    fn parametric_operator_matches_dense_kron_sum() {
        // The explicit Kronecker-sum operator of the parametric factors equals
        // the dense sum of Kronecker products.
        let space = TensorSpace::uniform(2, 2, 1, 2).unwrap();
        let quad = QuadratureGrid::for_space(&space, false).unwrap();
        let pf = assemble_parametric_factors(&space, None, &quad).unwrap();
        let op = pf.operator().unwrap();
        let dense = op.materialize();
        let m1 = &pf.m_hat[0];
        let m2 = &pf.m_hat[1];
        let j1 = &pf.j_hat[0];
        let j2 = &pf.j_hat[1];
        let expect = dense_kron(&pf.kt_hat, &dense_kron(m2, m1))
            + dense_kron(&pf.mt_hat, &dense_kron(j2, m1))
            + dense_kron(&pf.mt_hat, &dense_kron(m2, j1));
        for (a, b) in dense.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
