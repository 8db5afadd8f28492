//! Small dense linear-algebra kernels: Cholesky, LU, triangular solves and a
//! symmetric eigensolver (Householder tridiagonalization followed by implicit
//! QL, after the classic EISPACK `tred2`/`tql2` routines).
//!
//! These run on the univariate pencils of the preconditioner setup, so they
//! charge their work to [`flops::Category::EigSetup`].

use crate::error::{Error, Result};
use crate::flops::{self, Category};
use ndarray::Array2;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    let mut count: u64 = 0;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite { row: j, pivot: d });
        }
        l[(j, j)] = d.sqrt();
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / l[(j, j)];
            count += 2 * j as u64 + 2;
        }
        count += 2 * j as u64 + 2;
    }
    flops::add(Category::EigSetup, count);
    Ok(l)
}

/// Solves `L X = B` with `L` lower triangular, `B` of shape `(n, m)`.
pub fn solve_lower_mat(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let m = b.ncols();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik != 0.0 {
                let (row_k, mut row_i) = x.multi_slice_mut((ndarray::s![k, ..], ndarray::s![i, ..]));
                row_i.zip_mut_with(&row_k, |xi, &xk| *xi -= lik * xk);
            }
        }
        let inv = 1.0 / l[(i, i)];
        x.row_mut(i).mapv_inplace(|v| v * inv);
    }
    flops::add(Category::EigSetup, (n as u64) * (n as u64) * (m as u64));
    x
}

/// Solves `L^T X = B` with `L` lower triangular, `B` of shape `(n, m)`.
pub fn solve_lower_transpose_mat(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let m = b.ncols();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[(k, i)];
            if lki != 0.0 {
                let (row_k, mut row_i) = x.multi_slice_mut((ndarray::s![k, ..], ndarray::s![i, ..]));
                row_i.zip_mut_with(&row_k, |xi, &xk| *xi -= lki * xk);
            }
        }
        let inv = 1.0 / l[(i, i)];
        x.row_mut(i).mapv_inplace(|v| v * inv);
    }
    flops::add(Category::EigSetup, (n as u64) * (n as u64) * (m as u64));
    x
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a
/// symmetric matrix.
pub fn sym_eig(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let mut z = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut z, &mut d, &mut e);
    tql2(&mut z, &mut d, &mut e).map_err(|sweeps| Error::EigenNonConvergence {
        n,
        sweeps,
        dump: dump_matrix(a),
    })?;

    // Sort ascending, permuting eigenvector columns to match.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (jnew, &jold) in order.iter().enumerate() {
        vectors.column_mut(jnew).assign(&z.column(jold));
    }
    Ok((values, vectors))
}

/// Eigenvalues (ascending) of a symmetric tridiagonal matrix given its
/// diagonal and subdiagonal (`off.len() == diag.len() - 1`).
pub fn sym_tridiag_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    assert_eq!(off.len(), n - 1);
    let mut z = Array2::<f64>::zeros((0, n));
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[1..].copy_from_slice(off);
    // tql2 expects the subdiagonal shifted down one slot before its own shift.
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    tql2_core(&mut z, &mut d, &mut e).map_err(|sweeps| Error::EigenNonConvergence {
        n,
        sweeps,
        dump: String::from("(tridiagonal)"),
    })?;
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(d)
}

// Householder reduction of `z` to tridiagonal form, accumulating the
// orthogonal transform in `z`. Diagonal in `d`, subdiagonal in `e[1..]`.
fn tred2(z: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    let mut count: u64 = 0;
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        let mut scale = 0.0;
        if l > 0 {
            for k in 0..=l {
                scale += z[(i, k)].abs();
            }
            if scale == 0.0 {
                e[i] = z[(i, l)];
            } else {
                for k in 0..=l {
                    z[(i, k)] /= scale;
                    h += z[(i, k)] * z[(i, k)];
                }
                let f = z[(i, l)];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[(i, l)] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    z[(j, i)] = z[(i, j)] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += z[(j, k)] * z[(i, k)];
                    }
                    for k in j + 1..=l {
                        g_acc += z[(k, j)] * z[(i, k)];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * z[(i, j)];
                    count += 2 * (l as u64 + 1);
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = z[(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        z[(j, k)] -= f * e[k] + g * z[(i, k)];
                    }
                    count += 4 * (j as u64 + 1);
                }
            }
        } else {
            e[i] = z[(i, l)];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    // Accumulate the transformation matrix.
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += z[(i, k)] * z[(k, j)];
                }
                for k in 0..i {
                    z[(k, j)] -= g * z[(k, i)];
                }
                count += 4 * i as u64;
            }
        }
        d[i] = z[(i, i)];
        z[(i, i)] = 1.0;
        for j in 0..i {
            z[(j, i)] = 0.0;
            z[(i, j)] = 0.0;
        }
    }
    flops::add(Category::EigSetup, count);
}

// Implicit-shift QL on a tridiagonal matrix with eigenvector accumulation.
// On entry `e[1..]` holds the subdiagonal; `z` holds the accumulated basis.
fn tql2(z: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) -> std::result::Result<(), usize> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    tql2_core(z, d, e)
}

fn tql2_core(z: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) -> std::result::Result<(), usize> {
    let n = d.len();
    let nrot = if z.nrows() == 0 { 0 } else { n };
    let mut count: u64 = 0;
    const MAX_SWEEPS: usize = 50;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            if iter == MAX_SWEEPS {
                return Err(iter);
            }
            iter += 1;
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..nrot {
                    f = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * f;
                    z[(k, i)] = c * z[(k, i)] - s * f;
                }
                count += 14 + 6 * nrot as u64;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    flops::add(Category::EigSetup, count);
    Ok(())
}

/// LU factorization with partial pivoting.
pub struct LuFactors {
    lu: Array2<f64>,
    piv: Vec<usize>,
}

pub fn lu_factor(a: &Array2<f64>) -> Result<LuFactors> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut lu = a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return Err(Error::NumericalBreakdown(format!(
                "singular matrix in LU factorization at column {k}"
            )));
        }
        if p != k {
            for j in 0..n {
                let t = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = t;
            }
            piv.swap(k, p);
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let m = lu[(i, k)] / pivot;
            lu[(i, k)] = m;
            if m != 0.0 {
                for j in k + 1..n {
                    lu[(i, j)] -= m * lu[(k, j)];
                }
            }
        }
    }
    Ok(LuFactors { lu, piv })
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    /// Solves `A X = B` in place on the rows of `B` (shape `(n, m)`).
    pub fn solve_mat_inplace(&self, b: &mut Array2<f64>) {
        let n = self.dim();
        assert_eq!(b.nrows(), n);
        // Apply the row permutation.
        let permuted: Vec<usize> = self.piv.clone();
        let src = b.clone();
        for (dst_row, &src_row) in permuted.iter().enumerate() {
            b.row_mut(dst_row).assign(&src.row(src_row));
        }
        // Forward substitution with unit lower factor.
        for i in 0..n {
            for k in 0..i {
                let lik = self.lu[(i, k)];
                if lik != 0.0 {
                    let (row_k, mut row_i) =
                        b.multi_slice_mut((ndarray::s![k, ..], ndarray::s![i, ..]));
                    row_i.zip_mut_with(&row_k, |xi, &xk| *xi -= lik * xk);
                }
            }
        }
        // Back substitution.
        for i in (0..n).rev() {
            for k in i + 1..n {
                let uik = self.lu[(i, k)];
                if uik != 0.0 {
                    let (row_k, mut row_i) =
                        b.multi_slice_mut((ndarray::s![k, ..], ndarray::s![i, ..]));
                    row_i.zip_mut_with(&row_k, |xi, &xk| *xi -= uik * xk);
                }
            }
            let inv = 1.0 / self.lu[(i, i)];
            b.row_mut(i).mapv_inplace(|v| v * inv);
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut mat = Array2::from_shape_vec((n, 1), b.to_vec()).unwrap();
        self.solve_mat_inplace(&mut mat);
        mat.into_raw_vec_and_offset().0
    }
}

fn dump_matrix(a: &Array2<f64>) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    if a.nrows() > 24 {
        let _ = write!(s, "({}x{} matrix omitted)", a.nrows(), a.ncols());
        return s;
    }
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let _ = write!(s, "{:+.12e} ", a[(i, j)]);
        }
        let _ = writeln!(s);
    }
    s
}
