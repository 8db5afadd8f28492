//! Sum-of-Kronecker-product operators applied matrix-free through mode-wise
//! tensor contractions, plus the sparse and dense helpers they need.
//!
//! Vectors use colexicographic layout: spatial direction 1 fastest, time
//! slowest, so a space-time coefficient vector reshapes to a matrix with the
//! space index running down columns and `(T (x) S) vec(X) = vec(S X T^T)`.

use crate::error::{Error, Result};
use crate::flops::{self, Category};
use ndarray::{Array2, ArrayView2, ArrayView3, ArrayViewMut3, Axis};

/// Anything that maps vectors to vectors linearly.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    /// Dense materialization by application to unit vectors. Intended for
    /// small-instance oracles only.
    fn materialize(&self) -> Array2<f64> {
        let n = self.dim();
        let mut out = Array2::<f64>::zeros((n, n));
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply_into(&e, &mut col);
            e[j] = 0.0;
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        out
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_ptr.len(), nrows + 1);
        debug_assert_eq!(col_idx.len(), values.len());
        debug_assert_eq!(*row_ptr.last().unwrap(), values.len());
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn from_dense(a: &Array2<f64>) -> Self {
        let (nrows, ncols) = a.dim();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..nrows {
            for j in 0..ncols {
                if a[(i, j)] != 0.0 {
                    col_idx.push(j);
                    values.push(a[(i, j)]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self::new(nrows, ncols, row_ptr, col_idx, values)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals.iter()) {
                out[(i, j)] += v;
            }
        }
        out
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals.iter()) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y += self * x` for row-major dense `x` of shape `(ncols, m)`.
    pub fn mul_dense_acc(&self, x: &ArrayView2<f64>, y: &mut Array2<f64>) {
        debug_assert_eq!(x.nrows(), self.ncols);
        debug_assert_eq!(y.nrows(), self.nrows);
        debug_assert_eq!(x.ncols(), y.ncols());
        let xs = x.as_slice().expect("x must be contiguous row-major");
        let m = x.ncols();
        let ys = y.as_slice_mut().expect("y must be contiguous row-major");
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let yrow = &mut ys[i * m..(i + 1) * m];
            for (&j, &v) in cols.iter().zip(vals.iter()) {
                let xrow = &xs[j * m..(j + 1) * m];
                for (yk, &xk) in yrow.iter_mut().zip(xrow.iter()) {
                    *yk += v * xk;
                }
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for i in 0..d.len() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals.iter()) {
                if j == i {
                    d[i] += v;
                }
            }
        }
        d
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        out
    }

    /// Kronecker product `self (x) other` with `other` on the fast index.
    pub fn kron(&self, other: &CsrMatrix) -> CsrMatrix {
        let nrows = self.nrows * other.nrows;
        let ncols = self.ncols * other.ncols;
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for ic in 0..self.nrows {
            let (c_cols, c_vals) = self.row(ic);
            for id in 0..other.nrows {
                let (d_cols, d_vals) = other.row(id);
                for (&jc, &vc) in c_cols.iter().zip(c_vals.iter()) {
                    for (&jd, &vd) in d_cols.iter().zip(d_vals.iter()) {
                        col_idx.push(jc * other.ncols + jd);
                        values.push(vc * vd);
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        CsrMatrix::new(nrows, ncols, row_ptr, col_idx, values)
    }

    /// Sparse sum with matching shapes.
    pub fn add(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut ia, mut ib) = (0, 0);
            while ia < ca.len() || ib < cb.len() {
                let ja = ca.get(ia).copied().unwrap_or(usize::MAX);
                let jb = cb.get(ib).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    col_idx.push(ja);
                    values.push(va[ia] + vb[ib]);
                    ia += 1;
                    ib += 1;
                } else if ja < jb {
                    col_idx.push(ja);
                    values.push(va[ia]);
                    ia += 1;
                } else {
                    col_idx.push(jb);
                    values.push(vb[ib]);
                    ib += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::new(self.nrows, self.ncols, row_ptr, col_idx, values)
    }

    /// Submatrix on sorted row and column index subsets.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &i in rows {
            let (c, v) = self.row(i);
            for (&j, &val) in c.iter().zip(v.iter()) {
                if col_map[j] != usize::MAX {
                    col_idx.push(col_map[j]);
                    values.push(val);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix::new(rows.len(), cols.len(), row_ptr, col_idx, values)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let dense = self.to_dense();
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for j in 0..i {
                worst = worst.max((dense[(i, j)] - dense[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Dense tensor in colexicographic layout: `dims[0]` fastest, last slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn split_at_mode(&self, mode: usize) -> (usize, usize) {
        let fast: usize = self.dims[..mode].iter().product();
        let slow: usize = self.dims[mode + 1..].iter().product();
        (fast, slow)
    }

    /// Mode product `out = M x_mode self`: contracts the columns of `M`
    /// against the given mode, `out[.., j, ..] = sum_i M[j, i] self[.., i, ..]`.
    pub fn mode_multiply(&self, m: &Array2<f64>, mode: usize) -> Result<Tensor> {
        let n = self.dims[mode];
        if m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.ncols(),
            });
        }
        let (fast, slow) = self.split_at_mode(mode);
        let mut out_dims = self.dims.clone();
        out_dims[mode] = m.nrows();
        let mut out = Tensor::zeros(out_dims);
        if fast == 1 {
            // Contiguous (slow, n) matrix: out = X * M^T.
            let x = ArrayView2::from_shape((slow, n), &self.data).unwrap();
            let y = x.dot(&m.t());
            out.data.copy_from_slice(y.as_slice().unwrap());
        } else {
            let x = ArrayView3::from_shape((slow, n, fast), &self.data).unwrap();
            let mut y = ArrayViewMut3::from_shape((slow, m.nrows(), fast), &mut out.data).unwrap();
            for l in 0..slow {
                let slab = x.index_axis(Axis(0), l);
                let res = m.dot(&slab);
                y.index_axis_mut(Axis(0), l).assign(&res);
            }
        }
        Ok(out)
    }

    /// Transposed mode product, `out[.., j, ..] = sum_i M[i, j] self[.., i, ..]`.
    /// A distinct code path from [`Tensor::mode_multiply`]; nothing is
    /// transposed implicitly.
    pub fn mode_multiply_transposed(&self, m: &Array2<f64>, mode: usize) -> Result<Tensor> {
        let n = self.dims[mode];
        if m.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.nrows(),
            });
        }
        let (fast, slow) = self.split_at_mode(mode);
        let mut out_dims = self.dims.clone();
        out_dims[mode] = m.ncols();
        let mut out = Tensor::zeros(out_dims);
        if fast == 1 {
            let x = ArrayView2::from_shape((slow, n), &self.data).unwrap();
            let y = x.dot(m);
            out.data.copy_from_slice(y.as_slice().unwrap());
        } else {
            let x = ArrayView3::from_shape((slow, n, fast), &self.data).unwrap();
            let mut y = ArrayViewMut3::from_shape((slow, m.ncols(), fast), &mut out.data).unwrap();
            for l in 0..slow {
                let slab = x.index_axis(Axis(0), l);
                let res = m.t().dot(&slab);
                y.index_axis_mut(Axis(0), l).assign(&res);
            }
        }
        Ok(out)
    }
}

/// Flop count of one mode product (2 flops per multiply-add).
pub fn mode_multiply_flops(dims: &[usize], mode: usize, m_rows: usize) -> u64 {
    let others: u64 = dims
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != mode)
        .map(|(_, &d)| d as u64)
        .product();
    2 * others * dims[mode] as u64 * m_rows as u64
}

/// One Kronecker term `time (x) space`.
#[derive(Clone, Debug)]
pub struct KronSumTerm {
    pub time: Array2<f64>,
    pub space: CsrMatrix,
}

/// Symmetric operator `sum_k T_k (x) S_k` applied matrix-free.
#[derive(Clone, Debug)]
pub struct KronSumOperator {
    terms: Vec<KronSumTerm>,
    n_space: usize,
    n_time: usize,
}

impl KronSumOperator {
    /// Symmetry of every factor is part of the contract and is checked here.
    pub fn new(terms: Vec<KronSumTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("operator needs a term".into()));
        }
        let n_time = terms[0].time.nrows();
        let n_space = terms[0].space.nrows();
        for t in &terms {
            if t.time.nrows() != n_time
                || t.time.ncols() != n_time
                || t.space.nrows() != n_space
                || t.space.ncols() != n_space
            {
                return Err(Error::DimensionMismatch {
                    expected: n_time * n_space,
                    got: t.time.nrows() * t.space.nrows(),
                });
            }
            let time_scale = t.time.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
            let mut asym = 0.0f64;
            for i in 0..n_time {
                for j in 0..i {
                    asym = asym.max((t.time[(i, j)] - t.time[(j, i)]).abs());
                }
            }
            if asym > 1e-12 * time_scale {
                return Err(Error::InvalidArgument("time factor is not symmetric".into()));
            }
            let space_scale = t
                .space
                .values
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()))
                .max(1.0);
            if t.space.max_asymmetry() > 1e-12 * space_scale {
                return Err(Error::InvalidArgument(
                    "space factor is not symmetric".into(),
                ));
            }
        }
        Ok(Self {
            terms,
            n_space,
            n_time,
        })
    }

    pub fn terms(&self) -> &[KronSumTerm] {
        &self.terms
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    /// Checked application; rejects operand length mismatches.
    pub fn try_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.apply(x))
    }

    /// Diagonal of the operator: Kronecker product of factor diagonals,
    /// summed over terms.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for term in &self.terms {
            let ds = term.space.diagonal();
            for t in 0..self.n_time {
                let dt = term.time[(t, t)];
                let out = &mut d[t * self.n_space..(t + 1) * self.n_space];
                for (o, &s) in out.iter_mut().zip(ds.iter()) {
                    *o += dt * s;
                }
            }
        }
        d
    }
}

impl LinearOperator for KronSumOperator {
    fn dim(&self) -> usize {
        self.n_space * self.n_time
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "operand length mismatch");
        assert_eq!(y.len(), self.dim());
        let (ns, nt) = (self.n_space, self.n_time);
        // Reshape v (space fastest) to the space-major matrix X with
        // X[i, t] = v[t*ns + i].
        let mut xm = Array2::<f64>::zeros((ns, nt));
        for t in 0..nt {
            let src = &x[t * ns..(t + 1) * ns];
            for i in 0..ns {
                xm[(i, t)] = src[i];
            }
        }
        let mut acc = Array2::<f64>::zeros((ns, nt));
        let mut count: u64 = 0;
        for term in &self.terms {
            // S X T^T, realized as S (X T^T); the Kronecker product itself is
            // never materialized.
            let z = xm.dot(&term.time.t());
            term.space.mul_dense_acc(&z.view(), &mut acc);
            count += 2 * (ns as u64) * (nt as u64) * (nt as u64)
                + 2 * (term.space.nnz() as u64) * (nt as u64);
        }
        flops::add(Category::OperatorApply, count);
        for t in 0..nt {
            let dst = &mut y[t * ns..(t + 1) * ns];
            for i in 0..ns {
                dst[i] = acc[(i, t)];
            }
        }
    }
}

/// Congruence-scaled operator `y = diag(s) inner(diag(s) x)`.
pub struct SymmetricallyScaled<Op> {
    pub inner: Op,
    pub scale: Vec<f64>,
}

impl<Op: LinearOperator> LinearOperator for SymmetricallyScaled<Op> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let sx: Vec<f64> = x.iter().zip(self.scale.iter()).map(|(v, s)| v * s).collect();
        self.inner.apply_into(&sx, y);
        for (v, s) in y.iter_mut().zip(self.scale.iter()) {
            *v *= s;
        }
    }
}

/// Dense operator for tests and tiny exact preconditioners.
pub struct DenseOperator(pub Array2<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.0[(i, j)] * x[j];
            }
            y[i] = acc;
        }
    }
}

/// Dense Kronecker product with the second factor on the fast index.
pub fn dense_kron(c: &Array2<f64>, d: &Array2<f64>) -> Array2<f64> {
    let (cr, cc) = c.dim();
    let (dr, dc) = d.dim();
    let mut out = Array2::<f64>::zeros((cr * dr, cc * dc));
    for ic in 0..cr {
        for jc in 0..cc {
            let v = c[(ic, jc)];
            if v == 0.0 {
                continue;
            }
            for id in 0..dr {
                for jd in 0..dc {
                    out[(ic * dr + id, jc * dc + jd)] = v * d[(id, jd)];
                }
            }
        }
    }
    out
}

/// Dense inverse through LU; small matrices only.
pub fn dense_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let lu = crate::dense::lu_factor(a)?;
    let mut inv = Array2::<f64>::eye(n);
    lu.solve_mat_inplace(&mut inv);
    Ok(inv)
}
