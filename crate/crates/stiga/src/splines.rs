//! Univariate and tensor-product B-spline machinery: open knot vectors,
//! Cox-de Boor evaluation with derivatives, spline-space bookkeeping and
//! per-element Gauss-Legendre quadrature.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};

/// Open knot vector on `[0, 1]`.
///
/// The first and last knots repeat exactly `degree + 1` times, so endpoint
/// basis values are interpolatory.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
    breakpoints: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::InvalidArgument(format!(
                "knot vector of length {} too short for degree {p}",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "knots must be nondecreasing".into(),
            ));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument(
                "knot vector must start at 0 and end at 1".into(),
            ));
        }
        let open_left = knots[..=p].iter().all(|&k| k == knots[0]) && knots[p + 1] > knots[0];
        let last = knots.len() - 1;
        let open_right =
            knots[last - p..].iter().all(|&k| k == knots[last]) && knots[last - p - 1] < knots[last];
        if !open_left || !open_right {
            return Err(Error::InvalidArgument(
                "knot vector must be open: boundary knots repeated exactly degree + 1 times".into(),
            ));
        }
        let mut breakpoints = vec![knots[0]];
        for &k in &knots[1..] {
            if k > *breakpoints.last().unwrap() {
                breakpoints.push(k);
            }
        }
        Ok(Self {
            degree,
            knots,
            breakpoints,
        })
    }

    /// Uniform open knot vector with `n_elements` equal spans.
    pub fn open_uniform(degree: usize, n_elements: usize) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::InvalidArgument("need at least one element".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        for i in 1..n_elements {
            knots.push(i as f64 / n_elements as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of B-spline basis functions.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Unique knots, i.e. the element breakpoints.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn num_elements(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Maximum knot-span length (the meshsize `h`).
    pub fn mesh_size(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Quasi-uniformity ratio: smallest nonempty span over largest.
    pub fn quasi_uniformity_alpha(&self) -> f64 {
        let min = self
            .breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        min / self.mesh_size()
    }

    /// Largest interior knot multiplicity (0 when there are no interior knots).
    pub fn max_interior_multiplicity(&self) -> usize {
        let p = self.degree;
        let interior = &self.knots[p + 1..self.knots.len() - p - 1];
        let mut max = 0;
        let mut run = 0;
        let mut prev = f64::NAN;
        for &k in interior {
            if k == prev {
                run += 1;
            } else {
                run = 1;
                prev = k;
            }
            max = max.max(run);
        }
        max
    }

    /// Knot-span index `i` with `knots[i] <= eta < knots[i+1]`, clamped to the
    /// last nonempty span at `eta = 1`.
    pub fn find_span(&self, eta: f64) -> usize {
        let p = self.degree;
        let m = self.num_basis();
        if eta >= self.knots[m] {
            // Rightmost nonempty span.
            let mut i = m - 1;
            while self.knots[i + 1] <= self.knots[i] {
                i -= 1;
            }
            return i;
        }
        let mut lo = p;
        let mut hi = m;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if eta < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }
}

/// Univariate B-spline basis over an open knot vector.
#[derive(Clone, Debug)]
pub struct Basis1D {
    knots: KnotVector,
}

impl Basis1D {
    pub fn new(knots: KnotVector) -> Self {
        Self { knots }
    }

    pub fn open_uniform(degree: usize, n_elements: usize) -> Result<Self> {
        Ok(Self::new(KnotVector::open_uniform(degree, n_elements)?))
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    /// Number of basis functions `m`.
    pub fn len(&self) -> usize {
        self.knots.num_basis()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values and derivatives of the `degree + 1` basis functions active at
    /// `eta`. Returns the index of the first active function and a table
    /// `ders[r][j]` holding the `r`-th derivative of function `first + j`.
    ///
    /// Derivative orders above the degree are returned as zero.
    pub fn eval_local(&self, eta: f64, max_deriv: usize) -> (usize, Array2<f64>) {
        let p = self.degree();
        let kv = self.knots.knots();
        let span = self.knots.find_span(eta);
        let n = max_deriv;
        let mut ders = Array2::<f64>::zeros((n + 1, p + 1));

        // Knot-difference triangle (Cox-de Boor in its divided form). All
        // divisors bracket the nonempty span containing eta, hence positive.
        let mut ndu = Array2::<f64>::zeros((p + 1, p + 1));
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[(0, 0)] = 1.0;
        for j in 1..=p {
            left[j] = eta - kv[span + 1 - j];
            right[j] = kv[span + j] - eta;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[(j, r)] = right[r + 1] + left[j - r];
                let temp = ndu[(r, j - 1)] / ndu[(j, r)];
                ndu[(r, j)] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[(j, j)] = saved;
        }
        for j in 0..=p {
            ders[(0, j)] = ndu[(j, p)];
        }

        // Derivatives up to min(n, p); higher orders of a degree-p piecewise
        // polynomial vanish identically inside an element.
        let kmax = n.min(p);
        if kmax > 0 {
            let mut a = Array2::<f64>::zeros((2, p + 1));
            for r in 0..=p {
                let mut s1 = 0usize;
                let mut s2 = 1usize;
                a[(0, 0)] = 1.0;
                for k in 1..=kmax {
                    let mut d = 0.0;
                    let rk = r as i64 - k as i64;
                    let pk = (p - k) as i64;
                    if r >= k {
                        a[(s2, 0)] = a[(s1, 0)] / ndu[((pk + 1) as usize, rk as usize)];
                        d = a[(s2, 0)] * ndu[(rk as usize, pk as usize)];
                    }
                    let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                    let j2 = if r as i64 - 1 <= pk {
                        k - 1
                    } else {
                        p - r
                    };
                    for j in j1..=j2 {
                        a[(s2, j)] = (a[(s1, j)] - a[(s1, j - 1)])
                            / ndu[((pk + 1) as usize, (rk + j as i64) as usize)];
                        d += a[(s2, j)] * ndu[((rk + j as i64) as usize, pk as usize)];
                    }
                    if r as i64 <= pk {
                        a[(s2, k)] = -a[(s1, k - 1)] / ndu[((pk + 1) as usize, r)];
                        d += a[(s2, k)] * ndu[(r, pk as usize)];
                    }
                    ders[(k, r)] = d;
                    std::mem::swap(&mut s1, &mut s2);
                }
            }
            let mut factor = p as f64;
            for k in 1..=kmax {
                for j in 0..=p {
                    ders[(k, j)] *= factor;
                }
                factor *= (p - k) as f64;
            }
        }
        (span - p, ders)
    }

    /// Dense evaluation table: entry `(q, i, r)` is the `r`-th derivative of
    /// basis function `i` at `points[q]`. Values outside a function's support
    /// are exactly zero.
    pub fn eval_basis(&self, points: &[f64], max_deriv: usize) -> Result<Array3<f64>> {
        let p = self.degree();
        if max_deriv > p {
            return Err(Error::InvalidArgument(format!(
                "derivative order {max_deriv} exceeds degree {p}"
            )));
        }
        let m = self.len();
        let mut out = Array3::<f64>::zeros((points.len(), m, max_deriv + 1));
        for (q, &eta) in points.iter().enumerate() {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::PointOutsideDomain(eta));
            }
            let (first, ders) = self.eval_local(eta, max_deriv);
            for j in 0..=p {
                for r in 0..=max_deriv {
                    out[(q, first + j, r)] = ders[(r, j)];
                }
            }
        }
        Ok(out)
    }

    /// Greville abscissae: knot averages `(xi_{i+1} + ... + xi_{i+p}) / p`.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree();
        let kv = self.knots.knots();
        let m = self.len();
        if p == 0 {
            return (0..m).map(|i| 0.5 * (kv[i] + kv[i + 1])).collect();
        }
        (0..m)
            .map(|i| kv[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Collocation matrix of basis values at the given points.
    pub fn collocation_matrix(&self, points: &[f64]) -> Result<Array2<f64>> {
        let table = self.eval_basis(points, 0)?;
        let m = self.len();
        let mut out = Array2::<f64>::zeros((points.len(), m));
        for q in 0..points.len() {
            for i in 0..m {
                out[(q, i)] = table[(q, i, 0)];
            }
        }
        Ok(out)
    }
}

/// Gauss-Legendre rule mapped to every nonempty knot span of one direction.
#[derive(Clone, Debug)]
pub struct DirectionRule {
    pub spans: Vec<(f64, f64)>,
    /// All quadrature points, element by element.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub points_per_element: usize,
}

impl DirectionRule {
    pub fn num_elements(&self) -> usize {
        self.spans.len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Points of one element.
    pub fn element_points(&self, e: usize) -> &[f64] {
        let q = self.points_per_element;
        &self.points[e * q..(e + 1) * q]
    }

    pub fn element_weights(&self, e: usize) -> &[f64] {
        let q = self.points_per_element;
        &self.weights[e * q..(e + 1) * q]
    }
}

/// Gauss-Legendre points and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1);
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for k in 0..(q + 1) / 2 {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_q and its derivative at x.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=q {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = -x;
        nodes[q - 1 - k] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[k] = w;
        weights[q - 1 - k] = w;
    }
    if q % 2 == 1 && q > 1 {
        nodes[q / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule with `points_per_element` points on each nonempty span.
pub fn build_quadrature(knots: &KnotVector, points_per_element: usize) -> Result<DirectionRule> {
    if points_per_element < 1 {
        return Err(Error::InvalidArgument(
            "need at least one quadrature point per element".into(),
        ));
    }
    let (ref_nodes, ref_weights) = gauss_legendre(points_per_element);
    let mut spans = Vec::new();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for w in knots.breakpoints().windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        spans.push((a, b));
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (&x, &wt) in ref_nodes.iter().zip(ref_weights.iter()) {
            points.push(mid + half * x);
            weights.push(half * wt);
        }
    }
    Ok(DirectionRule {
        spans,
        points,
        weights,
        points_per_element,
    })
}

/// Gauss rules for every direction of a space-time tensor space.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub spatial: Vec<DirectionRule>,
    pub temporal: DirectionRule,
}

impl QuadratureGrid {
    /// `degree + 1` Gauss points per element per direction; `refine` doubles
    /// the count (used to rule out quadrature-limited error plateaus).
    pub fn for_space(space: &TensorSpace, refine: bool) -> Result<Self> {
        let factor = if refine { 2 } else { 1 };
        let spatial = (0..space.dim())
            .map(|k| {
                let b = space.spatial(k);
                build_quadrature(b.knot_vector(), factor * (b.degree() + 1))
            })
            .collect::<Result<Vec<_>>>()?;
        let temporal = build_quadrature(
            space.temporal().knot_vector(),
            factor * (space.temporal().degree() + 1),
        )?;
        Ok(Self { spatial, temporal })
    }
}

/// Per-element table of the active basis functions of one direction at that
/// element's quadrature points: `ders[(r, q, j)]` is the `r`-th derivative of
/// function `first_fn + j` at local point `q`.
#[derive(Clone, Debug)]
pub struct ElementTable1d {
    pub first_fn: usize,
    pub ders: Array3<f64>,
}

pub fn tabulate_elements(
    basis: &Basis1D,
    rule: &DirectionRule,
    max_deriv: usize,
) -> Vec<ElementTable1d> {
    let p = basis.degree();
    let q = rule.points_per_element;
    let mut tables = Vec::with_capacity(rule.num_elements());
    for e in 0..rule.num_elements() {
        let pts = rule.element_points(e);
        let mut ders = Array3::<f64>::zeros((max_deriv + 1, q, p + 1));
        let mut first_fn = 0;
        for (qi, &x) in pts.iter().enumerate() {
            let (first, local) = basis.eval_local(x, max_deriv);
            first_fn = first;
            for r in 0..=max_deriv {
                for j in 0..=p {
                    ders[(r, qi, j)] = local[(r, j)];
                }
            }
        }
        tables.push(ElementTable1d { first_fn, ders });
    }
    tables
}

/// Tensor-product space-time spline space with homogeneous spatial boundary
/// and zero initial-time constraints removed.
#[derive(Clone, Debug)]
pub struct TensorSpace {
    spatial: Vec<Basis1D>,
    temporal: Basis1D,
}

impl TensorSpace {
    pub fn new(spatial: Vec<Basis1D>, temporal: Basis1D) -> Result<Self> {
        if spatial.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one spatial direction".into(),
            ));
        }
        for b in &spatial {
            if b.len() < 3 {
                return Err(Error::InvalidArgument(
                    "spatial basis too small to carry interior functions".into(),
                ));
            }
        }
        if temporal.len() < 2 {
            return Err(Error::InvalidArgument("temporal basis too small".into()));
        }
        Ok(Self { spatial, temporal })
    }

    /// Uniform space with `n_el` elements per direction.
    pub fn uniform(dim: usize, p_space: usize, p_time: usize, n_el: usize) -> Result<Self> {
        let spatial = (0..dim)
            .map(|_| Basis1D::open_uniform(p_space, n_el))
            .collect::<Result<Vec<_>>>()?;
        let temporal = Basis1D::open_uniform(p_time, n_el)?;
        Self::new(spatial, temporal)
    }

    pub fn dim(&self) -> usize {
        self.spatial.len()
    }

    pub fn spatial(&self, k: usize) -> &Basis1D {
        &self.spatial[k]
    }

    pub fn temporal(&self) -> &Basis1D {
        &self.temporal
    }

    /// Constrained (interior) size of spatial direction `k`.
    pub fn n_s(&self, k: usize) -> usize {
        self.spatial[k].len() - 2
    }

    /// Constrained temporal size: all functions but the first.
    pub fn n_t(&self) -> usize {
        self.temporal.len() - 1
    }

    /// Product of the constrained spatial sizes.
    pub fn big_n_s(&self) -> usize {
        (0..self.dim()).map(|k| self.n_s(k)).product()
    }

    pub fn n_dof(&self) -> usize {
        self.big_n_s() * self.n_t()
    }

    /// Constrained tensor dimensions, spatial direction 1 first (fastest),
    /// time last (slowest).
    pub fn constrained_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = (0..self.dim()).map(|k| self.n_s(k)).collect();
        dims.push(self.n_t());
        dims
    }

    /// Full tensor dimensions including boundary and initial functions.
    pub fn full_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.spatial.iter().map(|b| b.len()).collect();
        dims.push(self.temporal.len());
        dims
    }

    /// Map from a constrained univariate index to the full univariate index.
    /// Spatial directions drop the two boundary functions, time drops the
    /// first function; both shift by one.
    pub fn to_full_index(&self, _direction: usize, constrained: usize) -> usize {
        constrained + 1
    }

    /// Colexicographic flattening of a constrained multi-index
    /// (spatial direction 1 fastest, time slowest).
    pub fn flatten_constrained(&self, idx: &[usize]) -> usize {
        flatten(idx, &self.constrained_dims())
    }

    pub fn unflatten_constrained(&self, flat: usize) -> Vec<usize> {
        unflatten(flat, &self.constrained_dims())
    }

    pub fn flatten_full(&self, idx: &[usize]) -> usize {
        flatten(idx, &self.full_dims())
    }
}

/// Colexicographic flatten: first index fastest.
pub fn flatten(idx: &[usize], dims: &[usize]) -> usize {
    debug_assert_eq!(idx.len(), dims.len());
    let mut flat = 0;
    for k in (0..idx.len()).rev() {
        debug_assert!(idx[k] < dims[k]);
        flat = flat * dims[k] + idx[k];
    }
    flat
}

pub fn unflatten(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for k in 0..dims.len() {
        idx[k] = flat % dims[k];
        flat /= dims[k];
    }
    idx
}
