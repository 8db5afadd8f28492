//! Tensor-product geometry maps `F: [0,1]^d -> Omega`, optionally rational,
//! with point evaluation, Jacobians, Hessians and the chain rule needed for
//! physical second derivatives. The space-time map is `G(eta, tau) =
//! (F(eta), T tau)`: time never couples to space, so only the spatial map is
//! stored together with the final time `T`.

use crate::error::{Error, Result};
use crate::splines::{flatten, Basis1D, KnotVector};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

const SINGULAR_DET_TOL: f64 = 1e-14;

/// Built-in benchmark domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainName {
    UnitSquare,
    UnitCube,
    QuarterAnnulus2d,
    RotatedQuarterAnnulus3d,
}

impl DomainName {
    pub fn dim(self) -> usize {
        match self {
            DomainName::UnitSquare | DomainName::QuarterAnnulus2d => 2,
            DomainName::UnitCube | DomainName::RotatedQuarterAnnulus3d => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainName::UnitSquare => "unit_square",
            DomainName::UnitCube => "unit_cube",
            DomainName::QuarterAnnulus2d => "quarter_annulus_2d",
            DomainName::RotatedQuarterAnnulus3d => "rotated_quarter_annulus_3d",
        }
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_square" => Ok(DomainName::UnitSquare),
            "unit_cube" => Ok(DomainName::UnitCube),
            "quarter_annulus_2d" => Ok(DomainName::QuarterAnnulus2d),
            "rotated_quarter_annulus_3d" => Ok(DomainName::RotatedQuarterAnnulus3d),
            other => Err(Error::InvalidArgument(format!("unknown domain '{other}'"))),
        }
    }
}

/// Geometry data at one parametric point: physical point, Jacobian, its
/// inverse and determinant, the geometry Hessian, and the derivatives of the
/// inverse-Jacobian columns used by the physical second-derivative chain rule.
#[derive(Clone, Debug)]
pub struct PhysDerivs {
    pub dim: usize,
    /// Physical point `x = F(eta)`.
    pub x: [f64; 3],
    /// `jac[i][j] = dF_i / deta_j`.
    pub jac: [[f64; 3]; 3],
    pub det: f64,
    /// `jac_inv[i][j] = [J_F^{-1}]_{ij}`.
    pub jac_inv: [[f64; 3]; 3],
    /// `hess[c][j][k] = d^2 F_c / deta_j deta_k`.
    pub hess: [[[f64; 3]; 3]; 3],
    /// `djac_inv[r][i][j] = d [J_F^{-1}]_{ij} / deta_r`, from
    /// `d(J^{-1}) = -J^{-1} (dJ) J^{-1}`.
    pub djac_inv: [[[f64; 3]; 3]; 3],
}

impl PhysDerivs {
    /// Coefficients expressing `d^2 v / dx_i^2` of a pushed-forward function
    /// in parametric derivatives:
    /// `d2v/dx_i^2 = sum_{j,k} q[j][k] vhat_{jk} + sum_j s[j] vhat_j`.
    pub fn second_derivative_coefficients(&self, direction: usize) -> ([[f64; 3]; 3], [f64; 3]) {
        let d = self.dim;
        let mut q = [[0.0; 3]; 3];
        let mut s = [0.0; 3];
        for j in 0..d {
            for k in 0..d {
                q[j][k] = self.jac_inv[j][direction] * self.jac_inv[k][direction];
            }
            let mut acc = 0.0;
            for k in 0..d {
                acc += self.jac_inv[k][direction] * self.djac_inv[k][j][direction];
            }
            s[j] = acc;
        }
        (q, s)
    }

    /// Coefficients of the physical Laplacian, summed over all directions.
    pub fn laplacian_coefficients(&self) -> ([[f64; 3]; 3], [f64; 3]) {
        let d = self.dim;
        let mut q = [[0.0; 3]; 3];
        let mut s = [0.0; 3];
        for i in 0..d {
            let (qi, si) = self.second_derivative_coefficients(i);
            for j in 0..d {
                for k in 0..d {
                    q[j][k] += qi[j][k];
                }
                s[j] += si[j];
            }
        }
        (q, s)
    }

    /// Physical gradient of a pushed-forward function from its parametric one.
    pub fn physical_gradient(&self, grad_param: &[f64; 3]) -> [f64; 3] {
        let d = self.dim;
        let mut g = [0.0; 3];
        for i in 0..d {
            for j in 0..d {
                g[i] += self.jac_inv[j][i] * grad_param[j];
            }
        }
        g
    }
}

/// Second physical derivative `d^2 (v o F^{-1}) / dx_i^2` of one function from
/// its parametric gradient and Hessian at the same point.
pub fn physical_second_derivative(
    grad_param: &[f64; 3],
    hess_param: &[[f64; 3]; 3],
    derivs: &PhysDerivs,
    direction: usize,
) -> f64 {
    let (q, s) = derivs.second_derivative_coefficients(direction);
    let d = derivs.dim;
    let mut acc = 0.0;
    for j in 0..d {
        for k in 0..d {
            acc += q[j][k] * hess_param[j][k];
        }
        acc += s[j] * grad_param[j];
    }
    acc
}

/// Physical Laplacian of one function from parametric derivatives.
pub fn physical_laplacian(
    grad_param: &[f64; 3],
    hess_param: &[[f64; 3]; 3],
    derivs: &PhysDerivs,
) -> f64 {
    let (q, s) = derivs.laplacian_coefficients();
    let d = derivs.dim;
    let mut acc = 0.0;
    for j in 0..d {
        for k in 0..d {
            acc += q[j][k] * hess_param[j][k];
        }
        acc += s[j] * grad_param[j];
    }
    acc
}

/// Tensor-product (optionally rational) spatial geometry map plus the final
/// time of the space-time cylinder.
#[derive(Clone, Debug)]
pub struct GeometryMap {
    dim: usize,
    bases: Vec<Basis1D>,
    grid_dims: Vec<usize>,
    /// Control points, colexicographically flattened, `dim` coordinates each.
    control: Vec<f64>,
    weights: Option<Vec<f64>>,
    final_time: f64,
    name: Option<DomainName>,
}

impl GeometryMap {
    pub fn new(
        bases: Vec<Basis1D>,
        control: Vec<f64>,
        weights: Option<Vec<f64>>,
        final_time: f64,
    ) -> Result<Self> {
        let dim = bases.len();
        if dim == 0 || dim > 3 {
            return Err(Error::InvalidArgument(
                "geometry supports 1, 2 or 3 spatial dimensions".into(),
            ));
        }
        if final_time <= 0.0 {
            return Err(Error::InvalidArgument("final time must be positive".into()));
        }
        let grid_dims: Vec<usize> = bases.iter().map(|b| b.len()).collect();
        let n_ctrl: usize = grid_dims.iter().product();
        if control.len() != n_ctrl * dim {
            return Err(Error::DimensionMismatch {
                expected: n_ctrl * dim,
                got: control.len(),
            });
        }
        if let Some(w) = &weights {
            if w.len() != n_ctrl {
                return Err(Error::DimensionMismatch {
                    expected: n_ctrl,
                    got: w.len(),
                });
            }
            if w.iter().any(|&wi| wi <= 0.0) {
                return Err(Error::InvalidArgument(
                    "rational weights must be strictly positive".into(),
                ));
            }
        }
        Ok(Self {
            dim,
            bases,
            grid_dims,
            control,
            weights,
            final_time,
            name: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn is_rational(&self) -> bool {
        self.weights.is_some()
    }

    pub fn name(&self) -> Option<DomainName> {
        self.name
    }

    pub fn bases(&self) -> &[Basis1D] {
        &self.bases
    }

    /// Evaluates the map with first and second derivatives at a parametric
    /// point. Fails when the Jacobian is (numerically) singular there.
    pub fn eval(&self, eta: &[f64]) -> Result<PhysDerivs> {
        let d = self.dim;
        assert_eq!(eta.len(), d);
        for &e in eta {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::PointOutsideDomain(e));
            }
        }

        // Local basis values and first/second derivatives per direction.
        let mut firsts = [0usize; 3];
        let mut locs = Vec::with_capacity(d);
        for k in 0..d {
            let (first, ders) = self.bases[k].eval_local(eta[k], 2);
            firsts[k] = first;
            locs.push(ders);
        }

        // Derivative patterns: value, gradients, upper-triangle Hessian.
        // Pattern orders per direction are encoded as small arrays.
        let mut patterns: Vec<[usize; 3]> = vec![[0, 0, 0]];
        for j in 0..d {
            let mut p = [0usize; 3];
            p[j] = 1;
            patterns.push(p);
        }
        for j in 0..d {
            for k in j..d {
                let mut p = [0usize; 3];
                p[j] += 1;
                p[k] += 1;
                patterns.push(p);
            }
        }

        // Homogeneous accumulators: numerator (dim coords) and weight sum per
        // pattern. The polynomial case runs with unit weights.
        let np = patterns.len();
        let mut num = vec![[0.0f64; 3]; np];
        let mut den = vec![0.0f64; np];
        let block: usize = self.bases.iter().map(|b| b.degree() + 1).product();
        let mut local = vec![0usize; d];
        for c in 0..block {
            let mut rem = c;
            for k in 0..d {
                let ext = self.bases[k].degree() + 1;
                local[k] = rem % ext;
                rem /= ext;
            }
            let mut gidx = [0usize; 3];
            for k in 0..d {
                gidx[k] = firsts[k] + local[k];
            }
            let flat = flatten(&gidx[..d], &self.grid_dims);
            let w = self.weights.as_ref().map_or(1.0, |ws| ws[flat]);
            let point = &self.control[flat * d..(flat + 1) * d];
            for (pi, pat) in patterns.iter().enumerate() {
                let mut b = 1.0;
                for k in 0..d {
                    b *= locs[k][(pat[k], local[k])];
                }
                let wb = w * b;
                den[pi] += wb;
                for c2 in 0..d {
                    num[pi][c2] += wb * point[c2];
                }
            }
        }

        // Quotient rule through second order. For the polynomial case den[0]=1
        // and all other den entries are 0, so these formulas reduce to the
        // plain derivatives.
        let wval = den[0];
        let mut x = [0.0f64; 3];
        for c in 0..d {
            x[c] = num[pi_value()][c] / wval;
        }
        let mut jac = [[0.0f64; 3]; 3];
        for j in 0..d {
            let pi = pi_grad(j);
            for c in 0..d {
                jac[c][j] = (num[pi][c] - x[c] * den[pi]) / wval;
            }
        }
        let mut hess = [[[0.0f64; 3]; 3]; 3];
        for j in 0..d {
            for k in j..d {
                let pi = pi_hess(j, k, d);
                for c in 0..d {
                    let v = (num[pi][c]
                        - jac[c][j] * den[pi_grad(k)]
                        - jac[c][k] * den[pi_grad(j)]
                        - x[c] * den[pi])
                        / wval;
                    hess[c][j][k] = v;
                    hess[c][k][j] = v;
                }
            }
        }

        let det = det_d(&jac, d);
        if det.abs() < SINGULAR_DET_TOL {
            return Err(Error::SingularGeometry {
                det,
                location: eta.to_vec(),
            });
        }
        let jac_inv = invert_d(&jac, det, d);

        // d(J^{-1})/deta_r = -J^{-1} (dJ/deta_r) J^{-1}.
        let mut djac_inv = [[[0.0f64; 3]; 3]; 3];
        for r in 0..d {
            // (dJ)[i][j] = hess[i][j][r].
            let mut tmp = [[0.0f64; 3]; 3]; // J^{-1} dJ
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += jac_inv[i][k] * hess[k][j][r];
                    }
                    tmp[i][j] = acc;
                }
            }
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += tmp[i][k] * jac_inv[k][j];
                    }
                    djac_inv[r][i][j] = -acc;
                }
            }
        }

        Ok(PhysDerivs {
            dim: d,
            x,
            jac,
            det,
            jac_inv,
            hess,
            djac_inv,
        })
    }

    /// Physical point only.
    pub fn point(&self, eta: &[f64]) -> Result<[f64; 3]> {
        Ok(self.eval(eta)?.x)
    }

    /// Writes the documented plain-text schema; `Display` formatting of f64
    /// round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        let d = self.dim;
        let _ = writeln!(out, "stiga-geometry v1");
        let _ = writeln!(out, "dim {d}");
        let _ = writeln!(out, "final_time {}", self.final_time);
        let degs: Vec<String> = self.bases.iter().map(|b| b.degree().to_string()).collect();
        let _ = writeln!(out, "degrees {}", degs.join(" "));
        for b in &self.bases {
            let ks: Vec<String> = b.knot_vector().knots().iter().map(|k| k.to_string()).collect();
            let _ = writeln!(out, "knots {}", ks.join(" "));
        }
        let n_ctrl = self.control.len() / d;
        let _ = writeln!(out, "control {n_ctrl}");
        for i in 0..n_ctrl {
            let coords: Vec<String> = (0..d).map(|c| self.control[i * d + c].to_string()).collect();
            let _ = writeln!(out, "{}", coords.join(" "));
        }
        if let Some(w) = &self.weights {
            let _ = writeln!(out, "weights {}", w.len());
            for wi in w {
                let _ = writeln!(out, "{wi}");
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = || {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of geometry file".into()))
        };
        let header = next()?;
        if header.trim() != "stiga-geometry v1" {
            return Err(Error::Parse(format!("unknown geometry header '{header}'")));
        }
        let dim: usize = parse_field(next()?, "dim")?;
        let final_time: f64 = parse_field(next()?, "final_time")?;
        let deg_line = next()?;
        let degrees: Vec<usize> = parse_list(deg_line, "degrees")?;
        if degrees.len() != dim {
            return Err(Error::Parse("degree count does not match dim".into()));
        }
        let mut bases = Vec::with_capacity(dim);
        for &p in &degrees {
            let knots: Vec<f64> = parse_list(next()?, "knots")?;
            bases.push(Basis1D::new(KnotVector::new(p, knots)?));
        }
        let n_ctrl: usize = parse_field(next()?, "control")?;
        let mut control = Vec::with_capacity(n_ctrl * dim);
        for _ in 0..n_ctrl {
            let row: Vec<f64> = next()?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse("bad control coordinate".into())))
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::Parse("control point has wrong coordinate count".into()));
            }
            control.extend(row);
        }
        let weights = match lines.next() {
            Some(line) => {
                let nw: usize = parse_field(line, "weights")?;
                let mut w = Vec::with_capacity(nw);
                for _ in 0..nw {
                    let line = lines
                        .next()
                        .ok_or_else(|| Error::Parse("missing weight".into()))?;
                    w.push(
                        line.trim()
                            .parse()
                            .map_err(|_| Error::Parse("bad weight".into()))?,
                    );
                }
                Some(w)
            }
            None => None,
        };
        Self::new(bases, control, weights, final_time)
    }
}

fn parse_field<T: FromStr>(line: &str, key: &str) -> Result<T> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Parse(format!("expected '{key}' line, got '{line}'")));
    }
    it.next()
        .ok_or_else(|| Error::Parse(format!("missing value for '{key}'")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad value for '{key}'")))
}

fn parse_list<T: FromStr>(line: &str, key: &str) -> Result<Vec<T>> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Parse(format!("expected '{key}' line, got '{line}'")));
    }
    it.map(|t| t.parse().map_err(|_| Error::Parse(format!("bad '{key}' entry"))))
        .collect()
}

fn pi_value() -> usize {
    0
}

fn pi_grad(j: usize) -> usize {
    1 + j
}

fn pi_hess(j: usize, k: usize, d: usize) -> usize {
    // Upper-triangle offset after 1 value + d gradient patterns.
    let mut idx = 1 + d;
    for a in 0..d {
        for b in a..d {
            if a == j && b == k {
                return idx;
            }
            idx += 1;
        }
    }
    unreachable!()
}

fn det_d(j: &[[f64; 3]; 3], d: usize) -> f64 {
    match d {
        1 => j[0][0],
        2 => j[0][0] * j[1][1] - j[0][1] * j[1][0],
        3 => {
            j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
        }
        _ => unreachable!(),
    }
}

fn invert_d(j: &[[f64; 3]; 3], det: f64, d: usize) -> [[f64; 3]; 3] {
    let mut inv = [[0.0f64; 3]; 3];
    match d {
        1 => inv[0][0] = 1.0 / det,
        2 => {
            inv[0][0] = j[1][1] / det;
            inv[0][1] = -j[0][1] / det;
            inv[1][0] = -j[1][0] / det;
            inv[1][1] = j[0][0] / det;
        }
        3 => {
            inv[0][0] = (j[1][1] * j[2][2] - j[1][2] * j[2][1]) / det;
            inv[0][1] = (j[0][2] * j[2][1] - j[0][1] * j[2][2]) / det;
            inv[0][2] = (j[0][1] * j[1][2] - j[0][2] * j[1][1]) / det;
            inv[1][0] = (j[1][2] * j[2][0] - j[1][0] * j[2][2]) / det;
            inv[1][1] = (j[0][0] * j[2][2] - j[0][2] * j[2][0]) / det;
            inv[1][2] = (j[0][2] * j[1][0] - j[0][0] * j[1][2]) / det;
            inv[2][0] = (j[1][0] * j[2][1] - j[1][1] * j[2][0]) / det;
            inv[2][1] = (j[0][1] * j[2][0] - j[0][0] * j[2][1]) / det;
            inv[2][2] = (j[0][0] * j[1][1] - j[0][1] * j[1][0]) / det;
        }
        _ => unreachable!(),
    }
    inv
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Builds one of the benchmark domains with final time `T`.
///
/// The quarter annulus has internal radius 1 and external radius 2, in exact
/// rational quadratic form; the rotated variant revolves it about the axis
/// `y = -1` by a quarter turn, again exactly.
pub fn make_domain(name: DomainName, final_time: f64) -> Result<GeometryMap> {
    let mut map = match name {
        DomainName::UnitSquare => {
            let bases = vec![Basis1D::open_uniform(1, 1)?, Basis1D::open_uniform(1, 1)?];
            let mut control = Vec::new();
            for i2 in 0..2 {
                for i1 in 0..2 {
                    control.extend([i1 as f64, i2 as f64]);
                }
            }
            GeometryMap::new(bases, control, None, final_time)?
        }
        DomainName::UnitCube => {
            let bases = vec![
                Basis1D::open_uniform(1, 1)?,
                Basis1D::open_uniform(1, 1)?,
                Basis1D::open_uniform(1, 1)?,
            ];
            let mut control = Vec::new();
            for i3 in 0..2 {
                for i2 in 0..2 {
                    for i1 in 0..2 {
                        control.extend([i1 as f64, i2 as f64, i3 as f64]);
                    }
                }
            }
            GeometryMap::new(bases, control, None, final_time)?
        }
        DomainName::QuarterAnnulus2d => {
            let (control, weights) = quarter_annulus_net();
            let bases = vec![Basis1D::open_uniform(2, 1)?, Basis1D::open_uniform(2, 1)?];
            GeometryMap::new(bases, control, Some(weights), final_time)?
        }
        DomainName::RotatedQuarterAnnulus3d => {
            let (ctrl2d, w2d) = quarter_annulus_net();
            // Revolve each control point about the axis {y = -1, z = 0} by a
            // quarter turn: the swept circle of a point at height y has radius
            // y + 1, and its 90-degree arc has the usual midpoint weight.
            let mut control = Vec::new();
            let mut weights = Vec::new();
            let arc_w = [1.0, SQRT_HALF, 1.0];
            for k in 0..3 {
                for i in 0..9 {
                    let px = ctrl2d[i * 2];
                    let py = ctrl2d[i * 2 + 1];
                    let radius = py + 1.0;
                    let (y, z) = match k {
                        0 => (py, 0.0),
                        1 => (py, radius),
                        _ => (-1.0, radius),
                    };
                    control.extend([px, y, z]);
                    weights.push(w2d[i] * arc_w[k]);
                }
            }
            let bases = vec![
                Basis1D::open_uniform(2, 1)?,
                Basis1D::open_uniform(2, 1)?,
                Basis1D::open_uniform(2, 1)?,
            ];
            GeometryMap::new(bases, control, Some(weights), final_time)?
        }
    };
    map.name = Some(name);
    Ok(map)
}

/// Control net of the exact quarter annulus: direction 1 radial (1 to 2),
/// direction 2 a counterclockwise quarter arc from (r, 0) to (0, r).
fn quarter_annulus_net() -> (Vec<f64>, Vec<f64>) {
    let radii = [1.0, 1.5, 2.0];
    let arc = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let arc_w = [1.0, SQRT_HALF, 1.0];
    let mut control = Vec::new();
    let mut weights = Vec::new();
    for i2 in 0..3 {
        for i1 in 0..3 {
            control.extend([radii[i1] * arc[i2][0], radii[i1] * arc[i2][1]]);
            weights.push(arc_w[i2]);
        }
    }
    (control, weights)
}
