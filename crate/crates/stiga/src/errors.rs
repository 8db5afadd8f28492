//! Manufactured solutions and space-time error norms.
//!
//! The solution norm driving the discretization error is
//! `||v||^2 = int (Delta v)^2 + int (dv/dt)^2` over the space-time cylinder;
//! L2 and H1 norms of the same cylinder are reported alongside.

use crate::error::{Error, Result};
use crate::geometry::{physical_laplacian, DomainName, GeometryMap, PhysDerivs};
use crate::kronecker::Tensor;
use crate::splines::{tabulate_elements, ElementTable1d, QuadratureGrid, TensorSpace};
use serde::{Deserialize, Serialize};

/// Closed-form exact solutions of the heat equation benchmarks, with the
/// derivatives needed for forcing terms and error norms. The forcing is
/// always `f = du/dt - Laplace(u)`, by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManufacturedSolution {
    /// `u = -(x^2+y^2-1)(x^2+y^2-4) x y^2 sin(pi t)`; vanishes on the whole
    /// boundary of the quarter annulus and at t = 0.
    AnnulusSinePi,
    /// `u = sin(pi x) sin(pi y) sin(pi z) sin(t)` on the unit cube.
    CubeSine,
    /// `u = -(x^2+y^2-1)(x^2+y^2-4) x y^2 sin(z)`, time-independent, on the
    /// rotated quarter annulus; nonzero initial and boundary data.
    RotatedAnnulusSteady,
    /// Coordinate-degree-2 polynomial in x, y and t on the unit square; lies
    /// in every discrete space with p >= 2, so the solver must reproduce it.
    /// Its boundary trace is constant in time (the time-varying part vanishes
    /// on the boundary), as the lifting construction requires, while both the
    /// boundary and the initial data are nonzero.
    SquareQuadratic,
    /// `u = sin(pi x) sin(pi t)` on the unit square, constant in y. Its
    /// space-time norms have closed forms, used to validate the quadrature.
    SquareSineColumn,
    /// `u = 0`: zero data, zero forcing.
    Zero,
}

impl ManufacturedSolution {
    /// The benchmark solution attached to each built-in domain.
    pub fn for_domain(domain: DomainName) -> Self {
        match domain {
            DomainName::UnitSquare => ManufacturedSolution::SquareQuadratic,
            DomainName::UnitCube => ManufacturedSolution::CubeSine,
            DomainName::QuarterAnnulus2d => ManufacturedSolution::AnnulusSinePi,
            DomainName::RotatedQuarterAnnulus3d => ManufacturedSolution::RotatedAnnulusSteady,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ManufacturedSolution::AnnulusSinePi => "annulus_sine_pi",
            ManufacturedSolution::CubeSine => "cube_sine",
            ManufacturedSolution::RotatedAnnulusSteady => "rotated_annulus_steady",
            ManufacturedSolution::SquareQuadratic => "square_quadratic",
            ManufacturedSolution::SquareSineColumn => "square_sine_column",
            ManufacturedSolution::Zero => "zero",
        }
    }

    pub fn u(&self, x: &[f64; 3], t: f64) -> f64 {
        match self {
            ManufacturedSolution::AnnulusSinePi => annulus_w(x[0], x[1]).0 * (PI * t).sin(),
            ManufacturedSolution::CubeSine => {
                (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin() * t.sin()
            }
            ManufacturedSolution::RotatedAnnulusSteady => annulus_w(x[0], x[1]).0 * x[2].sin(),
            ManufacturedSolution::SquareQuadratic => {
                let (g, _, _, _, _) = square_g(x[0], x[1]);
                let (h, _, _, _) = square_h(x[0], x[1]);
                g + h * square_s(t).0
            }
            ManufacturedSolution::SquareSineColumn => (PI * x[0]).sin() * (PI * t).sin(),
            ManufacturedSolution::Zero => 0.0,
        }
    }

    pub fn u_t(&self, x: &[f64; 3], t: f64) -> f64 {
        match self {
            ManufacturedSolution::AnnulusSinePi => annulus_w(x[0], x[1]).0 * PI * (PI * t).cos(),
            ManufacturedSolution::CubeSine => {
                (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin() * t.cos()
            }
            ManufacturedSolution::RotatedAnnulusSteady => 0.0,
            ManufacturedSolution::SquareQuadratic => {
                square_h(x[0], x[1]).0 * square_s(t).1
            }
            ManufacturedSolution::SquareSineColumn => (PI * x[0]).sin() * PI * (PI * t).cos(),
            ManufacturedSolution::Zero => 0.0,
        }
    }

    pub fn grad_u(&self, x: &[f64; 3], t: f64) -> [f64; 3] {
        match self {
            ManufacturedSolution::AnnulusSinePi => {
                let (_, wx, wy, _) = annulus_w(x[0], x[1]);
                let s = (PI * t).sin();
                [wx * s, wy * s, 0.0]
            }
            ManufacturedSolution::CubeSine => {
                let (sx, sy, sz) = ((PI * x[0]).sin(), (PI * x[1]).sin(), (PI * x[2]).sin());
                let (cx, cy, cz) = ((PI * x[0]).cos(), (PI * x[1]).cos(), (PI * x[2]).cos());
                let st = t.sin();
                [PI * cx * sy * sz * st, PI * sx * cy * sz * st, PI * sx * sy * cz * st]
            }
            ManufacturedSolution::RotatedAnnulusSteady => {
                let (w, wx, wy, _) = annulus_w(x[0], x[1]);
                [wx * x[2].sin(), wy * x[2].sin(), w * x[2].cos()]
            }
            ManufacturedSolution::SquareQuadratic => {
                let (_, gx, gy, _, _) = square_g(x[0], x[1]);
                let (_, hx, hy, _) = square_h(x[0], x[1]);
                let s = square_s(t).0;
                [gx + hx * s, gy + hy * s, 0.0]
            }
            ManufacturedSolution::SquareSineColumn => {
                [PI * (PI * x[0]).cos() * (PI * t).sin(), 0.0, 0.0]
            }
            ManufacturedSolution::Zero => [0.0, 0.0, 0.0],
        }
    }

    pub fn lap_u(&self, x: &[f64; 3], t: f64) -> f64 {
        match self {
            ManufacturedSolution::AnnulusSinePi => annulus_w(x[0], x[1]).3 * (PI * t).sin(),
            ManufacturedSolution::CubeSine => {
                -3.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin() * t.sin()
            }
            ManufacturedSolution::RotatedAnnulusSteady => {
                let (w, _, _, lap) = annulus_w(x[0], x[1]);
                (lap - w) * x[2].sin()
            }
            ManufacturedSolution::SquareQuadratic => {
                let lap_g = square_g(x[0], x[1]).3 + square_g(x[0], x[1]).4;
                let lap_h = square_h(x[0], x[1]).3;
                lap_g + lap_h * square_s(t).0
            }
            ManufacturedSolution::SquareSineColumn => {
                -PI * PI * (PI * x[0]).sin() * (PI * t).sin()
            }
            ManufacturedSolution::Zero => 0.0,
        }
    }

    /// Heat-equation forcing `f = du/dt - Laplace(u)`.
    pub fn f(&self, x: &[f64; 3], t: f64) -> f64 {
        self.u_t(x, t) - self.lap_u(x, t)
    }

    /// Whether boundary and initial data vanish identically on the given
    /// domain, making the lifting zero.
    pub fn homogeneous_on(&self, domain: DomainName) -> bool {
        matches!(
            (self, domain),
            (ManufacturedSolution::AnnulusSinePi, DomainName::QuarterAnnulus2d)
                | (ManufacturedSolution::CubeSine, DomainName::UnitCube)
        )
    }
}

const PI: f64 = std::f64::consts::PI;

/// The annulus profile `w = -(q-1)(q-4) x y^2` with `q = x^2 + y^2`; returns
/// `(w, dw/dx, dw/dy, Laplace(w))`.
fn annulus_w(x: f64, y: f64) -> (f64, f64, f64, f64) {
    let q = x * x + y * y;
    let g = -(q - 1.0) * (q - 4.0);
    let gp = 5.0 - 2.0 * q;
    let w = g * x * y * y;
    let wx = y * y * (2.0 * x * x * gp + g);
    let wy = 2.0 * x * y * (y * y * gp + g);
    let lap = 2.0 * x * g + 16.0 * x * y * y * gp - 8.0 * x * y * y * q;
    (w, wx, wy, lap)
}

// Square benchmark pieces: u = g(x, y) + h(x, y) s(t) with h vanishing on
// the boundary, so the boundary trace is the time-independent g.
// square_g returns (g, g_x, g_y, g_xx, g_yy); square_h returns (h, h_x, h_y,
// Laplace h); square_s returns (s, s').
fn square_g(x: f64, y: f64) -> (f64, f64, f64, f64, f64) {
    (
        1.0 + x - y + 0.5 * x * x + x * y - y * y,
        1.0 + x + y,
        -1.0 + x - 2.0 * y,
        1.0,
        -2.0,
    )
}

fn square_h(x: f64, y: f64) -> (f64, f64, f64, f64) {
    let a = x * (1.0 - x);
    let b = y * (1.0 - y);
    (
        a * b,
        (1.0 - 2.0 * x) * b,
        a * (1.0 - 2.0 * y),
        -2.0 * (a + b),
    )
}

fn square_s(t: f64) -> (f64, f64) {
    (t + 0.5 * t * t, 1.0 + t)
}

/// Relative and absolute space-time errors of a discrete solution.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorReport {
    /// `sqrt(int (Delta e)^2 + int (e_t)^2)`, absolute and relative.
    pub v0_abs: f64,
    pub v0_rel: f64,
    pub l2_abs: f64,
    pub l2_rel: f64,
    /// Space-time H1: `sqrt(int e^2 + |grad_x e|^2 + (e_t)^2)`.
    pub h1_abs: f64,
    pub h1_rel: f64,
    pub n_dof: usize,
    pub mesh_size: f64,
    pub degree_space: usize,
    pub degree_time: usize,
}

/// Observed convergence order between meshes `h` and `h/2`.
pub fn observed_order(error_h: f64, error_h2: f64) -> Result<f64> {
    if !(error_h > 0.0) || !(error_h2 > 0.0) {
        return Err(Error::InvalidArgument(
            "observed order needs two positive errors".into(),
        ));
    }
    Ok((error_h / error_h2).log2())
}

// Derivative patterns evaluated on each space-time element: value, all first
// derivatives, and the upper triangle of spatial second derivatives.
fn error_patterns(d: usize) -> Vec<Vec<usize>> {
    let mut pats = vec![vec![0; d + 1]];
    for k in 0..=d {
        let mut p = vec![0; d + 1];
        p[k] = 1;
        pats.push(p);
    }
    for j in 0..d {
        for k in j..d {
            let mut p = vec![0; d + 1];
            p[j] += 1;
            p[k] += 1;
            pats.push(p);
        }
    }
    pats
}

/// Computes space-time error norms of the full coefficient tensor (free
/// solution plus lifting) against a manufactured solution by element-wise
/// quadrature. `quad` should match the assembly grid; pass a refined grid to
/// rule out quadrature-limited plateaus.
pub fn compute_errors(
    coeffs_full: &Tensor,
    space: &TensorSpace,
    geom: &GeometryMap,
    exact: &ManufacturedSolution,
    quad: &QuadratureGrid,
) -> Result<ErrorReport> {
    let d = space.dim();
    let t_final = geom.final_time();
    assert_eq!(coeffs_full.dims(), space.full_dims().as_slice());

    // Per-direction element tables.
    let mut tables: Vec<Vec<ElementTable1d>> = Vec::with_capacity(d + 1);
    for k in 0..d {
        tables.push(tabulate_elements(space.spatial(k), &quad.spatial[k], 2));
    }
    tables.push(tabulate_elements(space.temporal(), &quad.temporal, 1));

    let pats = error_patterns(d);
    let ext: Vec<usize> = (0..d)
        .map(|k| space.spatial(k).degree() + 1)
        .chain([space.temporal().degree() + 1])
        .collect();
    let nq: Vec<usize> = (0..d)
        .map(|k| quad.spatial[k].points_per_element)
        .chain([quad.temporal.points_per_element])
        .collect();
    let full_dims = space.full_dims();

    let n_spatial_elements: usize = (0..d).map(|k| quad.spatial[k].num_elements()).product();
    let n_time_elements = quad.temporal.num_elements();
    let nq_spatial: usize = nq[..d].iter().product();
    let nq_local: usize = nq.iter().product();

    // Numerators (error) and denominators (exact solution) per density.
    let mut num = Density::default();
    let mut den = Density::default();

    let mut es = vec![0usize; d];
    let mut local = Tensor::zeros(ext.clone());
    for es_flat in 0..n_spatial_elements {
        let mut rem = es_flat;
        for k in 0..d {
            es[k] = rem % quad.spatial[k].num_elements();
            rem /= quad.spatial[k].num_elements();
        }
        // Geometry once per spatial quadrature point, shared by all time
        // elements.
        let mut phys: Vec<PhysDerivs> = Vec::with_capacity(nq_spatial);
        let mut wdet: Vec<f64> = Vec::with_capacity(nq_spatial);
        for qs in 0..nq_spatial {
            let mut rem = qs;
            let mut eta = Vec::with_capacity(d);
            let mut w = 1.0;
            for k in 0..d {
                let qi = rem % nq[k];
                rem /= nq[k];
                eta.push(quad.spatial[k].element_points(es[k])[qi]);
                w *= quad.spatial[k].element_weights(es[k])[qi];
            }
            let pd = geom.eval(&eta)?;
            wdet.push(w * pd.det.abs());
            phys.push(pd);
        }

        for et in 0..n_time_elements {
            // Local coefficient block.
            let mut gidx = vec![0usize; d + 1];
            for (c, slot) in local.data_mut().iter_mut().enumerate() {
                let mut rem = c;
                for k in 0..=d {
                    let j = rem % ext[k];
                    rem /= ext[k];
                    gidx[k] = if k < d {
                        tables[k][es[k]].first_fn + j
                    } else {
                        tables[d][et].first_fn + j
                    };
                }
                *slot = coeffs_full.data()[crate::splines::flatten(&gidx, &full_dims)];
            }

            // One contraction chain per derivative pattern.
            let mut values: Vec<Tensor> = Vec::with_capacity(pats.len());
            for pat in &pats {
                let mut cur = local.clone();
                for k in 0..=d {
                    let table = if k < d {
                        &tables[k][es[k]]
                    } else {
                        &tables[d][et]
                    };
                    // (nq_k x ext_k) matrix of derivative order pat[k].
                    let m = table
                        .ders
                        .index_axis(ndarray::Axis(0), pat[k])
                        .to_owned();
                    cur = cur.mode_multiply(&m, k)?;
                }
                values.push(cur);
            }

            for q in 0..nq_local {
                let qs = q % nq_spatial;
                let qt = q / nq_spatial;
                let pd = &phys[qs];
                let tau = quad.temporal.element_points(et)[qt];
                let wt = quad.temporal.element_weights(et)[qt] * t_final;
                let weight = wdet[qs] * wt;
                let t = t_final * tau;

                // Parametric derivatives of the discrete solution at q.
                let val = values[0].data()[q];
                let mut grad_param = [0.0f64; 3];
                for k in 0..d {
                    grad_param[k] = values[1 + k].data()[q];
                }
                let dtau = values[1 + d].data()[q];
                let mut hess_param = [[0.0f64; 3]; 3];
                let mut pi = 2 + d;
                for j in 0..d {
                    for k in j..d {
                        hess_param[j][k] = values[pi].data()[q];
                        hess_param[k][j] = hess_param[j][k];
                        pi += 1;
                    }
                }

                // Physical derivatives of the discrete solution.
                let uh = val;
                let uh_t = dtau / t_final;
                let uh_grad = pd.physical_gradient(&grad_param);
                let uh_lap = physical_laplacian(&grad_param, &hess_param, pd);

                let x = pd.x;
                let u = exact.u(&x, t);
                let u_t = exact.u_t(&x, t);
                let u_grad = exact.grad_u(&x, t);
                let u_lap = exact.lap_u(&x, t);

                let mut grad_err_sq = 0.0;
                let mut grad_sq = 0.0;
                for c in 0..d {
                    grad_err_sq += (uh_grad[c] - u_grad[c]) * (uh_grad[c] - u_grad[c]);
                    grad_sq += u_grad[c] * u_grad[c];
                }
                num.l2 += weight * (uh - u) * (uh - u);
                num.dt += weight * (uh_t - u_t) * (uh_t - u_t);
                num.lap += weight * (uh_lap - u_lap) * (uh_lap - u_lap);
                num.grad += weight * grad_err_sq;
                den.l2 += weight * u * u;
                den.dt += weight * u_t * u_t;
                den.lap += weight * u_lap * u_lap;
                den.grad += weight * grad_sq;
            }
        }
    }

    let v0_abs = (num.lap + num.dt).sqrt();
    let v0_den = (den.lap + den.dt).sqrt();
    let l2_abs = num.l2.sqrt();
    let l2_den = den.l2.sqrt();
    let h1_abs = (num.l2 + num.grad + num.dt).sqrt();
    let h1_den = (den.l2 + den.grad + den.dt).sqrt();
    let rel = |abs: f64, denom: f64| if denom > 0.0 { abs / denom } else { abs };
    Ok(ErrorReport {
        v0_abs,
        v0_rel: rel(v0_abs, v0_den),
        l2_abs,
        l2_rel: rel(l2_abs, l2_den),
        h1_abs,
        h1_rel: rel(h1_abs, h1_den),
        n_dof: space.n_dof(),
        mesh_size: space.spatial(0).knot_vector().mesh_size(),
        degree_space: space.spatial(0).degree(),
        degree_time: space.temporal().degree(),
    })
}

#[derive(Default)]
struct Density {
    l2: f64,
    dt: f64,
    grad: f64,
    lap: f64,
}
