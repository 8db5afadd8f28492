//! Assembly of the space-time least-squares system: time factor matrices,
//! spatial factor matrices, parametric preconditioner factors, the load
//! vector, and strong imposition of boundary/initial data by lifting.
//!
//! The system matrix on the constrained space is never formed; it is the
//! Kronecker sum `K_t (x) M_s + M_t (x) J_s + W_t (x) L_s` over the factor
//! matrices assembled here.

use crate::error::{Error, Result};
use crate::errors::ManufacturedSolution;
use crate::fastdiag::SeparableCoefficient;
use crate::geometry::{GeometryMap, PhysDerivs};
use crate::kronecker::{CsrMatrix, KronSumOperator, KronSumTerm, LinearOperator, Tensor};
use crate::splines::{
    tabulate_elements, Basis1D, DirectionRule, ElementTable1d, QuadratureGrid, TensorSpace,
};
use ndarray::{Array2, Axis};
use std::path::Path;

/// Time factor matrices in physical time `t = T tau`.
///
/// `kt` integrates products of time derivatives, `mt` products of values and
/// `wt` is the rank-one final-time matrix `b_i(T) b_j(T)`; with open knots it
/// has a single nonzero entry, in the last row and column.
#[derive(Clone, Debug)]
pub struct TimeFactors {
    pub kt: Array2<f64>,
    pub mt: Array2<f64>,
    pub wt: Array2<f64>,
}

/// Spatial factor matrices: `ms` the mass, `ls` the stiffness (gradient
/// products) and `js` the Laplacian-product matrix, all over physical space.
#[derive(Clone, Debug)]
pub struct SpaceFactors {
    pub ms: CsrMatrix,
    pub ls: CsrMatrix,
    pub js: CsrMatrix,
}

/// Everything assembled once per run: constrained factors for the solver,
/// full-space factors for applying the operator to lifting data, and the
/// index maps between the two.
#[derive(Clone, Debug)]
pub struct FactorMatrices {
    pub time: TimeFactors,
    pub space: SpaceFactors,
    pub time_full: TimeFactors,
    pub space_full: SpaceFactors,
    /// Constrained spatial flat index -> full spatial flat index.
    pub space_dof_map: Vec<usize>,
    /// Constrained time index -> full time index.
    pub time_dof_map: Vec<usize>,
}

impl FactorMatrices {
    /// The system operator on the constrained space.
    pub fn operator(&self) -> Result<KronSumOperator> {
        KronSumOperator::new(vec![
            KronSumTerm {
                time: self.time.kt.clone(),
                space: self.space.ms.clone(),
            },
            KronSumTerm {
                time: self.time.mt.clone(),
                space: self.space.js.clone(),
            },
            KronSumTerm {
                time: self.time.wt.clone(),
                space: self.space.ls.clone(),
            },
        ])
    }

    /// The same operator over the full tensor space, used to move lifting
    /// data to the right-hand side.
    pub fn full_operator(&self) -> Result<KronSumOperator> {
        KronSumOperator::new(vec![
            KronSumTerm {
                time: self.time_full.kt.clone(),
                space: self.space_full.ms.clone(),
            },
            KronSumTerm {
                time: self.time_full.mt.clone(),
                space: self.space_full.js.clone(),
            },
            KronSumTerm {
                time: self.time_full.wt.clone(),
                space: self.space_full.ls.clone(),
            },
        ])
    }
}

/// Time factor matrices over an arbitrary subset of basis functions.
fn time_factors_on(
    basis: &Basis1D,
    t_final: f64,
    rule: &DirectionRule,
    indices: &[usize],
) -> TimeFactors {
    let m = basis.len();
    let p = basis.degree();
    let mut kt_full = Array2::<f64>::zeros((m, m));
    let mut mt_full = Array2::<f64>::zeros((m, m));
    let tables = tabulate_elements(basis, rule, 1);
    for (e, table) in tables.iter().enumerate() {
        let w = rule.element_weights(e);
        for q in 0..rule.points_per_element {
            for a in 0..=p {
                let ia = table.first_fn + a;
                for b in 0..=p {
                    let ib = table.first_fn + b;
                    // Physical-time scaling: values pick up T, derivatives 1/T.
                    kt_full[(ia, ib)] +=
                        w[q] * table.ders[(1, q, a)] * table.ders[(1, q, b)] / t_final;
                    mt_full[(ia, ib)] +=
                        w[q] * table.ders[(0, q, a)] * table.ders[(0, q, b)] * t_final;
                }
            }
        }
    }
    let end = basis.eval_basis(&[1.0], 0).expect("endpoint evaluation");
    let n = indices.len();
    let mut kt = Array2::<f64>::zeros((n, n));
    let mut mt = Array2::<f64>::zeros((n, n));
    let mut wt = Array2::<f64>::zeros((n, n));
    for (a, &ia) in indices.iter().enumerate() {
        for (b, &ib) in indices.iter().enumerate() {
            kt[(a, b)] = kt_full[(ia, ib)];
            mt[(a, b)] = mt_full[(ia, ib)];
            wt[(a, b)] = end[(0, ia, 0)] * end[(0, ib, 0)];
        }
    }
    TimeFactors { kt, mt, wt }
}

/// Time factors on the initial-condition-free basis (first function removed).
pub fn assemble_time_factors(basis: &Basis1D, t_final: f64, rule: &DirectionRule) -> TimeFactors {
    let indices: Vec<usize> = (1..basis.len()).collect();
    time_factors_on(basis, t_final, rule, &indices)
}

// Shared shape bookkeeping of one spatial element.
struct LocalShapes {
    d: usize,
    ext: Vec<usize>,
    nb_total: usize,
    nq_total: usize,
    b_decomp: Vec<[usize; 3]>,
    q_decomp: Vec<[usize; 3]>,
}

impl LocalShapes {
    fn new(space: &TensorSpace, quad: &QuadratureGrid) -> Self {
        let d = space.dim();
        let ext: Vec<usize> = (0..d).map(|k| space.spatial(k).degree() + 1).collect();
        let nq: Vec<usize> = (0..d).map(|k| quad.spatial[k].points_per_element).collect();
        let nb_total: usize = ext.iter().product();
        let nq_total: usize = nq.iter().product();
        let decomp = |dims: &[usize], count: usize| -> Vec<[usize; 3]> {
            (0..count)
                .map(|flat| {
                    let mut rem = flat;
                    let mut idx = [0usize; 3];
                    for (k, &dk) in dims.iter().enumerate() {
                        idx[k] = rem % dk;
                        rem /= dk;
                    }
                    idx
                })
                .collect()
        };
        let b_decomp = decomp(&ext, nb_total);
        let q_decomp = decomp(&nq, nq_total);
        Self {
            d,
            ext,
            nb_total,
            nq_total,
            b_decomp,
            q_decomp,
        }
    }
}

// Physical element tables: values, gradients and Laplacians of all active
// functions at all quadrature points of one spatial element, with weights
// including |det J|. Geometry is evaluated once per quadrature point.
struct ElementData {
    val: Array2<f64>,
    grads: Vec<Array2<f64>>,
    lap: Array2<f64>,
    wdet: Vec<f64>,
    phys: Vec<PhysDerivs>,
    first_fns: [usize; 3],
}

fn build_element_data(
    geom: &GeometryMap,
    tables: &[Vec<ElementTable1d>],
    quad: &QuadratureGrid,
    es: &[usize],
    shapes: &LocalShapes,
) -> Result<ElementData> {
    let d = shapes.d;
    let nq = shapes.nq_total;
    let nb = shapes.nb_total;
    let mut val = Array2::<f64>::zeros((nq, nb));
    let mut grads = vec![Array2::<f64>::zeros((nq, nb)); d];
    let mut lap = Array2::<f64>::zeros((nq, nb));
    let mut wdet = Vec::with_capacity(nq);
    let mut phys = Vec::with_capacity(nq);
    let mut first_fns = [0usize; 3];
    for k in 0..d {
        first_fns[k] = tables[k][es[k]].first_fn;
    }

    let mut eta = vec![0.0f64; d];
    for q in 0..nq {
        let qd = &shapes.q_decomp[q];
        let mut w = 1.0;
        for k in 0..d {
            eta[k] = quad.spatial[k].element_points(es[k])[qd[k]];
            w *= quad.spatial[k].element_weights(es[k])[qd[k]];
        }
        let pd = geom.eval(&eta)?;
        let (qc, sc) = pd.laplacian_coefficients();
        wdet.push(w * pd.det.abs());

        // Per-direction value/derivative slices at this point.
        let mut b0 = [[0.0f64; 8]; 3];
        let mut b1 = [[0.0f64; 8]; 3];
        let mut b2 = [[0.0f64; 8]; 3];
        for k in 0..d {
            let ders = &tables[k][es[k]].ders;
            for j in 0..shapes.ext[k] {
                b0[k][j] = ders[(0, qd[k], j)];
                b1[k][j] = ders[(1, qd[k], j)];
                b2[k][j] = ders[(2, qd[k], j)];
            }
        }

        for b in 0..nb {
            let bd = &shapes.b_decomp[b];
            let mut value = 1.0;
            for k in 0..d {
                value *= b0[k][bd[k]];
            }
            let mut grad_param = [0.0f64; 3];
            let mut hess_param = [[0.0f64; 3]; 3];
            for j in 0..d {
                let mut g = b1[j][bd[j]];
                for k in 0..d {
                    if k != j {
                        g *= b0[k][bd[k]];
                    }
                }
                grad_param[j] = g;
                for l in j..d {
                    let mut h = 1.0;
                    for k in 0..d {
                        h *= if k == j && k == l {
                            b2[k][bd[k]]
                        } else if k == j || k == l {
                            b1[k][bd[k]]
                        } else {
                            b0[k][bd[k]]
                        };
                    }
                    hess_param[j][l] = h;
                    hess_param[l][j] = h;
                }
            }
            val[(q, b)] = value;
            for c in 0..d {
                let mut g = 0.0;
                for j in 0..d {
                    g += pd.jac_inv[j][c] * grad_param[j];
                }
                grads[c][(q, b)] = g;
            }
            let mut lp = 0.0;
            for j in 0..d {
                for k in 0..d {
                    lp += qc[j][k] * hess_param[j][k];
                }
                lp += sc[j] * grad_param[j];
            }
            lap[(q, b)] = lp;
        }
        phys.push(pd);
    }
    Ok(ElementData {
        val,
        grads,
        lap,
        wdet,
        phys,
        first_fns,
    })
}

// Tensor-product sparsity over the full spatial space: row (i_1..i_d) couples
// to columns within `degree` in every direction. Column indices come out
// sorted because direction 1 is fastest.
fn spatial_sparsity(dims: &[usize], degrees: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let d = dims.len();
    let total: usize = dims.iter().product();
    let mut row_ptr = Vec::with_capacity(total + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    let mut idx = vec![0usize; d];
    for row in 0..total {
        let mut rem = row;
        for k in 0..d {
            idx[k] = rem % dims[k];
            rem /= dims[k];
        }
        let lo: Vec<usize> = (0..d).map(|k| idx[k].saturating_sub(degrees[k])).collect();
        let hi: Vec<usize> = (0..d)
            .map(|k| (idx[k] + degrees[k]).min(dims[k] - 1))
            .collect();
        let width: Vec<usize> = (0..d).map(|k| hi[k] - lo[k] + 1).collect();
        let block: usize = width.iter().product();
        let mut j = vec![0usize; d];
        for c in 0..block {
            let mut rem = c;
            let mut flat = 0;
            for k in (0..d).rev() {
                let _ = k;
            }
            for k in 0..d {
                j[k] = lo[k] + rem % width[k];
                rem /= width[k];
            }
            for k in (0..d).rev() {
                flat = flat * dims[k] + j[k];
            }
            col_idx.push(flat);
        }
        row_ptr.push(col_idx.len());
    }
    (row_ptr, col_idx)
}

// Position of column (j_1..j_d) inside the CSR row of (i_1..i_d).
#[inline]
fn row_position(
    row_idx: &[usize; 3],
    col_idx: &[usize; 3],
    dims: &[usize],
    degrees: &[usize],
) -> usize {
    let d = dims.len();
    let mut pos = 0;
    let mut stride = 1;
    for k in 0..d {
        let lo = row_idx[k].saturating_sub(degrees[k]);
        let hi = (row_idx[k] + degrees[k]).min(dims[k] - 1);
        pos += (col_idx[k] - lo) * stride;
        stride *= hi - lo + 1;
    }
    pos
}

/// Spatial factors over the full basis (boundary functions included).
fn assemble_space_full(
    space: &TensorSpace,
    geom: &GeometryMap,
    quad: &QuadratureGrid,
    threads: usize,
) -> Result<SpaceFactors> {
    let d = space.dim();
    let dims: Vec<usize> = (0..d).map(|k| space.spatial(k).len()).collect();
    let degrees: Vec<usize> = (0..d).map(|k| space.spatial(k).degree()).collect();
    let (row_ptr, col_idx) = spatial_sparsity(&dims, &degrees);
    let nnz = col_idx.len();

    let tables: Vec<Vec<ElementTable1d>> = (0..d)
        .map(|k| tabulate_elements(space.spatial(k), &quad.spatial[k], 2))
        .collect();
    let shapes = LocalShapes::new(space, quad);
    let n_elements: usize = (0..d).map(|k| quad.spatial[k].num_elements()).product();

    // One element's local matrices; computed in parallel, folded into the
    // global values strictly in element order so sums associate identically
    // for every thread count.
    struct ElementLocal {
        first_fns: [usize; 3],
        m_loc: Array2<f64>,
        l_loc: Array2<f64>,
        j_loc: Array2<f64>,
    }

    let compute_element = |e: usize| -> Result<ElementLocal> {
        let mut es = vec![0usize; d];
        let mut rem = e;
        for k in 0..d {
            es[k] = rem % quad.spatial[k].num_elements();
            rem /= quad.spatial[k].num_elements();
        }
        let data = build_element_data(geom, &tables, quad, &es, &shapes)?;
        let weight_rows = |m: &Array2<f64>| -> Array2<f64> {
            let mut w = m.clone();
            for (q, mut row) in w.axis_iter_mut(Axis(0)).enumerate() {
                let f = data.wdet[q];
                row.mapv_inplace(|v| v * f);
            }
            w
        };
        let m_loc = data.val.t().dot(&weight_rows(&data.val));
        let j_loc = data.lap.t().dot(&weight_rows(&data.lap));
        let mut l_loc = Array2::<f64>::zeros((shapes.nb_total, shapes.nb_total));
        for g in &data.grads {
            l_loc = l_loc + g.t().dot(&weight_rows(g));
        }
        Ok(ElementLocal {
            first_fns: data.first_fns,
            m_loc,
            l_loc,
            j_loc,
        })
    };

    let mut vals = [vec![0.0; nnz], vec![0.0; nnz], vec![0.0; nnz]];
    let mut scatter = |local: ElementLocal| {
        for a in 0..shapes.nb_total {
            let ad = &shapes.b_decomp[a];
            let mut row_idx = [0usize; 3];
            for k in 0..d {
                row_idx[k] = local.first_fns[k] + ad[k];
            }
            let mut row_flat = 0;
            for k in (0..d).rev() {
                row_flat = row_flat * dims[k] + row_idx[k];
            }
            let base = row_ptr[row_flat];
            for b in 0..shapes.nb_total {
                let bd = &shapes.b_decomp[b];
                let mut col = [0usize; 3];
                for k in 0..d {
                    col[k] = local.first_fns[k] + bd[k];
                }
                let pos = base + row_position(&row_idx, &col, &dims, &degrees);
                vals[0][pos] += local.m_loc[(a, b)];
                vals[1][pos] += local.l_loc[(a, b)];
                vals[2][pos] += local.j_loc[(a, b)];
            }
        }
    };

    if threads <= 1 {
        for e in 0..n_elements {
            scatter(compute_element(e)?);
        }
    } else {
        let batch = threads * 4;
        for start in (0..n_elements).step_by(batch) {
            let count = batch.min(n_elements - start);
            let mut slots: Vec<Option<Result<ElementLocal>>> = Vec::new();
            slots.resize_with(count, || None);
            let chunk = count.div_ceil(threads);
            std::thread::scope(|scope| {
                for (t, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
                    let compute_element = &compute_element;
                    let lo = start + t * chunk;
                    scope.spawn(move || {
                        for (off, slot) in slot_chunk.iter_mut().enumerate() {
                            *slot = Some(compute_element(lo + off));
                        }
                    });
                }
            });
            for slot in slots {
                scatter(slot.expect("worker filled every slot")?);
            }
        }
    }

    let total: usize = dims.iter().product();
    let [mv, lv, jv] = vals;
    Ok(SpaceFactors {
        ms: CsrMatrix::new(total, total, row_ptr.clone(), col_idx.clone(), mv),
        ls: CsrMatrix::new(total, total, row_ptr.clone(), col_idx.clone(), lv),
        js: CsrMatrix::new(total, total, row_ptr, col_idx, jv),
    })
}

/// Full spatial flat indices of the interior (Dirichlet-free) functions, in
/// constrained colexicographic order.
pub fn interior_spatial_indices(space: &TensorSpace) -> Vec<usize> {
    let d = space.dim();
    let full_dims: Vec<usize> = (0..d).map(|k| space.spatial(k).len()).collect();
    let n_dims: Vec<usize> = (0..d).map(|k| space.n_s(k)).collect();
    let total: usize = n_dims.iter().product();
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut full = 0;
            let mut idx = vec![0usize; d];
            for k in 0..d {
                idx[k] = rem % n_dims[k] + 1;
                rem /= n_dims[k];
            }
            for k in (0..d).rev() {
                full = full * full_dims[k] + idx[k];
            }
            full
        })
        .collect()
}

/// Spatial factors restricted to the interior basis.
pub fn assemble_space_factors(
    space: &TensorSpace,
    geom: &GeometryMap,
    quad: &QuadratureGrid,
    threads: usize,
) -> Result<SpaceFactors> {
    let full = assemble_space_full(space, geom, quad, threads)?;
    let keep = interior_spatial_indices(space);
    Ok(SpaceFactors {
        ms: full.ms.submatrix(&keep, &keep),
        ls: full.ls.submatrix(&keep, &keep),
        js: full.js.submatrix(&keep, &keep),
    })
}

/// Assembles all factor matrices, full and constrained, in one pass.
pub fn assemble_system(
    space: &TensorSpace,
    geom: &GeometryMap,
    quad: &QuadratureGrid,
    threads: usize,
) -> Result<FactorMatrices> {
    let t_final = geom.final_time();
    let m_t = space.temporal().len();
    let all_time: Vec<usize> = (0..m_t).collect();
    let time_full = time_factors_on(space.temporal(), t_final, &quad.temporal, &all_time);
    let time_dof_map: Vec<usize> = (1..m_t).collect();
    let time = time_factors_on(space.temporal(), t_final, &quad.temporal, &time_dof_map);

    let space_full = assemble_space_full(space, geom, quad, threads)?;
    let space_dof_map = interior_spatial_indices(space);
    let constrained = SpaceFactors {
        ms: space_full.ms.submatrix(&space_dof_map, &space_dof_map),
        ls: space_full.ls.submatrix(&space_dof_map, &space_dof_map),
        js: space_full.js.submatrix(&space_dof_map, &space_dof_map),
    };
    Ok(FactorMatrices {
        time,
        space: constrained,
        time_full,
        space_full,
        space_dof_map,
        time_dof_map,
    })
}

/// Univariate preconditioner factor matrices on the parametric domain, in the
/// constrained bases. Without coefficients this is the plain preconditioner;
/// with them, each matrix carries its separable weight.
#[derive(Clone, Debug)]
pub struct ParametricFactors {
    pub kt_hat: Array2<f64>,
    pub mt_hat: Array2<f64>,
    pub j_hat: Vec<Array2<f64>>,
    pub m_hat: Vec<Array2<f64>>,
}

fn univariate_weighted(
    basis: &Basis1D,
    rule: &DirectionRule,
    deriv: usize,
    weight: Option<&[f64]>,
    keep: &[usize],
) -> Result<Array2<f64>> {
    let m = basis.len();
    let p = basis.degree();
    if let Some(w) = weight {
        if w.len() != rule.points.len() {
            return Err(Error::DimensionMismatch {
                expected: rule.points.len(),
                got: w.len(),
            });
        }
    }
    let mut full = Array2::<f64>::zeros((m, m));
    let tables = tabulate_elements(basis, rule, deriv);
    for (e, table) in tables.iter().enumerate() {
        for q in 0..rule.points_per_element {
            let flat_q = e * rule.points_per_element + q;
            let c = match weight {
                Some(w) => {
                    let wq = w[flat_q];
                    if wq <= 0.0 {
                        return Err(Error::NonpositiveCoefficient {
                            direction: deriv,
                            value: wq,
                        });
                    }
                    wq
                }
                None => 1.0,
            };
            let wq = rule.element_weights(e)[q] * c;
            for a in 0..=p {
                for b in 0..=p {
                    full[(table.first_fn + a, table.first_fn + b)] +=
                        wq * table.ders[(deriv, q, a)] * table.ders[(deriv, q, b)];
                }
            }
        }
    }
    let n = keep.len();
    let mut out = Array2::<f64>::zeros((n, n));
    for (a, &ia) in keep.iter().enumerate() {
        for (b, &ib) in keep.iter().enumerate() {
            out[(a, b)] = full[(ia, ib)];
        }
    }
    Ok(out)
}

/// Parametric factor matrices for the fast-diagonalization preconditioner.
pub fn assemble_parametric_factors(
    space: &TensorSpace,
    coeffs: Option<&SeparableCoefficient>,
    quad: &QuadratureGrid,
) -> Result<ParametricFactors> {
    let d = space.dim();
    let time_keep: Vec<usize> = (1..space.temporal().len()).collect();
    let kt_hat = univariate_weighted(
        space.temporal(),
        &quad.temporal,
        1,
        coeffs.map(|c| c.omega_t.as_slice()),
        &time_keep,
    )?;
    let mt_hat = univariate_weighted(
        space.temporal(),
        &quad.temporal,
        0,
        coeffs.map(|c| c.mu_t.as_slice()),
        &time_keep,
    )?;
    let mut j_hat = Vec::with_capacity(d);
    let mut m_hat = Vec::with_capacity(d);
    for k in 0..d {
        let keep: Vec<usize> = (1..space.spatial(k).len() - 1).collect();
        j_hat.push(univariate_weighted(
            space.spatial(k),
            &quad.spatial[k],
            2,
            coeffs.map(|c| c.omega[k].as_slice()),
            &keep,
        )?);
        m_hat.push(univariate_weighted(
            space.spatial(k),
            &quad.spatial[k],
            0,
            coeffs.map(|c| c.mu[k].as_slice()),
            &keep,
        )?);
    }
    Ok(ParametricFactors {
        kt_hat,
        mt_hat,
        j_hat,
        m_hat,
    })
}

impl ParametricFactors {
    /// The preconditioner as an explicit Kronecker-sum operator:
    /// `Kt (x) Md (x) ... (x) M1 + sum_k Mt (x) Md (x) ... Jk ... (x) M1`.
    pub fn operator(&self) -> Result<KronSumOperator> {
        let d = self.j_hat.len();
        let kron_chain = |special: Option<usize>| -> CsrMatrix {
            let mut acc: Option<CsrMatrix> = None;
            for k in 0..d {
                let m = if Some(k) == special {
                    &self.j_hat[k]
                } else {
                    &self.m_hat[k]
                };
                let csr = CsrMatrix::from_dense(m);
                acc = Some(match acc {
                    None => csr,
                    Some(prev) => csr.kron(&prev),
                });
            }
            acc.unwrap()
        };
        let mut terms = vec![KronSumTerm {
            time: self.kt_hat.clone(),
            space: kron_chain(None),
        }];
        for k in 0..d {
            terms.push(KronSumTerm {
                time: self.mt_hat.clone(),
                space: kron_chain(Some(k)),
            });
        }
        KronSumOperator::new(terms)
    }
}

/// Tensor-product Greville interpolant of a space-time function, as a full
/// coefficient tensor. Samples sit at `(F(eta_greville), T tau_greville)`.
pub fn greville_interpolant(
    space: &TensorSpace,
    geom: &GeometryMap,
    f: &dyn Fn(&[f64; 3], f64) -> f64,
) -> Result<Tensor> {
    let d = space.dim();
    let t_final = geom.final_time();
    let full_dims = space.full_dims();
    let n_space_full: usize = full_dims[..d].iter().product();

    let mut grevilles: Vec<Vec<f64>> = (0..d).map(|k| space.spatial(k).greville()).collect();
    grevilles.push(space.temporal().greville());

    // Physical spatial points once, reused across the time grid.
    let mut points = Vec::with_capacity(n_space_full);
    let mut eta = vec![0.0f64; d];
    for s in 0..n_space_full {
        let mut rem = s;
        for k in 0..d {
            eta[k] = grevilles[k][rem % full_dims[k]];
            rem /= full_dims[k];
        }
        points.push(geom.point(&eta)?);
    }

    let mut samples = Tensor::zeros(full_dims.clone());
    let m_t = full_dims[d];
    for it in 0..m_t {
        let t = t_final * grevilles[d][it];
        let out = &mut samples.data_mut()[it * n_space_full..(it + 1) * n_space_full];
        for (o, x) in out.iter_mut().zip(points.iter()) {
            *o = f(x, t);
        }
    }

    // Mode-wise collocation solves turn samples into coefficients.
    let mut coeffs = samples;
    for k in 0..=d {
        let basis = if k < d { space.spatial(k) } else { space.temporal() };
        let colloc = basis.collocation_matrix(&grevilles[k])?;
        let lu = crate::dense::lu_factor(&colloc)?;
        coeffs = mode_solve(&coeffs, &lu, k)?;
    }
    Ok(coeffs)
}

// Solves `B X = T` along one tensor mode.
fn mode_solve(t: &Tensor, lu: &crate::dense::LuFactors, mode: usize) -> Result<Tensor> {
    let dims = t.dims().to_vec();
    let n = dims[mode];
    if lu.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lu.dim(),
        });
    }
    let fast: usize = dims[..mode].iter().product();
    let slow: usize = dims[mode + 1..].iter().product();
    let mut out = Tensor::zeros(dims);
    for l in 0..slow {
        let mut slab = Array2::<f64>::zeros((n, fast));
        for i in 0..n {
            let base = l * n * fast + i * fast;
            for r in 0..fast {
                slab[(i, r)] = t.data()[base + r];
            }
        }
        lu.solve_mat_inplace(&mut slab);
        for i in 0..n {
            let base = l * n * fast + i * fast;
            for r in 0..fast {
                out.data_mut()[base + r] = slab[(i, r)];
            }
        }
    }
    Ok(out)
}

/// Load vector, lifting coefficients and the reduced right-hand side.
#[derive(Clone, Debug)]
pub struct LoadAndLifting {
    /// `F(B_i)` on the free (constrained-space) basis.
    pub load: Vec<f64>,
    /// System right-hand side: the load minus the operator applied to the
    /// lifting, restricted to free functions.
    pub rhs: Vec<f64>,
    /// Lifting coefficients over the full tensor space; zero on free
    /// functions.
    pub lifting: Tensor,
    pub lifting_is_zero: bool,
}

/// Whether a full-space multi-index is a prescribed (boundary or initial)
/// function.
fn is_prescribed(idx: &[usize], space: &TensorSpace) -> bool {
    let d = space.dim();
    for k in 0..d {
        if idx[k] == 0 || idx[k] == space.spatial(k).len() - 1 {
            return true;
        }
    }
    idx[d] == 0
}

/// Assembles the load `F(B_i) = int f (dB_i/dt - Laplace B_i)` over the full
/// basis, interpolates the exact solution at Greville points to fill the
/// prescribed functions, and moves the lifting to the right-hand side by
/// applying the full-space Kronecker operator to it.
///
/// Moving the lifting with the integrated-by-parts operator is valid when
/// the Dirichlet trace is constant in time (zero or steady data); initial
/// data is unrestricted. Every built-in benchmark satisfies this.
pub fn assemble_rhs_and_lifting(
    space: &TensorSpace,
    geom: &GeometryMap,
    exact: &ManufacturedSolution,
    quad: &QuadratureGrid,
    full_operator: &KronSumOperator,
    threads: usize,
) -> Result<LoadAndLifting> {
    let d = space.dim();
    let t_final = geom.final_time();
    let full_dims = space.full_dims();
    let n_space_full: usize = full_dims[..d].iter().product();
    let m_t = full_dims[d];
    let full_len: usize = n_space_full * m_t;

    let tables: Vec<Vec<ElementTable1d>> = (0..d)
        .map(|k| tabulate_elements(space.spatial(k), &quad.spatial[k], 2))
        .collect();
    let time_tables = tabulate_elements(space.temporal(), &quad.temporal, 1);
    let shapes = LocalShapes::new(space, quad);
    let n_elements: usize = (0..d).map(|k| quad.spatial[k].num_elements()).product();
    let p_t = space.temporal().degree();
    let qt_per = quad.temporal.points_per_element;

    // Per-element contribution block (active functions x all time functions),
    // folded into the load in element order; see assemble_space_full for the
    // determinism rationale.
    let compute_element = |e: usize| -> Result<([usize; 3], Array2<f64>)> {
        let mut es = vec![0usize; d];
        let mut rem = e;
        for k in 0..d {
            es[k] = rem % quad.spatial[k].num_elements();
            rem /= quad.spatial[k].num_elements();
        }
        let data = build_element_data(geom, &tables, quad, &es, &shapes)?;
        let mut block = Array2::<f64>::zeros((shapes.nb_total, m_t));
        let mut phi = vec![0.0f64; m_t];
        let mut psi = vec![0.0f64; m_t];
        for q in 0..shapes.nq_total {
            let x = data.phys[q].x;
            phi.fill(0.0);
            psi.fill(0.0);
            for (et, table) in time_tables.iter().enumerate() {
                for qt in 0..qt_per {
                    let tau = quad.temporal.element_points(et)[qt];
                    let w = quad.temporal.element_weights(et)[qt];
                    let fval = exact.f(&x, t_final * tau);
                    for j in 0..=p_t {
                        let it = table.first_fn + j;
                        phi[it] += w * fval * table.ders[(1, qt, j)];
                        psi[it] += w * fval * table.ders[(0, qt, j)] * t_final;
                    }
                }
            }
            let w_sp = data.wdet[q];
            for b in 0..shapes.nb_total {
                let v = w_sp * data.val[(q, b)];
                let lp = w_sp * data.lap[(q, b)];
                for it in 0..m_t {
                    block[(b, it)] += v * phi[it] - lp * psi[it];
                }
            }
        }
        Ok((data.first_fns, block))
    };

    let mut load_full = vec![0.0f64; full_len];
    let mut scatter = |(first_fns, block): ([usize; 3], Array2<f64>)| {
        for b in 0..shapes.nb_total {
            let bd = &shapes.b_decomp[b];
            let mut flat = 0;
            for k in (0..d).rev() {
                flat = flat * full_dims[k] + (first_fns[k] + bd[k]);
            }
            for it in 0..m_t {
                load_full[it * n_space_full + flat] += block[(b, it)];
            }
        }
    };
    if threads <= 1 {
        for e in 0..n_elements {
            scatter(compute_element(e)?);
        }
    } else {
        let batch = threads * 4;
        for start in (0..n_elements).step_by(batch) {
            let count = batch.min(n_elements - start);
            let mut slots: Vec<Option<Result<([usize; 3], Array2<f64>)>>> = Vec::new();
            slots.resize_with(count, || None);
            let chunk = count.div_ceil(threads);
            std::thread::scope(|scope| {
                for (t, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
                    let compute_element = &compute_element;
                    let lo = start + t * chunk;
                    scope.spawn(move || {
                        for (off, slot) in slot_chunk.iter_mut().enumerate() {
                            *slot = Some(compute_element(lo + off));
                        }
                    });
                }
            });
            for slot in slots {
                scatter(slot.expect("worker filled every slot")?);
            }
        }
    }

    // Lifting: Greville interpolant restricted to prescribed functions.
    let interpolant = greville_interpolant(space, geom, &|x, t| exact.u(x, t))?;
    let mut lifting = Tensor::zeros(full_dims.clone());
    let scale = interpolant
        .data()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1.0);
    let mut max_prescribed: f64 = 0.0;
    {
        let mut idx = vec![0usize; d + 1];
        for flat in 0..full_len {
            let mut rem = flat;
            for k in 0..=d {
                idx[k] = rem % full_dims[k];
                rem /= full_dims[k];
            }
            if is_prescribed(&idx, space) {
                let c = interpolant.data()[flat];
                lifting.data_mut()[flat] = c;
                max_prescribed = max_prescribed.max(c.abs());
            }
        }
    }
    let lifting_is_zero = max_prescribed <= 1e-13 * scale;
    if lifting_is_zero {
        lifting.data_mut().fill(0.0);
    }

    // Restrict to free functions and subtract the lifting contribution.
    let space_map = interior_spatial_indices(space);
    let n_dof = space.n_dof();
    let big_n_s = space.big_n_s();
    let mut load = Vec::with_capacity(n_dof);
    for i in 0..n_dof {
        let s = i % big_n_s;
        let t = i / big_n_s;
        load.push(load_full[(t + 1) * n_space_full + space_map[s]]);
    }
    let rhs = if lifting_is_zero {
        load.clone()
    } else {
        let coupled = full_operator.apply(lifting.data());
        let mut rhs = load.clone();
        for i in 0..n_dof {
            let s = i % big_n_s;
            let t = i / big_n_s;
            rhs[i] -= coupled[(t + 1) * n_space_full + space_map[s]];
        }
        rhs
    };

    Ok(LoadAndLifting {
        load,
        rhs,
        lifting,
        lifting_is_zero,
    })
}

/// Expands a free-DOF solution vector to the full tensor space and adds the
/// lifting, giving the complete discrete solution.
pub fn expand_solution(space: &TensorSpace, lifting: &Tensor, free: &[f64]) -> Tensor {
    let d = space.dim();
    let full_dims = space.full_dims();
    let n_space_full: usize = full_dims[..d].iter().product();
    let space_map = interior_spatial_indices(space);
    let big_n_s = space.big_n_s();
    let mut out = lifting.clone();
    for (i, &v) in free.iter().enumerate() {
        let s = i % big_n_s;
        let t = i / big_n_s;
        out.data_mut()[(t + 1) * n_space_full + space_map[s]] += v;
    }
    out
}

/// Writes a sparse matrix in the plain triplet text format
/// (`row col value` per line after a size header).
pub fn export_triplets(m: &CsrMatrix, path: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "stiga-triplets v1");
    let _ = writeln!(out, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals.iter()) {
            let _ = writeln!(out, "{i} {j} {v}");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Slow direct space-time quadrature of the bilinear forms, for validating
/// the Kronecker factorization on small instances.
pub mod oracle {
    use super::*;

    /// Which variant of the bilinear form to integrate directly.
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum BilinearForm {
        /// `int dv/dt dw/dt + int Lap v Lap w + int_Omega grad v(T) . grad w(T)`.
        SumWithFinalTime,
        /// `int (dv/dt dw/dt + Lap v Lap w - dv/dt Lap w - Lap v dw/dt)`.
        LeastSquares,
    }

    /// Dense system matrix over the free basis by direct quadrature.
    pub fn dense_bilinear(
        space: &TensorSpace,
        geom: &GeometryMap,
        quad: &QuadratureGrid,
        form: BilinearForm,
    ) -> Result<Array2<f64>> {
        let d = space.dim();
        let t_final = geom.final_time();
        let n_dof = space.n_dof();
        let mut a = Array2::<f64>::zeros((n_dof, n_dof));

        let tables: Vec<Vec<ElementTable1d>> = (0..d)
            .map(|k| tabulate_elements(space.spatial(k), &quad.spatial[k], 2))
            .collect();
        let time_tables = tabulate_elements(space.temporal(), &quad.temporal, 1);
        let shapes = LocalShapes::new(space, quad);
        let n_elements: usize = (0..d).map(|k| quad.spatial[k].num_elements()).product();
        let p_t = space.temporal().degree();
        let qt_per = quad.temporal.points_per_element;
        let big_n_s = space.big_n_s();

        // Free-function index of a local spatial/time pair, if free.
        let free_index = |data: &ElementData, b: usize, it_global: usize| -> Option<usize> {
            let bd = &shapes.b_decomp[b];
            let mut s = 0;
            for k in (0..d).rev() {
                let full = data.first_fns[k] + bd[k];
                if full == 0 || full == space.spatial(k).len() - 1 {
                    return None;
                }
                s = s * space.n_s(k) + (full - 1);
            }
            if it_global == 0 {
                return None;
            }
            Some((it_global - 1) * big_n_s + s)
        };

        let mut es = vec![0usize; d];
        for e in 0..n_elements {
            let mut rem = e;
            for k in 0..d {
                es[k] = rem % quad.spatial[k].num_elements();
                rem /= quad.spatial[k].num_elements();
            }
            let data = build_element_data(geom, &tables, quad, &es, &shapes)?;
            for (et, ttab) in time_tables.iter().enumerate() {
                for qt in 0..qt_per {
                    let w_t = quad.temporal.element_weights(et)[qt] * t_final;
                    for q in 0..shapes.nq_total {
                        let w = w_t * data.wdet[q];
                        for a_loc in 0..shapes.nb_total {
                            for ja in 0..=p_t {
                                let Some(ia) = free_index(&data, a_loc, ttab.first_fn + ja)
                                else {
                                    continue;
                                };
                                let dta =
                                    data.val[(q, a_loc)] * ttab.ders[(1, qt, ja)] / t_final;
                                let lpa = data.lap[(q, a_loc)] * ttab.ders[(0, qt, ja)];
                                for b_loc in 0..shapes.nb_total {
                                    for jb in 0..=p_t {
                                        let Some(ib) =
                                            free_index(&data, b_loc, ttab.first_fn + jb)
                                        else {
                                            continue;
                                        };
                                        let dtb = data.val[(q, b_loc)]
                                            * ttab.ders[(1, qt, jb)]
                                            / t_final;
                                        let lpb =
                                            data.lap[(q, b_loc)] * ttab.ders[(0, qt, jb)];
                                        let integrand = match form {
                                            BilinearForm::SumWithFinalTime => {
                                                dta * dtb + lpa * lpb
                                            }
                                            BilinearForm::LeastSquares => {
                                                dta * dtb + lpa * lpb - dta * lpb - lpa * dtb
                                            }
                                        };
                                        a[(ia, ib)] += w * integrand;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if form == BilinearForm::SumWithFinalTime {
                // Final-time spatial gradient term.
                let end = space.temporal().eval_basis(&[1.0], 0)?;
                for q in 0..shapes.nq_total {
                    let w = data.wdet[q];
                    for a_loc in 0..shapes.nb_total {
                        for ita in 1..space.temporal().len() {
                            let ba = end[(0, ita, 0)];
                            if ba == 0.0 {
                                continue;
                            }
                            let Some(ia) = free_index(&data, a_loc, ita) else {
                                continue;
                            };
                            for b_loc in 0..shapes.nb_total {
                                for itb in 1..space.temporal().len() {
                                    let bb = end[(0, itb, 0)];
                                    if bb == 0.0 {
                                        continue;
                                    }
                                    let Some(ib) = free_index(&data, b_loc, itb) else {
                                        continue;
                                    };
                                    let mut dot = 0.0;
                                    for c in 0..d {
                                        dot += data.grads[c][(q, a_loc)]
                                            * data.grads[c][(q, b_loc)];
                                    }
                                    a[(ia, ib)] += w * dot * ba * bb;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_domain, DomainName};
    use crate::kronecker::dense_kron;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn quad_for(space: &TensorSpace) -> QuadratureGrid {
        QuadratureGrid::for_space(space, false).unwrap()
    }

    #[test]
    fn time_factors_single_linear_element() {
        // Constrained basis after removing the first hat is b(t) = t on [0,1]:
        // K = int 1 = 1, M = int t^2 = 1/3, W = b(1)^2 = 1.
        let basis = Basis1D::open_uniform(1, 1).unwrap();
        let rule = crate::splines::build_quadrature(basis.knot_vector(), 2).unwrap();
        let tf = assemble_time_factors(&basis, 1.0, &rule);
        assert_eq!(tf.kt.nrows(), 1);
        assert_abs_diff_eq!(tf.kt[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(tf.mt[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(tf.wt[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn time_mass_row_sums_are_basis_integrals() {
        // On the unconstrained basis, row sums of M_t equal int b_i dt by
        // partition of unity.
        let basis = Basis1D::open_uniform(3, 4).unwrap();
        let rule = crate::splines::build_quadrature(basis.knot_vector(), 4).unwrap();
        let all: Vec<usize> = (0..basis.len()).collect();
        let tf = time_factors_on(&basis, 1.0, &rule, &all);
        for i in 0..basis.len() {
            let row_sum: f64 = (0..basis.len()).map(|j| tf.mt[(i, j)]).sum();
            let integral: f64 = rule
                .points
                .iter()
                .zip(rule.weights.iter())
                .map(|(&x, &w)| {
                    let (first, ders) = basis.eval_local(x, 0);
                    if i >= first && i <= first + 3 {
                        w * ders[(0, i - first)]
                    } else {
                        0.0
                    }
                })
                .sum();
            assert_abs_diff_eq!(row_sum, integral, epsilon = 1e-13);
        }
    }

    #[test]
    fn time_factors_scale_with_final_time() {
        let basis = Basis1D::open_uniform(2, 3).unwrap();
        let rule = crate::splines::build_quadrature(basis.knot_vector(), 3).unwrap();
        let tf1 = assemble_time_factors(&basis, 1.0, &rule);
        let tf2 = assemble_time_factors(&basis, 2.0, &rule);
        for i in 0..tf1.kt.nrows() {
            for j in 0..tf1.kt.ncols() {
                assert_abs_diff_eq!(tf2.kt[(i, j)], 0.5 * tf1.kt[(i, j)], epsilon = 1e-13);
                assert_abs_diff_eq!(tf2.mt[(i, j)], 2.0 * tf1.mt[(i, j)], epsilon = 1e-13);
                assert_abs_diff_eq!(tf2.wt[(i, j)], tf1.wt[(i, j)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn final_time_matrix_has_single_nonzero() {
        let basis = Basis1D::open_uniform(3, 5).unwrap();
        let rule = crate::splines::build_quadrature(basis.knot_vector(), 4).unwrap();
        let tf = assemble_time_factors(&basis, 1.0, &rule);
        let n = tf.wt.nrows();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == n - 1 && j == n - 1 { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(tf.wt[(i, j)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn unit_square_mass_is_kron_of_univariate_masses() {
        let space = TensorSpace::uniform(2, 2, 2, 1).unwrap();
        let geom = make_domain(DomainName::UnitSquare, 1.0).unwrap();
        let quad = quad_for(&space);
        let sf = assemble_space_factors(&space, &geom, &quad, 1).unwrap();
        let pf = assemble_parametric_factors(&space, None, &quad).unwrap();
        let expect = dense_kron(&pf.m_hat[1], &pf.m_hat[0]);
        let got = sf.ms.to_dense();
        for (a, b) in got.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-13);
        }
    }

    #[test]
    fn annulus_full_mass_sums_to_area() {
        let space = TensorSpace::uniform(2, 2, 2, 4).unwrap();
        let geom = make_domain(DomainName::QuarterAnnulus2d, 1.0).unwrap();
        let quad = quad_for(&space);
        let full = assemble_space_full(&space, &geom, &quad, 1).unwrap();
        let total: f64 = full.ms.to_dense().iter().sum();
        // Partition of unity: sum_ij int B_i B_j = |Omega|. Three Gauss points
        // per element on a rational integrand leave a small quadrature error.
        assert_abs_diff_eq!(total, 3.0 * std::f64::consts::PI / 4.0, epsilon = 1e-6);
    }

    #[test]
    fn stiffness_is_positive_definite() {
        let space = TensorSpace::uniform(2, 2, 2, 3).unwrap();
        let geom = make_domain(DomainName::QuarterAnnulus2d, 1.0).unwrap();
        let quad = quad_for(&space);
        let sf = assemble_space_factors(&space, &geom, &quad, 1).unwrap();
        let n = sf.ls.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm: f64 = x.iter().map(|v| v * v).sum();
            if norm == 0.0 {
                continue;
            }
            let y = sf.ls.matvec(&x);
            let quad_form: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            assert!(quad_form > 0.0);
        }
    }

    #[test]
    fn threaded_assembly_is_bit_identical() {
        let space = TensorSpace::uniform(2, 3, 2, 4).unwrap();
        let geom = make_domain(DomainName::QuarterAnnulus2d, 1.0).unwrap();
        let quad = quad_for(&space);
        let serial = assemble_space_full(&space, &geom, &quad, 1).unwrap();
        let par = assemble_space_full(&space, &geom, &quad, 3).unwrap();
        let a = serial.js.to_dense();
        let b = par.js.to_dense();
        assert_eq!(a, b);
    }

    #[test]
    fn parametric_constant_coefficient_scales_linearly() {
        let space = TensorSpace::uniform(2, 2, 1, 2).unwrap();
        let quad = quad_for(&space);
        let plain = assemble_parametric_factors(&space, None, &quad).unwrap();
        let c = 2.5;
        let coeffs = SeparableCoefficient::constant(&space, &quad, c);
        let weighted = assemble_parametric_factors(&space, Some(&coeffs), &quad).unwrap();
        for k in 0..2 {
            for (a, b) in weighted.m_hat[k].iter().zip(plain.m_hat[k].iter()) {
                assert_abs_diff_eq!(*a, c * b, epsilon = 1e-13);
            }
            for (a, b) in weighted.j_hat[k].iter().zip(plain.j_hat[k].iter()) {
                assert_abs_diff_eq!(*a, c * b, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn parametric_time_factors_match_hand_integration() {
        let space = TensorSpace::uniform(2, 2, 1, 1).unwrap();
        let quad = quad_for(&space);
        let pf = assemble_parametric_factors(&space, None, &quad).unwrap();
        assert_eq!(pf.kt_hat.nrows(), 1);
        assert_abs_diff_eq!(pf.kt_hat[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pf.mt_hat[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn parametric_second_derivative_factor_matches_adaptive_quadrature() {
        let space = TensorSpace::uniform(1, 2, 1, 2).unwrap();
        let quad = quad_for(&space);
        let pf = assemble_parametric_factors(&space, None, &quad).unwrap();
        let basis = space.spatial(0);
        // Piecewise-constant second derivatives: integrate products directly
        // with midpoint sampling per element.
        let keep: Vec<usize> = (1..basis.len() - 1).collect();
        for (a, &ia) in keep.iter().enumerate() {
            for (b, &ib) in keep.iter().enumerate() {
                let mut oracle = 0.0;
                for w in basis.knot_vector().breakpoints().windows(2) {
                    let mid = 0.5 * (w[0] + w[1]);
                    let (first, ders) = basis.eval_local(mid, 2);
                    let da = if ia >= first && ia <= first + 2 {
                        ders[(2, ia - first)]
                    } else {
                        0.0
                    };
                    let db = if ib >= first && ib <= first + 2 {
                        ders[(2, ib - first)]
                    } else {
                        0.0
                    };
                    oracle += (w[1] - w[0]) * da * db;
                }
                assert_abs_diff_eq!(pf.j_hat[0][(a, b)], oracle, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn kron_factorization_matches_direct_quadrature() {
        // The assembled Kronecker-sum operator equals direct space-time
        // quadrature of the sum-with-final-time form entry by entry, and
        // (on the identity map, where the quadrature is exact) also the
        // four-term least-squares form.
        for (domain, nel, p) in [
            (DomainName::UnitSquare, 2, 2),
            (DomainName::QuarterAnnulus2d, 2, 2),
        ] {
            let space = TensorSpace::uniform(2, p, p, nel).unwrap();
            let geom = make_domain(domain, 1.0).unwrap();
            let quad = quad_for(&space);
            let fm = assemble_system(&space, &geom, &quad, 1).unwrap();
            let op = fm.operator().unwrap();
            let dense = op.materialize();
            let direct =
                oracle::dense_bilinear(&space, &geom, &quad, oracle::BilinearForm::SumWithFinalTime)
                    .unwrap();
            let scale = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (x, y) in dense.iter().zip(direct.iter()) {
                assert!(
                    (x - y).abs() <= 1e-10 * scale,
                    "{domain}: {x} vs {y}"
                );
            }
            if domain == DomainName::UnitSquare {
                let ls =
                    oracle::dense_bilinear(&space, &geom, &quad, oracle::BilinearForm::LeastSquares)
                        .unwrap();
                for (x, y) in dense.iter().zip(ls.iter()) {
                    assert!((x - y).abs() <= 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn system_matrix_is_positive_definite() {
        let space = TensorSpace::uniform(2, 2, 2, 2).unwrap();
        let geom = make_domain(DomainName::QuarterAnnulus2d, 1.0).unwrap();
        let quad = quad_for(&space);
        let fm = assemble_system(&space, &geom, &quad, 1).unwrap();
        let dense = fm.operator().unwrap().materialize();
        assert!(crate::dense::cholesky(&dense).is_ok());
    }

    #[test]
    fn zero_solution_means_zero_load_and_lifting() {
        let space = TensorSpace::uniform(2, 2, 2, 2).unwrap();
        let geom = make_domain(DomainName::UnitSquare, 1.0).unwrap();
        let quad = quad_for(&space);
        let fm = assemble_system(&space, &geom, &quad, 1).unwrap();
        let full_op = fm.full_operator().unwrap();
        let ll = assemble_rhs_and_lifting(
            &space,
            &geom,
            &ManufacturedSolution::Zero,
            &quad,
            &full_op,
            1,
        )
        .unwrap();
        assert!(ll.lifting_is_zero);
        assert!(ll.load.iter().all(|&v| v == 0.0));
        assert!(ll.rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cube_benchmark_lifting_is_zero() {
        let space = TensorSpace::uniform(3, 2, 2, 2).unwrap();
        let geom = make_domain(DomainName::UnitCube, 1.0).unwrap();
        let quad = quad_for(&space);
        let fm = assemble_system(&space, &geom, &quad, 1).unwrap();
        let full_op = fm.full_operator().unwrap();
        let ll = assemble_rhs_and_lifting(
            &space,
            &geom,
            &ManufacturedSolution::CubeSine,
            &quad,
            &full_op,
            1,
        )
        .unwrap();
        assert!(ll.lifting_is_zero);
    }

    #[test]
    fn interpolant_residual_decreases_under_refinement() {
        // With nonzero initial data (time-independent solution), the Greville
        // interpolant of u should come close to solving the linear system,
        // and closer under refinement.
        let geom = make_domain(DomainName::RotatedQuarterAnnulus3d, 1.0).unwrap();
        let sol = ManufacturedSolution::RotatedAnnulusSteady;
        let mut residuals = Vec::new();
        for nel in [2, 4] {
            let space = TensorSpace::uniform(3, 2, 2, nel).unwrap();
            let quad = quad_for(&space);
            let fm = assemble_system(&space, &geom, &quad, 1).unwrap();
            let full_op = fm.full_operator().unwrap();
            let ll =
                assemble_rhs_and_lifting(&space, &geom, &sol, &quad, &full_op, 1).unwrap();
            assert!(!ll.lifting_is_zero);
            let interp = greville_interpolant(&space, &geom, &|x, t| sol.u(x, t)).unwrap();
            // Free part of the interpolant.
            let map = interior_spatial_indices(&space);
            let n_space_full: usize = space.full_dims()[..3].iter().product();
            let mut xfree = vec![0.0; space.n_dof()];
            for i in 0..space.n_dof() {
                let s = i % space.big_n_s();
                let t = i / space.big_n_s();
                xfree[i] = interp.data()[(t + 1) * n_space_full + map[s]];
            }
            let op = fm.operator().unwrap();
            let ax = op.apply(&xfree);
            let rhs_norm: f64 = ll.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let res: f64 = ax
                .iter()
                .zip(ll.rhs.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / rhs_norm;
            residuals.push(res);
        }
        assert!(
            residuals[1] < residuals[0],
            "residuals {residuals:?} should decrease"
        );
        assert!(residuals[0] < 0.5);
    }

    #[test]
    fn triplet_export_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = Array2::from_shape_fn((4, 4), |_| {
            if rng.random_bool(0.5) {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let m = CsrMatrix::from_dense(&a);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("factor.txt");
        export_triplets(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "stiga-triplets v1");
        let header: Vec<usize> = lines
            .next()
            .unwrap()
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(header, vec![4, 4, m.nnz()]);
        let mut restored = Array2::<f64>::zeros((4, 4));
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let i: usize = toks[0].parse().unwrap();
            let j: usize = toks[1].parse().unwrap();
            let v: f64 = toks[2].parse().unwrap();
            restored[(i, j)] = v;
        }
        assert_eq!(restored, a);
    }
}
