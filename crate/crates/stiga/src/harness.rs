//! Benchmark orchestration: structured run configuration, the full solve
//! pipeline, convergence/scaling/preconditioner studies, a small-instance
//! validation suite, and CSV/JSON report emission.

use crate::assembly::{
    assemble_parametric_factors, assemble_rhs_and_lifting, assemble_system, expand_solution,
    oracle, ParametricFactors,
};
use crate::error::{Error, Result};
use crate::errors::{compute_errors, observed_order, ErrorReport, ManufacturedSolution};
use crate::fastdiag::{build_fd, separable_approx, FdPreconditioner};
use crate::flops::{self, FlopSnapshot};
use crate::geometry::{make_domain, DomainName, GeometryMap};
use crate::kronecker::{dense_inverse, KronSumOperator, LinearOperator};
use crate::solver::{pcg, symmetry_defect, DenseInverse, PcgConfig, SolveStats};
use crate::splines::{QuadratureGrid, TensorSpace};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "STIGA_OUT_DIR";
/// Environment variable overriding the memory budget, in GiB.
pub const MEM_LIMIT_ENV: &str = "STIGA_MEM_LIMIT_GIB";

pub const SCHEMA_VERSION: u32 = 1;

/// Preconditioner selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondChoice {
    /// Parametric fast diagonalization.
    P,
    /// Geometry-aware variant: separable coefficients plus diagonal scaling.
    Pg,
    /// Dense inverse of the operator; tiny instances only.
    ExactSmall,
}

impl fmt::Display for PrecondChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrecondChoice::P => "p",
            PrecondChoice::Pg => "pg",
            PrecondChoice::ExactSmall => "exact-small",
        })
    }
}

impl FromStr for PrecondChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(PrecondChoice::P),
            "pg" => Ok(PrecondChoice::Pg),
            "exact-small" => Ok(PrecondChoice::ExactSmall),
            other => Err(Error::InvalidConfig(format!(
                "unknown preconditioner '{other}' (expected p, pg or exact-small)"
            ))),
        }
    }
}

/// One benchmark run, loadable from versioned TOML with flag overrides.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub domain: DomainName,
    pub degree_space: usize,
    pub degree_time: usize,
    pub nel: usize,
    pub final_time: f64,
    pub preconditioner: PrecondChoice,
    pub tolerance: f64,
    pub threads: usize,
    pub seed: u64,
    /// Compute error norms against the benchmark's manufactured solution.
    pub errors: bool,
    /// Double the quadrature points (rules out quadrature-limited plateaus).
    pub quad_refine: bool,
    pub max_iterations: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            domain: DomainName::UnitCube,
            degree_space: 2,
            degree_time: 2,
            nel: 8,
            final_time: 1.0,
            preconditioner: PrecondChoice::P,
            tolerance: 1e-8,
            threads: 1,
            seed: 42,
            errors: true,
            quad_refine: false,
            max_iterations: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.degree_space < 2 {
            return Err(Error::InvalidConfig(
                "degree_space must be at least 2 (the discrete space needs C1 continuity)".into(),
            ));
        }
        if self.degree_time < 1 {
            return Err(Error::InvalidConfig("degree_time must be at least 1".into()));
        }
        if self.nel < 1 {
            return Err(Error::InvalidConfig("nel must be at least 1".into()));
        }
        if !(self.final_time > 0.0) {
            return Err(Error::InvalidConfig("final_time must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidConfig("tolerance must lie in (0, 1)".into()));
        }
        if self.threads < 1 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        if self.domain.dim() == 2 && self.nel > 512 || self.domain.dim() == 3 && self.nel > 128 {
            return Err(Error::InvalidConfig(format!(
                "nel = {} is far beyond desk scale",
                self.nel
            )));
        }
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("bad config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn space(&self) -> Result<TensorSpace> {
        TensorSpace::uniform(
            self.domain.dim(),
            self.degree_space,
            self.degree_time,
            self.nel,
        )
    }

    /// Rough peak-memory estimate of the factor matrices and work vectors.
    pub fn estimated_bytes(&self) -> u64 {
        let d = self.domain.dim() as u32;
        let m = (self.nel + self.degree_space) as u64;
        let row = (2 * self.degree_space + 1) as u64;
        let nnz_full = m.pow(d) * row.pow(d);
        let n_dof = m.pow(d) * (self.nel + self.degree_time) as u64;
        // Full + constrained triples of sparse factors, values + column
        // indices, plus a dozen solution-length vectors.
        2 * 3 * nnz_full * 16 + 12 * n_dof * 8
    }

    fn memory_limit_bytes() -> u64 {
        let gib = std::env::var(MEM_LIMIT_ENV)
            .ok()
            .and_then(|v| v.parse::<f64>().ok())
            .unwrap_or(8.0);
        (gib * (1u64 << 30) as f64) as u64
    }
}

/// Everything measured in one run. Serializes losslessly to JSON.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BenchmarkReport {
    pub config: RunConfig,
    pub n_dof: usize,
    pub n_space: usize,
    pub n_time: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_relative_residual: f64,
    pub true_relative_residual: f64,
    pub assembly_seconds: f64,
    pub rhs_seconds: f64,
    pub precond_setup_seconds: f64,
    pub solve_seconds: f64,
    pub precond_apply_seconds: f64,
    pub operator_apply_seconds: f64,
    /// Share of solve time spent applying the preconditioner.
    pub precond_share: f64,
    pub flops: FlopSnapshot,
    pub errors: Option<ErrorReport>,
    pub separation_residual: Option<f64>,
    pub pencil_residual: f64,
    pub rational_geometry: bool,
    pub lifting_is_zero: bool,
    pub residual_history: Vec<f64>,
}

// The assembled pieces a run needs beyond the report.
struct PreparedSystem {
    space: TensorSpace,
    geom: GeometryMap,
    quad: QuadratureGrid,
    op: KronSumOperator,
    rhs: Vec<f64>,
    lifting: crate::kronecker::Tensor,
    lifting_is_zero: bool,
    assembly_seconds: f64,
    rhs_seconds: f64,
}

fn prepare_system(cfg: &RunConfig) -> Result<PreparedSystem> {
    let space = cfg.space()?;
    let geom = make_domain(cfg.domain, cfg.final_time)?;
    let quad = QuadratureGrid::for_space(&space, cfg.quad_refine)?;
    let exact = ManufacturedSolution::for_domain(cfg.domain);

    let t0 = Instant::now();
    let fm = assemble_system(&space, &geom, &quad, cfg.threads)?;
    let assembly_seconds = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let full_op = fm.full_operator()?;
    let ll = assemble_rhs_and_lifting(&space, &geom, &exact, &quad, &full_op, cfg.threads)?;
    let rhs_seconds = t0.elapsed().as_secs_f64();

    let op = fm.operator()?;
    Ok(PreparedSystem {
        space,
        geom,
        quad,
        op,
        rhs: ll.rhs,
        lifting: ll.lifting,
        lifting_is_zero: ll.lifting_is_zero,
        assembly_seconds,
        rhs_seconds,
    })
}

enum Preconditioner {
    Fd(Box<FdPreconditioner>),
    Dense(DenseInverse),
}

impl Preconditioner {
    fn as_operator(&self) -> &dyn LinearOperator {
        match self {
            Preconditioner::Fd(fd) => fd.as_ref(),
            Preconditioner::Dense(d) => d,
        }
    }

    fn pencil_residual(&self) -> f64 {
        match self {
            Preconditioner::Fd(fd) => fd.max_pencil_residual(),
            Preconditioner::Dense(_) => 0.0,
        }
    }
}

fn build_preconditioner(
    cfg: &RunConfig,
    prepared: &PreparedSystem,
) -> Result<(Preconditioner, Option<f64>)> {
    match cfg.preconditioner {
        PrecondChoice::P => {
            let pf = assemble_parametric_factors(&prepared.space, None, &prepared.quad)?;
            Ok((Preconditioner::Fd(Box::new(build_fd(&pf, None)?)), None))
        }
        PrecondChoice::Pg => {
            let sep = separable_approx(&prepared.geom, &prepared.space, &prepared.quad)?;
            let residual = sep.separation_residual;
            let pf = assemble_parametric_factors(&prepared.space, Some(&sep), &prepared.quad)?;
            let fd = build_fd(&pf, Some(&prepared.op.diagonal()))?;
            Ok((Preconditioner::Fd(Box::new(fd)), Some(residual)))
        }
        PrecondChoice::ExactSmall => {
            let n = prepared.op.dim();
            if n > 4096 {
                return Err(Error::InvalidConfig(format!(
                    "exact-small preconditioner limited to 4096 unknowns, got {n}"
                )));
            }
            let dense = prepared.op.materialize();
            Ok((Preconditioner::Dense(DenseInverse::new(&dense)?), None))
        }
    }
}

/// Runs the full pipeline for one configuration: spaces, geometry, assembly,
/// preconditioner, conjugate gradients, error norms, report.
pub fn run_single(cfg: &RunConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let estimate = cfg.estimated_bytes();
    let limit = RunConfig::memory_limit_bytes();
    if estimate > limit {
        return Err(Error::ResourceRefused(format!(
            "estimated {:.1} GiB of factor storage exceeds the {:.1} GiB budget; \
             raise {MEM_LIMIT_ENV} to override",
            estimate as f64 / (1u64 << 30) as f64,
            limit as f64 / (1u64 << 30) as f64,
        )));
    }

    flops::reset_all();
    let prepared = prepare_system(cfg)?;

    let t0 = Instant::now();
    let (pc, separation_residual) = build_preconditioner(cfg, &prepared)?;
    let precond_setup_seconds = t0.elapsed().as_secs_f64();

    // The preconditioner must act symmetrically for conjugate gradients.
    let defect = symmetry_defect(pc.as_operator(), cfg.seed, 2);
    if defect > 1e-10 {
        return Err(Error::NumericalBreakdown(format!(
            "preconditioner symmetry defect {defect:.3e} exceeds 1e-10"
        )));
    }

    let pcg_cfg = PcgConfig {
        tol: cfg.tolerance,
        max_iter: cfg.max_iterations,
        initial_guess: None,
    };
    let t0 = Instant::now();
    let (x, stats) = pcg(&prepared.op, pc.as_operator(), &prepared.rhs, &pcg_cfg)?;
    let solve_seconds = t0.elapsed().as_secs_f64();

    if stats.converged && stats.true_relative_residual > 10.0 * cfg.tolerance {
        return Err(Error::NumericalBreakdown(format!(
            "true residual {:.3e} exceeds 10x the tolerance",
            stats.true_relative_residual
        )));
    }

    let errors = if cfg.errors {
        let full = expand_solution(&prepared.space, &prepared.lifting, &x);
        let exact = ManufacturedSolution::for_domain(cfg.domain);
        Some(compute_errors(
            &full,
            &prepared.space,
            &prepared.geom,
            &exact,
            &prepared.quad,
        )?)
    } else {
        None
    };

    Ok(finish_report(
        cfg,
        &prepared,
        stats,
        errors,
        separation_residual,
        pc.pencil_residual(),
        precond_setup_seconds,
        solve_seconds,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish_report(
    cfg: &RunConfig,
    prepared: &PreparedSystem,
    stats: SolveStats,
    errors: Option<ErrorReport>,
    separation_residual: Option<f64>,
    pencil_residual: f64,
    precond_setup_seconds: f64,
    solve_seconds: f64,
) -> BenchmarkReport {
    BenchmarkReport {
        config: cfg.clone(),
        n_dof: prepared.space.n_dof(),
        n_space: prepared.space.big_n_s(),
        n_time: prepared.space.n_t(),
        iterations: stats.iterations,
        converged: stats.converged,
        final_relative_residual: stats.final_relative_residual,
        true_relative_residual: stats.true_relative_residual,
        assembly_seconds: prepared.assembly_seconds,
        rhs_seconds: prepared.rhs_seconds,
        precond_setup_seconds,
        solve_seconds,
        precond_apply_seconds: stats.precond_seconds,
        operator_apply_seconds: stats.operator_seconds,
        precond_share: if solve_seconds > 0.0 {
            stats.precond_seconds / solve_seconds
        } else {
            0.0
        },
        flops: flops::snapshot(),
        errors,
        separation_residual,
        pencil_residual,
        rational_geometry: prepared.geom.is_rational(),
        lifting_is_zero: prepared.lifting_is_zero,
        residual_history: stats.residual_history,
    }
}

/// One mesh of a convergence study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub degree_space: usize,
    pub degree_time: usize,
    pub nel: usize,
    pub n_dof: usize,
    pub iterations: usize,
    pub v0_rel: f64,
    pub l2_rel: f64,
    pub h1_rel: f64,
    /// Orders against the previous mesh; `None` on the first mesh or when
    /// the errors sit at rounding level ("exact" reproduction).
    pub order_v0: Option<f64>,
    pub order_l2: Option<f64>,
    pub order_h1: Option<f64>,
}

/// Error floor below which a solution counts as exactly reproduced.
pub const EXACT_FLOOR: f64 = 1e-9;

/// Mesh-refinement study over degree pairs `(p_s, p_t)`.
pub fn run_convergence(
    base: &RunConfig,
    degrees: &[(usize, usize)],
    nels: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if nels.len() < 2 {
        return Err(Error::InvalidConfig(
            "a convergence study needs at least two meshes".into(),
        ));
    }
    let mut rows = Vec::new();
    for &(ps, pt) in degrees {
        let mut prev: Option<(f64, f64, f64)> = None;
        for &nel in nels {
            let cfg = RunConfig {
                degree_space: ps,
                degree_time: pt,
                nel,
                errors: true,
                ..base.clone()
            };
            let report = run_single(&cfg)?;
            let err = report.errors.as_ref().expect("errors requested");
            let order = |prev_e: f64, e: f64| -> Option<f64> {
                if prev_e <= EXACT_FLOOR && e <= EXACT_FLOOR {
                    None
                } else {
                    observed_order(prev_e, e).ok()
                }
            };
            let (order_v0, order_l2, order_h1) = match prev {
                None => (None, None, None),
                Some((v0, l2, h1)) => (
                    order(v0, err.v0_rel),
                    order(l2, err.l2_rel),
                    order(h1, err.h1_rel),
                ),
            };
            rows.push(ConvergenceRow {
                degree_space: ps,
                degree_time: pt,
                nel,
                n_dof: report.n_dof,
                iterations: report.iterations,
                v0_rel: err.v0_rel,
                l2_rel: err.l2_rel,
                h1_rel: err.h1_rel,
                order_v0,
                order_l2,
                order_h1,
            });
            prev = Some((err.v0_rel, err.l2_rel, err.h1_rel));
        }
    }
    Ok(rows)
}

/// One mesh of a preconditioner timing study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub nel: usize,
    pub n_dof: usize,
    pub setup_seconds: f64,
    pub apply_median_seconds: f64,
    /// Measured transform flops of one application.
    pub fd_transform_flops: u64,
    /// `4 N_dof (d n_s + n_t)`.
    pub model_flops: u64,
}

/// Fast-diagonalization setup and single-application timings across meshes.
/// Applications are repeated at least `min_reps` times (more on tiny
/// problems) and the median is reported.
pub fn run_scaling(base: &RunConfig, nels: &[usize], min_reps: usize) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &nel in nels {
        let cfg = RunConfig {
            nel,
            errors: false,
            ..base.clone()
        };
        cfg.validate()?;
        let space = cfg.space()?;
        let geom = make_domain(cfg.domain, cfg.final_time)?;
        let quad = QuadratureGrid::for_space(&space, false)?;

        let t0 = Instant::now();
        let fd = match cfg.preconditioner {
            PrecondChoice::Pg => {
                let sep = separable_approx(&geom, &space, &quad)?;
                let pf = assemble_parametric_factors(&space, Some(&sep), &quad)?;
                // Scaling studies time the preconditioner alone; a unit
                // diagonal keeps the assembled operator out of the picture.
                let diag = vec![1.0; space.n_dof()];
                build_fd(&pf, Some(&diag))?
            }
            _ => {
                let pf = assemble_parametric_factors(&space, None, &quad)?;
                build_fd(&pf, None)?
            }
        };
        let setup_seconds = t0.elapsed().as_secs_f64();

        let n = fd.dim();
        let v: Vec<f64> = (0..n).map(|i| ((i % 97) as f64) / 97.0 - 0.5).collect();
        // Warm up and count flops of one application.
        flops::reset_all();
        let mut out = fd.solve(&v)?;
        let fd_transform_flops = flops::read(flops::Category::FdTransform);

        let reps = min_reps
            .max(5)
            .max(((50_000_000 / (n as u64 + 1)) as usize).min(400));
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t0 = Instant::now();
            out = fd.solve(&v)?;
            times.push(t0.elapsed().as_secs_f64());
        }
        std::hint::black_box(&out);
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let apply_median_seconds = times[times.len() / 2];

        let d = space.dim() as u64;
        let n_s = space.n_s(0) as u64;
        let n_t = space.n_t() as u64;
        let model_flops = 4 * (n as u64) * (d * n_s + n_t);
        rows.push(ScalingRow {
            nel,
            n_dof: n,
            setup_seconds,
            apply_median_seconds,
            fd_transform_flops,
            model_flops,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `log y` against `log n_dof`.
pub fn log_log_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(ndof, y) in points {
        let x = (ndof as f64).ln();
        let ly = y.ln();
        sx += x;
        sy += ly;
        sxx += x * x;
        sxy += x * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Side-by-side iteration counts of the plain and geometry-aware
/// preconditioners.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareRow {
    pub nel: usize,
    pub n_dof: usize,
    pub preconditioner: String,
    pub iterations: usize,
    pub converged: bool,
    pub solve_seconds: f64,
    pub separation_residual: Option<f64>,
}

pub fn compare_preconditioners(base: &RunConfig, nels: &[usize]) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for &nel in nels {
        for precond in [PrecondChoice::P, PrecondChoice::Pg] {
            let cfg = RunConfig {
                nel,
                preconditioner: precond,
                errors: false,
                ..base.clone()
            };
            let report = run_single(&cfg)?;
            rows.push(CompareRow {
                nel,
                n_dof: report.n_dof,
                preconditioner: precond.to_string(),
                iterations: report.iterations,
                converged: report.converged,
                solve_seconds: report.solve_seconds,
                separation_residual: report.separation_residual,
            });
        }
    }
    Ok(rows)
}

/// Small-instance oracle suite: dense equivalence of the matrix-free
/// operator, fast-diagonalization inversion of the densely materialized
/// preconditioners, and the basic solver properties. Prints one line per
/// check and returns whether everything passed.
pub fn validate_suite(seed: u64) -> Result<bool> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // Instances with a few hundred unknowns spanning both 2D domains.
    let instances = [
        (DomainName::UnitSquare, 2, 2, 2),
        (DomainName::UnitSquare, 3, 2, 2),
        (DomainName::UnitSquare, 2, 2, 3),
        (DomainName::QuarterAnnulus2d, 2, 2, 2),
        (DomainName::QuarterAnnulus2d, 3, 3, 2),
        (DomainName::QuarterAnnulus2d, 2, 2, 3),
    ];
    for (domain, ps, pt, nel) in instances {
        let space = TensorSpace::uniform(2, ps, pt, nel)?;
        let geom = make_domain(domain, 1.0)?;
        let quad = QuadratureGrid::for_space(&space, false)?;
        let fm = assemble_system(&space, &geom, &quad, 1)?;
        let op = fm.operator()?;
        let n = op.dim();

        // Matrix-free application versus direct dense quadrature.
        let dense = op.materialize();
        let direct = oracle::dense_bilinear(&space, &geom, &quad, oracle::BilinearForm::SumWithFinalTime)?;
        let scale = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut worst: f64 = 0.0;
        for (a, b) in dense.iter().zip(direct.iter()) {
            worst = worst.max((a - b).abs() / scale);
        }
        check(
            "operator-vs-dense-quadrature",
            worst <= 1e-10,
            format!("{domain} p=({ps},{pt}) nel={nel} n={n} rel {worst:.2e}"),
        );

        // Fast diagonalization inverts the densely materialized P and PG.
        for precond in [PrecondChoice::P, PrecondChoice::Pg] {
            let (pf, diag): (ParametricFactors, Option<Vec<f64>>) = match precond {
                PrecondChoice::Pg => {
                    let sep = separable_approx(&geom, &space, &quad)?;
                    (
                        assemble_parametric_factors(&space, Some(&sep), &quad)?,
                        Some(op.diagonal()),
                    )
                }
                _ => (assemble_parametric_factors(&space, None, &quad)?, None),
            };
            let fd = build_fd(&pf, diag.as_deref())?;
            let inner = pf.operator()?;
            let p_dense = match &diag {
                None => inner.materialize(),
                Some(da) => {
                    let dp = inner.diagonal();
                    let scale: Vec<f64> = da
                        .iter()
                        .zip(dp.iter())
                        .map(|(a, p)| (a / p).sqrt())
                        .collect();
                    let scaled = crate::kronecker::SymmetricallyScaled {
                        inner,
                        scale,
                    };
                    scaled.materialize()
                }
            };
            let mut worst: f64 = 0.0;
            for _ in 0..10 {
                let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s = fd.solve(&r)?;
                let mut defect = 0.0;
                let mut rnorm = 0.0;
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += p_dense[(i, j)] * s[j];
                    }
                    defect += (acc - r[i]) * (acc - r[i]);
                    rnorm += r[i] * r[i];
                }
                worst = worst.max((defect / rnorm).sqrt());
            }
            check(
                "fd-inverts-dense-preconditioner",
                worst <= 1e-9,
                format!("{domain} {precond} n={n} rel {worst:.2e}"),
            );
            check(
                "pencil-residuals",
                fd.max_pencil_residual() <= 1e-10,
                format!("{domain} {precond} max {:.2e}", fd.max_pencil_residual()),
            );
        }
    }

    // Kronecker algebra laws on random matrices.
    {
        use crate::kronecker::dense_kron;
        use ndarray::Array2;
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let c = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
            let dm = Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0));
            let e = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
            let f = Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0));
            let t1 = dense_kron(&c, &dm).t().to_owned() - dense_kron(&c.t().to_owned(), &dm.t().to_owned());
            let t2 = dense_kron(&c, &dm).dot(&dense_kron(&e, &f)) - dense_kron(&c.dot(&e), &dm.dot(&f));
            let mut cd = c.clone();
            let mut df = dm.clone();
            for i in 0..3 {
                cd[(i, i)] += 4.0;
            }
            for i in 0..2 {
                df[(i, i)] += 4.0;
            }
            let t3 = dense_inverse(&dense_kron(&cd, &df))?
                - dense_kron(&dense_inverse(&cd)?, &dense_inverse(&df)?);
            for t in [t1, t2, t3] {
                worst = worst.max(t.iter().fold(0.0f64, |a, v| a.max(v.abs())));
            }
        }
        check("kronecker-laws", worst <= 1e-12, format!("max defect {worst:.2e}"));
    }

    // Partition of unity at random points.
    {
        let basis = crate::splines::Basis1D::open_uniform(4, 13)?;
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x: f64 = rng.random_range(0.0..=1.0);
            let (_, ders) = basis.eval_local(x, 0);
            let sum: f64 = (0..=4).map(|j| ders[(0, j)]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
        check("partition-of-unity", worst <= 1e-13, format!("max defect {worst:.2e}"));
    }

    // Exact preconditioner converges in one iteration.
    {
        let cfg = RunConfig {
            domain: DomainName::UnitSquare,
            nel: 2,
            preconditioner: PrecondChoice::ExactSmall,
            errors: false,
            seed,
            ..Default::default()
        };
        let report = run_single(&cfg)?;
        check(
            "exact-preconditioner-one-iteration",
            report.converged && report.iterations == 1,
            format!("iterations {}", report.iterations),
        );
    }

    // Galerkin reproduction of an in-space polynomial solution.
    {
        let cfg = RunConfig {
            domain: DomainName::UnitSquare,
            nel: 3,
            tolerance: 1e-13,
            errors: true,
            seed,
            ..Default::default()
        };
        let report = run_single(&cfg)?;
        let v0 = report.errors.as_ref().map_or(f64::NAN, |e| e.v0_rel);
        check(
            "galerkin-reproduction",
            v0 <= 1e-9,
            format!("relative solution-norm error {v0:.2e}"),
        );
    }

    Ok(all_ok)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "".to_string(), |x| x.to_string())
}

/// Writes solve reports as CSV with a fixed, documented column set.
pub fn write_reports_csv(path: &Path, reports: &[BenchmarkReport]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "domain,degree_space,degree_time,nel,n_dof,preconditioner,iterations,converged,\
         final_relative_residual,true_relative_residual,assembly_seconds,rhs_seconds,\
         precond_setup_seconds,solve_seconds,precond_apply_seconds,operator_apply_seconds,\
         precond_share,fd_transform_flops,operator_apply_flops,eig_setup_flops,\
         v0_rel,l2_rel,h1_rel,separation_residual,pencil_residual,rational_geometry,\
         lifting_is_zero"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.config.domain,
            r.config.degree_space,
            r.config.degree_time,
            r.config.nel,
            r.n_dof,
            r.config.preconditioner,
            r.iterations,
            r.converged,
            r.final_relative_residual,
            r.true_relative_residual,
            r.assembly_seconds,
            r.rhs_seconds,
            r.precond_setup_seconds,
            r.solve_seconds,
            r.precond_apply_seconds,
            r.operator_apply_seconds,
            r.precond_share,
            r.flops.fd_transform,
            r.flops.operator_apply,
            r.flops.eig_setup,
            fmt_opt(r.errors.as_ref().map(|e| e.v0_rel)),
            fmt_opt(r.errors.as_ref().map(|e| e.l2_rel)),
            fmt_opt(r.errors.as_ref().map(|e| e.h1_rel)),
            fmt_opt(r.separation_residual),
            r.pencil_residual,
            r.rational_geometry,
            r.lifting_is_zero,
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_convergence_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "degree_space,degree_time,nel,n_dof,iterations,v0_rel,l2_rel,h1_rel,order_v0,order_l2,order_h1"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.degree_space,
            r.degree_time,
            r.nel,
            r.n_dof,
            r.iterations,
            r.v0_rel,
            r.l2_rel,
            r.h1_rel,
            fmt_opt(r.order_v0),
            fmt_opt(r.order_l2),
            fmt_opt(r.order_h1),
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_scaling_csv(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "nel,n_dof,setup_seconds,apply_median_seconds,fd_transform_flops,model_flops"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.nel, r.n_dof, r.setup_seconds, r.apply_median_seconds, r.fd_transform_flops, r.model_flops
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "nel,n_dof,preconditioner,iterations,converged,solve_seconds,separation_residual"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.nel,
            r.n_dof,
            r.preconditioner,
            r.iterations,
            r.converged,
            r.solve_seconds,
            fmt_opt(r.separation_residual),
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Default output directory: the environment override or `./out`.
pub fn default_out_dir() -> std::path::PathBuf {
    std::env::var(OUT_DIR_ENV)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| std::path::PathBuf::from("out"))
}
