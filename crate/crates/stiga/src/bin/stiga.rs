//! Command-line driver: one thin subcommand per study, all dispatching into
//! the library harness.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use stiga::harness::{
    compare_preconditioners, default_out_dir, log_log_slope, run_convergence, run_scaling,
    run_single, validate_suite, write_compare_csv, write_convergence_csv, write_reports_csv,
    write_scaling_csv, RunConfig,
};
use stiga::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stiga",
    version,
    about = "Space-time least-squares isogeometric heat solver with fast-diagonalization preconditioning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// unit_square | unit_cube | quarter_annulus_2d | rotated_quarter_annulus_3d
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    degree_space: Option<usize>,
    #[arg(long)]
    degree_time: Option<usize>,
    #[arg(long)]
    final_time: Option<f64>,
    /// p | pg | exact-small
    #[arg(long)]
    precond: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $STIGA_OUT_DIR or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonOpts {
    fn build(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => base,
        };
        if let Some(d) = &self.domain {
            cfg.domain = d.parse()?;
        }
        if let Some(p) = self.degree_space {
            cfg.degree_space = p;
        }
        if let Some(p) = self.degree_time {
            cfg.degree_time = p;
        }
        if let Some(t) = self.final_time {
            cfg.final_time = t;
        }
        if let Some(p) = &self.precond {
            cfg.preconditioner = p.parse()?;
        }
        if let Some(t) = self.tol {
            cfg.tolerance = t;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(default_out_dir);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

#[derive(Subcommand)]
enum Command {
    /// One benchmark run: assembly, preconditioner, conjugate gradients,
    /// error norms, JSON/CSV report.
    Solve {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        nel: Option<usize>,
        /// Skip the error-norm computation.
        #[arg(long)]
        skip_errors: bool,
        /// Double the quadrature points per direction.
        #[arg(long)]
        quad_refine: bool,
    },
    /// Mesh-refinement study reporting error norms and observed orders.
    Convergence {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated element counts, e.g. 8,16,32,64.
        #[arg(long, default_value = "8,16,32,64")]
        nel: String,
        /// Comma-separated time degrees, e.g. 2,3.
        #[arg(long, default_value = "2,3")]
        degrees: String,
        /// Use spatial degree p_t + 1 instead of p_t.
        #[arg(long)]
        unbalanced: bool,
    },
    /// Fast-diagonalization setup and application timings across meshes.
    Scaling {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value = "4,8,16,32")]
        nel: String,
        /// Minimum repetitions for the application-time median.
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Plain versus geometry-aware preconditioner on the same meshes.
    ComparePrecond {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value = "8,16")]
        nel: String,
    },
    /// Small-instance oracle suite: dense operator equivalence,
    /// fast-diagonalization inversion, algebra laws, solver basics.
    Validate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn parse_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad list entry '{t}'")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve {
            common,
            nel,
            skip_errors,
            quad_refine,
        } => {
            let mut cfg = common.build(RunConfig::default())?;
            if let Some(n) = nel {
                cfg.nel = n;
            }
            cfg.errors = !skip_errors;
            cfg.quad_refine = quad_refine;
            let report = run_single(&cfg)?;
            let dir = common.out_dir()?;
            std::fs::write(
                dir.join("solve.json"),
                serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            write_reports_csv(&dir.join("solve.csv"), &[report.clone()])?;
            println!(
                "{} p=({},{}) nel={} precond={}: n_dof={} iterations={} converged={} \
                 true_residual={:.3e} solve={:.3}s (precond share {:.1}%)",
                cfg.domain,
                cfg.degree_space,
                cfg.degree_time,
                cfg.nel,
                cfg.preconditioner,
                report.n_dof,
                report.iterations,
                report.converged,
                report.true_relative_residual,
                report.solve_seconds,
                100.0 * report.precond_share,
            );
            if let Some(e) = &report.errors {
                println!(
                    "errors: solution-norm {:.4e}  l2 {:.4e}  h1 {:.4e} (relative)",
                    e.v0_rel, e.l2_rel, e.h1_rel
                );
            }
            println!("report written to {}", dir.display());
            Ok(report.converged)
        }
        Command::Convergence {
            common,
            nel,
            degrees,
            unbalanced,
        } => {
            let mut base = common.build(RunConfig {
                domain: stiga::geometry::DomainName::QuarterAnnulus2d,
                tolerance: 1e-11,
                ..RunConfig::default()
            })?;
            base.errors = true;
            let nels = parse_list(&nel)?;
            let pts = parse_list(&degrees)?;
            let pairs: Vec<(usize, usize)> = pts
                .iter()
                .map(|&pt| (if unbalanced { pt + 1 } else { pt }, pt))
                .collect();
            let rows = run_convergence(&base, &pairs, &nels)?;
            let dir = common.out_dir()?;
            write_convergence_csv(&dir.join("convergence.csv"), &rows)?;
            std::fs::write(
                dir.join("convergence.json"),
                serde_json::to_string_pretty(&rows).expect("rows serialize"),
            )?;
            println!(
                "p_s p_t  nel      n_dof  iters    v0_rel        l2_rel        h1_rel     ord(v0) ord(l2) ord(h1)"
            );
            for r in &rows {
                let f = |o: Option<f64>| o.map_or("  -  ".into(), |v| format!("{v:5.2}"));
                println!(
                    "{:3} {:3} {:4} {:10} {:6}  {:.6e}  {:.6e}  {:.6e}   {} {} {}",
                    r.degree_space,
                    r.degree_time,
                    r.nel,
                    r.n_dof,
                    r.iterations,
                    r.v0_rel,
                    r.l2_rel,
                    r.h1_rel,
                    f(r.order_v0),
                    f(r.order_l2),
                    f(r.order_h1),
                );
            }
            println!("tables written to {}", dir.display());
            Ok(true)
        }
        Command::Scaling { common, nel, reps } => {
            let base = common.build(RunConfig {
                domain: stiga::geometry::DomainName::UnitCube,
                ..RunConfig::default()
            })?;
            let nels = parse_list(&nel)?;
            let rows = run_scaling(&base, &nels, reps)?;
            let dir = common.out_dir()?;
            write_scaling_csv(&dir.join("scaling.csv"), &rows)?;
            println!("nel      n_dof   setup_s     apply_s   transform_flops  model_flops");
            for r in &rows {
                println!(
                    "{:3} {:10}  {:.3e}  {:.3e}  {:15} {:12}",
                    r.nel,
                    r.n_dof,
                    r.setup_seconds,
                    r.apply_median_seconds,
                    r.fd_transform_flops,
                    r.model_flops
                );
            }
            if rows.len() >= 2 {
                let apply: Vec<(usize, f64)> = rows
                    .iter()
                    .map(|r| (r.n_dof, r.apply_median_seconds))
                    .collect();
                let setup: Vec<(usize, f64)> =
                    rows.iter().map(|r| (r.n_dof, r.setup_seconds)).collect();
                println!(
                    "log-log slopes vs n_dof: apply {:.3}, setup {:.3}",
                    log_log_slope(&apply),
                    log_log_slope(&setup)
                );
            }
            println!("table written to {}", dir.display());
            Ok(true)
        }
        Command::ComparePrecond { common, nel } => {
            let base = common.build(RunConfig {
                domain: stiga::geometry::DomainName::RotatedQuarterAnnulus3d,
                ..RunConfig::default()
            })?;
            let nels = parse_list(&nel)?;
            let rows = compare_preconditioners(&base, &nels)?;
            let dir = common.out_dir()?;
            write_compare_csv(&dir.join("compare.csv"), &rows)?;
            println!("nel      n_dof  precond  iters  converged   solve_s  separation_residual");
            for r in &rows {
                println!(
                    "{:3} {:10}  {:7} {:6} {:10}  {:.3e}  {}",
                    r.nel,
                    r.n_dof,
                    r.preconditioner,
                    r.iterations,
                    r.converged,
                    r.solve_seconds,
                    r.separation_residual
                        .map_or("-".into(), |v| format!("{v:.3}"))
                );
            }
            println!("table written to {}", dir.display());
            Ok(rows.iter().all(|r| r.converged))
        }
        Command::Validate { seed } => validate_suite(seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::Parse(_) => {
                    ExitCode::from(3)
                }
                Error::ResourceRefused(_) => ExitCode::from(4),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
