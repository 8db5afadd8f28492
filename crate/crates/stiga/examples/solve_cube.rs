//! Solve the heat equation on the unit cube and print the run report:
//! iteration count, timings and error norms for one space-time mesh.
//!
//!     cargo run --release --example solve_cube [p] [n_el]

use stiga::geometry::DomainName;
use stiga::harness::{run_single, PrecondChoice, RunConfig};

fn main() -> stiga::Result<()> {
    let mut args = std::env::args().skip(1);
    let degree: usize = args.next().map_or(2, |a| a.parse().expect("degree"));
    let nel: usize = args.next().map_or(8, |a| a.parse().expect("element count"));

    let cfg = RunConfig {
        domain: DomainName::UnitCube,
        degree_space: degree,
        degree_time: degree,
        nel,
        preconditioner: PrecondChoice::P,
        ..Default::default()
    };
    let report = run_single(&cfg)?;

    println!(
        "unit cube, p = {degree}, {nel} elements per direction, {} unknowns",
        report.n_dof
    );
    println!(
        "conjugate gradients: {} iterations to a true relative residual of {:.2e}",
        report.iterations, report.true_relative_residual
    );
    println!(
        "timings: assembly {:.2}s, load {:.2}s, preconditioner setup {:.3}s, solve {:.3}s \
         ({:.0}% of solve time in the preconditioner)",
        report.assembly_seconds,
        report.rhs_seconds,
        report.precond_setup_seconds,
        report.solve_seconds,
        100.0 * report.precond_share
    );
    if let Some(e) = &report.errors {
        println!(
            "relative errors vs the manufactured solution: solution-norm {:.3e}, L2 {:.3e}, H1 {:.3e}",
            e.v0_rel, e.l2_rel, e.h1_rel
        );
    }
    Ok(())
}
