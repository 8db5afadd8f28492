//! Cost of the fast-diagonalization preconditioner across mesh refinement:
//! setup time, single-application time (median of repeated applications) and
//! the flop count of the eigenvector transforms against the
//! `4 N (d n_s + n_t)` model. The application-time slope stays near 1 even
//! though the flop model scales like `N^(5/4)` in four space-time dimensions,
//! because the dense transforms run as level-3 matrix products.
//!
//!     cargo run --release --example scaling_study

use stiga::geometry::DomainName;
use stiga::harness::{log_log_slope, run_scaling, PrecondChoice, RunConfig};

fn main() -> stiga::Result<()> {
    let base = RunConfig {
        domain: DomainName::UnitCube,
        degree_space: 2,
        degree_time: 2,
        preconditioner: PrecondChoice::P,
        ..Default::default()
    };
    let rows = run_scaling(&base, &[4, 8, 16, 32], 9)?;

    println!("nel      n_dof     setup      apply     transform flops  model flops");
    for r in &rows {
        println!(
            "{:3} {:10}   {:.3e}  {:.3e}  {:15} {:12}",
            r.nel, r.n_dof, r.setup_seconds, r.apply_median_seconds, r.fd_transform_flops, r.model_flops
        );
    }
    let apply: Vec<(usize, f64)> = rows
        .iter()
        .map(|r| (r.n_dof, r.apply_median_seconds))
        .collect();
    println!(
        "application-time log-log slope vs unknowns: {:.3} (flop model exponent 1.25)",
        log_log_slope(&apply)
    );

    // Degree independence: doubling the degree barely moves the apply time.
    let p2 = run_scaling(&base, &[16], 9)?;
    let p4 = run_scaling(
        &RunConfig {
            degree_space: 4,
            degree_time: 4,
            ..base
        },
        &[16],
        9,
    )?;
    println!(
        "application time at nel=16: p=2 {:.3e}s vs p=4 {:.3e}s",
        p2[0].apply_median_seconds, p4[0].apply_median_seconds
    );
    Ok(())
}
