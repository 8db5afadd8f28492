//! Mesh-refinement study on the quarter annulus: relative errors in the
//! solution norm, L2 and H1 with their observed orders, for balanced degrees
//! and for the spatial-degree-plus-one variant that gains an order.
//!
//!     cargo run --release --example convergence_annulus

use stiga::geometry::DomainName;
use stiga::harness::{run_convergence, RunConfig};

fn main() -> stiga::Result<()> {
    let base = RunConfig {
        domain: DomainName::QuarterAnnulus2d,
        tolerance: 1e-11,
        ..Default::default()
    };
    let pairs = [(2, 2), (3, 3), (3, 2)];
    let rows = run_convergence(&base, &pairs, &[8, 16, 32])?;

    println!("p_s p_t  nel   solution-norm      L2           H1       orders (norm/L2/H1)");
    for r in &rows {
        let f = |o: Option<f64>| o.map_or("  -  ".to_string(), |v| format!("{v:5.2}"));
        println!(
            "{:3} {:3} {:4}   {:.4e}   {:.4e}   {:.4e}   {} {} {}",
            r.degree_space,
            r.degree_time,
            r.nel,
            r.v0_rel,
            r.l2_rel,
            r.h1_rel,
            f(r.order_v0),
            f(r.order_l2),
            f(r.order_h1),
        );
    }
    println!();
    println!("expected orders: solution-norm p_t-1 (p_t with p_s = p_t+1), H1 p_t,");
    println!("L2 p_t+1 for p_t >= 3 and suboptimal for p_t = 2");
    Ok(())
}
