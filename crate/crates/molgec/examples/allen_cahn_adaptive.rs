//! Adaptive-refinement control on the Allen-Cahn front.
//!
//! Within every accepted time step the mesh is refined and coarsened until
//! the truncation indicator satisfies `A_n ≤ Tol_n^α`, aiming at
//! equidistributed local contributions `√h_i |α̃_i|`. The moving front drags
//! a cluster of fine cells with it while the flat regions coarsen, so the
//! final meshes carry far fewer unknowns than the uniform runs need for the
//! same tolerance.
//!
//! ```bash
//! cargo run --release -p molgec --example allen_cahn_adaptive
//! ```

use molgec::controller::{control_adaptive, control_uniform, ControlConstants};
use molgec::experiment::render_table;
use molgec::problem::{make_benchmark, BenchmarkId};

fn main() {
    let spec = make_benchmark(&BenchmarkId::allen_cahn());
    let consts = ControlConstants::default();

    let report = control_adaptive(&spec, 1e-3, 1e-3, 103, &consts).expect("control loop");
    print!("{}", render_table(&report));
    let row = report.accepted_row().expect("accepted row");
    println!(
        "accepted: N_M = {}, Θ_est = {:.2}, Θ_ctr = {:.2}",
        row.n,
        row.theta_est.unwrap(),
        row.theta_ctr.unwrap()
    );

    let uniform = control_uniform(&spec, 1e-3, 1e-3, 831, &consts).expect("control loop");
    let urow = uniform.accepted_row().expect("accepted row");
    println!(
        "uniform run at the same tolerance needs N = {}; adaptive uses {:.0}% of that",
        urow.n,
        100.0 * row.n as f64 / urow.n as f64
    );
}
