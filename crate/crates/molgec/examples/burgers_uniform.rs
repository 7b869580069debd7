//! Uniform-refinement control on the viscous Burgers' equation.
//!
//! Starting from a coarse 51-point mesh, the spatial estimate dominates: the
//! controller refines the mesh once via the tolerance-derived resolution
//! formula and verifies the observed order from the two runs. At GTol = 1e-2
//! no refinement is needed and an extra coarse check run appears instead.
//!
//! ```bash
//! cargo run --release -p molgec --example burgers_uniform
//! ```

use molgec::controller::{control_uniform, ControlConstants};
use molgec::experiment::render_table;
use molgec::problem::{make_benchmark, BenchmarkId};

fn main() {
    let spec = make_benchmark(&BenchmarkId::burgers());
    let consts = ControlConstants::default();
    for gtol in [1e-2, 1e-3, 1e-4, 1e-5] {
        let report = control_uniform(&spec, gtol, gtol, 51, &consts).expect("control loop");
        print!("{}", render_table(&report));
        let row = report.accepted_row().expect("accepted row");
        println!(
            "accepted: N = {}, ‖Ẽ‖ = {:.2e}, Θ_est = {:.2}, Θ_ctr = {:.2}, reruns = {}\n",
            row.n,
            row.norm_e_total,
            row.theta_est.unwrap(),
            row.theta_ctr.unwrap(),
            report.reruns
        );
    }
}
