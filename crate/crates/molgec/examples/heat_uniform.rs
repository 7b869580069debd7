//! Uniform-refinement global error control on the heat equation with
//! inhomogeneous Neumann boundary conditions.
//!
//! The problem is very stable, so the time error stays far below the imposed
//! tolerance and control acts through the spatial estimate alone. Because the
//! first run already passes both gates, the controller verifies the observed
//! spatial order with an extra run on the doubled mesh (the row marked `-`).
//!
//! ```bash
//! cargo run --release -p molgec --example heat_uniform
//! ```

use molgec::controller::{control_uniform, ControlConstants};
use molgec::experiment::render_table;
use molgec::problem::{make_benchmark, BenchmarkId};

fn main() {
    let spec = make_benchmark(&BenchmarkId::HeatNeumann);
    let consts = ControlConstants::default();
    for (gtol, n0) in [(1e-2, 25), (1e-3, 51), (1e-4, 103), (1e-5, 207)] {
        let report = control_uniform(&spec, gtol, gtol, n0, &consts).expect("control loop");
        print!("{}", render_table(&report));
        let row = report.accepted_row().expect("accepted row");
        println!(
            "accepted: N = {}, ‖Ẽ‖ = {:.2e}, Θ_est = {:.2}, Θ_ctr = {:.2}\n",
            row.n,
            row.norm_e_total,
            row.theta_est.unwrap(),
            row.theta_ctr.unwrap()
        );
    }
}
