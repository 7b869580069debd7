//! PDE problem abstraction and the three benchmark problems.
//!
//! A problem is the scalar parabolic equation
//! `∂_t u = f(t, x, u, ∂_x u, ∂_xx u)` on an interval, with Dirichlet or
//! Neumann data per endpoint, an initial profile, and (for the benchmarks)
//! a closed-form exact solution used to judge the error estimators.

use crate::error::{Error, Result};
use crate::mesh::{BcKind, GridFunction, Level, Mesh, Role};

type Rhs = dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync;
type BoundaryData = dyn Fn(f64) -> f64 + Send + Sync;
type Profile = dyn Fn(f64) -> f64 + Send + Sync;
type Exact = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// One endpoint's boundary condition: a value trace or a flux trace.
pub enum BoundaryCondition {
    /// `u(t, endpoint) = g(t)`
    Dirichlet(Box<BoundaryData>),
    /// `∂_x u(t, endpoint) = g(t)`
    Neumann(Box<BoundaryData>),
}

impl BoundaryCondition {
    pub fn kind(&self) -> BcKind {
        match self {
            BoundaryCondition::Dirichlet(_) => BcKind::Dirichlet,
            BoundaryCondition::Neumann(_) => BcKind::Neumann,
        }
    }

    pub fn data(&self, t: f64) -> f64 {
        match self {
            BoundaryCondition::Dirichlet(g) | BoundaryCondition::Neumann(g) => g(t),
        }
    }
}

/// Full description of an initial boundary value problem.
///
/// `rhs` is `f(t, x, u, p, s)` with `p = ∂_x u` and `s = ∂_xx u`; the three
/// partials feed the analytic Jacobian assembly.
pub struct ProblemSpec {
    pub name: String,
    pub domain: (f64, f64),
    pub horizon: f64,
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    /// Expected spatial convergence order of the semi-discretization.
    pub spatial_order: u32,
    /// Right-hand side `f(t, x, u, p, s)`.
    pub f: Box<Rhs>,
    pub f_u: Box<Rhs>,
    pub f_p: Box<Rhs>,
    pub f_s: Box<Rhs>,
    pub u0: Box<Profile>,
    /// Closed-form solution, when known.
    pub solution: Option<Box<Exact>>,
}

impl ProblemSpec {
    pub fn rhs(&self, t: f64, x: f64, u: f64, p: f64, s: f64) -> f64 {
        (self.f)(t, x, u, p, s)
    }

    pub fn rhs_du(&self, t: f64, x: f64, u: f64, p: f64, s: f64) -> f64 {
        (self.f_u)(t, x, u, p, s)
    }

    pub fn rhs_dp(&self, t: f64, x: f64, u: f64, p: f64, s: f64) -> f64 {
        (self.f_p)(t, x, u, p, s)
    }

    pub fn rhs_ds(&self, t: f64, x: f64, u: f64, p: f64, s: f64) -> f64 {
        (self.f_s)(t, x, u, p, s)
    }

    pub fn initial(&self, x: f64) -> f64 {
        (self.u0)(x)
    }

    pub fn has_exact(&self) -> bool {
        self.solution.is_some()
    }

    pub fn exact(&self, t: f64, x: f64) -> Option<f64> {
        self.solution.as_ref().map(|e| e(t, x))
    }

    pub fn bc_kinds(&self) -> (BcKind, BcKind) {
        (self.left.kind(), self.right.kind())
    }
}

/// Benchmark selector with its parameter record.
#[derive(Clone, Debug, PartialEq)]
pub enum BenchmarkId {
    /// Heat equation with inhomogeneous Neumann fluxes at both ends.
    HeatNeumann,
    /// Viscous Burgers' equation with a travelling-front solution.
    Burgers { eps: f64 },
    /// Bi-stable reaction-diffusion front.
    AllenCahn { diffusion: f64, reaction: f64, lambda: f64, alpha: f64 },
}

impl BenchmarkId {
    pub fn burgers() -> Self {
        BenchmarkId::Burgers { eps: 0.015 }
    }

    pub fn allen_cahn() -> Self {
        BenchmarkId::AllenCahn {
            diffusion: 1e-2,
            reaction: 100.0,
            lambda: 50.0 * std::f64::consts::SQRT_2,
            alpha: 1.5 * std::f64::consts::SQRT_2,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "heat_neumann" => Ok(BenchmarkId::HeatNeumann),
            "burgers" => Ok(BenchmarkId::burgers()),
            "allen_cahn" => Ok(BenchmarkId::allen_cahn()),
            other => Err(Error::UnknownProblem(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BenchmarkId::HeatNeumann => "heat_neumann",
            BenchmarkId::Burgers { .. } => "burgers",
            BenchmarkId::AllenCahn { .. } => "allen_cahn",
        }
    }

    pub const ALL_NAMES: [&'static str; 3] = ["heat_neumann", "burgers", "allen_cahn"];
}

/// Builds the fully populated problem for a benchmark id.
pub fn make_benchmark(id: &BenchmarkId) -> ProblemSpec {
    match id {
        BenchmarkId::HeatNeumann => heat_neumann(),
        BenchmarkId::Burgers { eps } => burgers(*eps),
        BenchmarkId::AllenCahn { diffusion, reaction, lambda, alpha } => {
            allen_cahn(*diffusion, *reaction, *lambda, *alpha)
        }
    }
}

/// `∂_t u = ∂_xx u` on (0,1), T = 0.2, flux `π e^{-π² t} cos(π x)` at both
/// ends, exact solution `e^{-π² t} sin(π x)`.
fn heat_neumann() -> ProblemSpec {
    use std::f64::consts::PI;
    let exact = |t: f64, x: f64| (-PI * PI * t).exp() * (PI * x).sin();
    ProblemSpec {
        name: "heat_neumann".into(),
        domain: (0.0, 1.0),
        horizon: 0.2,
        left: BoundaryCondition::Neumann(Box::new(|t| PI * (-PI * PI * t).exp())),
        right: BoundaryCondition::Neumann(Box::new(|t| {
            PI * (-PI * PI * t).exp() * (PI * 1.0).cos()
        })),
        spatial_order: 2,
        f: Box::new(|_t, _x, _u, _p, s| s),
        f_u: Box::new(|_, _, _, _, _| 0.0),
        f_p: Box::new(|_, _, _, _, _| 0.0),
        f_s: Box::new(|_, _, _, _, _| 1.0),
        u0: Box::new(move |x| exact(0.0, x)),
        solution: Some(Box::new(exact)),
    }
}

/// Travelling-front solution of `∂_t u = ε ∂_xx u − u ∂_x u`. The three
/// exponentials are evaluated with their common maximum factored out, so the
/// formula stays finite for arguments far outside the benchmark window.
fn burgers_exact(eps: f64, t: f64, x: f64) -> f64 {
    let a1 = 0.45 * x / eps;
    let a2 = 0.01 * (10.0 + 6.0 * t + 25.0 * x) / eps;
    let a3 = 0.025 * (6.5 + 9.9 * t) / eps;
    let m = a1.max(a2).max(a3);
    let r1 = (a1 - m).exp();
    let r2 = (a2 - m).exp();
    let r3 = (a3 - m).exp();
    (r1 + 5.0 * r2 + 10.0 * r3) / (10.0 * (r1 + r2 + r3))
}

fn burgers(eps: f64) -> ProblemSpec {
    let exact = move |t: f64, x: f64| burgers_exact(eps, t, x);
    ProblemSpec {
        name: "burgers".into(),
        domain: (0.0, 1.0),
        horizon: 1.0,
        left: BoundaryCondition::Dirichlet(Box::new(move |t| exact(t, 0.0))),
        right: BoundaryCondition::Dirichlet(Box::new(move |t| exact(t, 1.0))),
        spatial_order: 2,
        f: Box::new(move |_t, _x, u, p, s| eps * s - u * p),
        f_u: Box::new(|_, _, _, p, _| -p),
        f_p: Box::new(|_, _, u, _, _| -u),
        f_s: Box::new(move |_, _, _, _, _| eps),
        u0: Box::new(move |x| exact(0.0, x)),
        solution: Some(Box::new(exact)),
    }
}

/// `∂_t u = d ∂_xx u + r u (1 − u²)` with the wave front
/// `u = (1 + e^{λ(x − α t)})^{-1}`.
fn allen_cahn(diffusion: f64, reaction: f64, lambda: f64, alpha: f64) -> ProblemSpec {
    let exact = move |t: f64, x: f64| {
        let z = lambda * (x - alpha * t);
        // evaluate from the decaying side to avoid overflow
        if z > 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    };
    ProblemSpec {
        name: "allen_cahn".into(),
        domain: (0.0, 2.5),
        horizon: 0.5,
        left: BoundaryCondition::Dirichlet(Box::new(move |t| exact(t, 0.0))),
        right: BoundaryCondition::Dirichlet(Box::new(move |t| exact(t, 2.5))),
        spatial_order: 2,
        f: Box::new(move |_t, _x, u, _p, s| diffusion * s + reaction * u * (1.0 - u * u)),
        f_u: Box::new(move |_, _, u, _, _| reaction * (1.0 - 3.0 * u * u)),
        f_p: Box::new(|_, _, _, _, _| 0.0),
        f_s: Box::new(move |_, _, _, _, _| diffusion),
        u0: Box::new(move |x| exact(0.0, x)),
        solution: Some(Box::new(exact)),
    }
}

/// Samples the exact solution at the unknown nodes of a mesh.
pub fn exact_restriction(spec: &ProblemSpec, mesh: &Mesh, level: Level, t: f64) -> Option<GridFunction> {
    if !spec.has_exact() {
        return None;
    }
    let values = mesh
        .unknown_coords()
        .iter()
        .map(|&x| spec.exact(t, x).unwrap())
        .collect();
    Some(GridFunction::new(level, Role::Solution, values))
}

/// Samples the initial profile at the unknown nodes.
pub fn initial_restriction(spec: &ProblemSpec, mesh: &Mesh, level: Level) -> GridFunction {
    let values = mesh.unknown_coords().iter().map(|&x| spec.initial(x)).collect();
    GridFunction::new(level, Role::Solution, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};

    #[test]
    fn heat_exact_at_half() {
        let spec = make_benchmark(&BenchmarkId::HeatNeumann);
        assert_abs_diff_eq!(spec.exact(0.0, 0.5).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn allen_cahn_front_centre() {
        let spec = make_benchmark(&BenchmarkId::allen_cahn());
        let alpha = 1.5 * std::f64::consts::SQRT_2;
        // the front centre sits at x = alpha * t, where u = 1/2
        assert_abs_diff_eq!(spec.exact(0.3, alpha * 0.3).unwrap(), 0.5, epsilon = 1e-13);
        assert_abs_diff_eq!(spec.exact(0.5, 0.75 * std::f64::consts::SQRT_2).unwrap(), 0.5, epsilon = 1e-13);
    }

    #[test]
    fn burgers_exact_at_origin() {
        // frozen from an independent high-precision evaluation of the closed form
        let spec = make_benchmark(&BenchmarkId::burgers());
        assert_relative_eq!(spec.exact(0.0, 0.0).unwrap(), 0.992349085166762, max_relative = 1e-12);
        assert_relative_eq!(spec.exact(1.0, 1.0).unwrap(), 0.179307384960606, max_relative = 1e-12);
    }

    #[test]
    fn burgers_exact_is_overflow_safe() {
        let spec = make_benchmark(&BenchmarkId::burgers());
        let far = spec.exact(50.0, 40.0).unwrap();
        assert!(far.is_finite());
        assert!((0.0..=1.0).contains(&far));
    }

    #[test]
    fn initial_matches_exact_trace() {
        for id in [BenchmarkId::HeatNeumann, BenchmarkId::burgers(), BenchmarkId::allen_cahn()] {
            let spec = make_benchmark(&id);
            for k in 0..=10 {
                let x = spec.domain.0 + (spec.domain.1 - spec.domain.0) * k as f64 / 10.0;
                assert_abs_diff_eq!(spec.initial(x), spec.exact(0.0, x).unwrap(), epsilon = 1e-14);
            }
            // Dirichlet data equals the exact solution trace
            if spec.left.kind() == BcKind::Dirichlet {
                for t in [0.0, 0.3 * spec.horizon, spec.horizon] {
                    assert_abs_diff_eq!(
                        spec.left.data(t),
                        spec.exact(t, spec.domain.0).unwrap(),
                        epsilon = 1e-14
                    );
                    assert_abs_diff_eq!(
                        spec.right.data(t),
                        spec.exact(t, spec.domain.1).unwrap(),
                        epsilon = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn exact_restriction_samples_nodes() {
        let spec = make_benchmark(&BenchmarkId::HeatNeumann);
        let mesh = Mesh::uniform(0.0, 1.0, 8, BcKind::Neumann, BcKind::Neumann).unwrap();
        let g = exact_restriction(&spec, &mesh, Level::Fine, 0.0).unwrap();
        for (k, &v) in g.values().iter().enumerate() {
            let x = mesh.unknown_coords()[k];
            assert_abs_diff_eq!(v, (std::f64::consts::PI * x).sin(), epsilon = 1e-15);
        }
        let diff: Vec<f64> = g.values().iter().map(|_| 0.0).collect();
        assert_eq!(mesh.l2_norm(&diff).unwrap(), 0.0);
    }

    /// 4th-order central stencils for the consistency oracle.
    fn d_dt(f: &dyn Fn(f64, f64) -> f64, t: f64, x: f64, d: f64) -> f64 {
        (-f(t + 2.0 * d, x) + 8.0 * f(t + d, x) - 8.0 * f(t - d, x) + f(t - 2.0 * d, x)) / (12.0 * d)
    }

    fn d_dx(f: &dyn Fn(f64, f64) -> f64, t: f64, x: f64, d: f64) -> f64 {
        (-f(t, x + 2.0 * d) + 8.0 * f(t, x + d) - 8.0 * f(t, x - d) + f(t, x - 2.0 * d)) / (12.0 * d)
    }

    fn d2_dx2(f: &dyn Fn(f64, f64) -> f64, t: f64, x: f64, d: f64) -> f64 {
        (-f(t, x + 2.0 * d) + 16.0 * f(t, x + d) - 30.0 * f(t, x) + 16.0 * f(t, x - d)
            - f(t, x - 2.0 * d))
            / (12.0 * d * d)
    }

    #[test]
    fn exact_solutions_satisfy_their_pdes() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(42);
        for id in [BenchmarkId::HeatNeumann, BenchmarkId::burgers(), BenchmarkId::allen_cahn()] {
            let spec = make_benchmark(&id);
            let u = |t: f64, x: f64| spec.exact(t, x).unwrap();
            for _ in 0..100 {
                // keep the stencil inside the domain and away from t = 0
                let t = rng.gen_range(0.1 * spec.horizon..0.9 * spec.horizon);
                let x = rng.gen_range(
                    spec.domain.0 + 0.05 * (spec.domain.1 - spec.domain.0)
                        ..spec.domain.1 - 0.05 * (spec.domain.1 - spec.domain.0),
                );
                let d = 5e-5;
                let ut = d_dt(&u, t, x, d);
                let ux = d_dx(&u, t, x, d);
                let uxx = d2_dx2(&u, t, x, d);
                let f = spec.rhs(t, x, u(t, x), ux, uxx);
                assert!(
                    (ut - f).abs() <= 1e-6 * (1.0 + f.abs()),
                    "{}: residual {} at (t,x)=({t},{x})",
                    spec.name,
                    ut - f
                );
            }
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for id in [BenchmarkId::HeatNeumann, BenchmarkId::burgers(), BenchmarkId::allen_cahn()] {
            let spec = make_benchmark(&id);
            for _ in 0..100 {
                let t = rng.gen_range(0.0..spec.horizon);
                let x = rng.gen_range(spec.domain.0..spec.domain.1);
                let u = rng.gen_range(-1.0..1.5);
                let p = rng.gen_range(-5.0..5.0);
                let s = rng.gen_range(-50.0..50.0);
                let d = 1e-6;
                let fd_u = (spec.rhs(t, x, u + d, p, s) - spec.rhs(t, x, u - d, p, s)) / (2.0 * d);
                let fd_p = (spec.rhs(t, x, u, p + d, s) - spec.rhs(t, x, u, p - d, s)) / (2.0 * d);
                let fd_s = (spec.rhs(t, x, u, p, s + d) - spec.rhs(t, x, u, p, s - d)) / (2.0 * d);
                let scale = 1.0 + fd_u.abs().max(fd_p.abs()).max(fd_s.abs());
                assert!((spec.rhs_du(t, x, u, p, s) - fd_u).abs() <= 1e-6 * scale);
                assert!((spec.rhs_dp(t, x, u, p, s) - fd_p).abs() <= 1e-6 * scale);
                assert!((spec.rhs_ds(t, x, u, p, s) - fd_s).abs() <= 1e-6 * scale);
            }
        }
    }
}
