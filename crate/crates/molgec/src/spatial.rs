//! Second-order finite-difference semi-discretization on non-uniform meshes,
//! its tridiagonal Jacobian, and the shifted tridiagonal solver used by the
//! time integrator and both error-transport equations.
//!
//! Interior nodes use the 3-point non-uniform stencils that are exact on
//! quadratics. At a Neumann end the boundary condition is discretized by a
//! central difference through an artificial ghost node at distance `h`, and
//! the ghost value is eliminated into the second-difference stencil.

use crate::error::{Error, Result};
use crate::mesh::{BcKind, GridFunction, Level, Mesh, Role};
use crate::problem::ProblemSpec;

/// First- and second-derivative stencil coefficients at an interior node.
#[inline]
fn interior_stencil(hi: f64, hi1: f64) -> ([f64; 3], [f64; 3]) {
    let cx = [-hi1 / (hi * (hi + hi1)), (hi1 - hi) / (hi * hi1), hi / (hi1 * (hi + hi1))];
    let cs = [2.0 / (hi * (hi + hi1)), -2.0 / (hi * hi1), 2.0 / (hi1 * (hi + hi1))];
    (cx, cs)
}

fn check_neumann_spacing(mesh: &Mesh) -> Result<()> {
    let n = mesh.n_intervals();
    if mesh.bc().0 == BcKind::Neumann && n >= 2 {
        let (h1, h2) = (mesh.spacing(1), mesh.spacing(2));
        if (h1 - h2).abs() > 1e-9 * h1.max(h2) {
            return Err(Error::BoundarySpacing { end: "left", h1, h2 });
        }
    }
    if mesh.bc().1 == BcKind::Neumann && n >= 2 {
        let (h1, h2) = (mesh.spacing(n), mesh.spacing(n - 1));
        if (h1 - h2).abs() > 1e-9 * h1.max(h2) {
            return Err(Error::BoundarySpacing { end: "right", h1, h2 });
        }
    }
    Ok(())
}

/// Nodal values extended by the Dirichlet traces, so every stencil can read
/// its neighbours uniformly.
fn full_values(spec: &ProblemSpec, mesh: &Mesh, t: f64, v: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; mesh.n_nodes()];
    full[mesh.first_unknown()..=mesh.last_unknown()].copy_from_slice(v);
    if mesh.first_unknown() == 1 {
        full[0] = spec.left.data(t);
    }
    if mesh.last_unknown() == mesh.n_nodes() - 2 {
        full[mesh.n_nodes() - 1] = spec.right.data(t);
    }
    full
}

/// Evaluates the semi-discrete right-hand side `F_h(t, v)` on the unknowns.
pub fn apply_rhs(
    spec: &ProblemSpec,
    mesh: &Mesh,
    level: Level,
    t: f64,
    v: &GridFunction,
) -> Result<GridFunction> {
    if v.len() != mesh.n_unknowns() {
        return Err(Error::LengthMismatch { expected: mesh.n_unknowns(), found: v.len() });
    }
    check_neumann_spacing(mesh)?;
    let full = full_values(spec, mesh, t, v.values());
    let x = mesh.nodes();
    let last = mesh.n_nodes() - 1;
    let mut out = Vec::with_capacity(mesh.n_unknowns());
    for k in 0..mesh.n_unknowns() {
        let i = mesh.node_of_unknown(k);
        let (p, s) = if i == 0 {
            let h = mesh.spacing(1);
            let g = spec.left.data(t);
            (g, (2.0 * full[1] - 2.0 * full[0] - 2.0 * h * g) / (h * h))
        } else if i == last {
            let h = mesh.spacing(last);
            let g = spec.right.data(t);
            (g, (2.0 * full[last - 1] - 2.0 * full[last] + 2.0 * h * g) / (h * h))
        } else {
            let (cx, cs) = interior_stencil(mesh.spacing(i), mesh.spacing(i + 1));
            (
                cx[0] * full[i - 1] + cx[1] * full[i] + cx[2] * full[i + 1],
                cs[0] * full[i - 1] + cs[1] * full[i] + cs[2] * full[i + 1],
            )
        };
        out.push(spec.rhs(t, x[i], full[i], p, s));
    }
    Ok(GridFunction::new(level, Role::Residual, out))
}

/// Tridiagonal matrix over the unknowns of one mesh.
#[derive(Clone, Debug)]
pub struct Tridiag {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Tridiag { sub: vec![0.0; n], diag: vec![0.0; n], sup: vec![0.0; n] }
    }

    /// Assembles from the three bands; `sub[0]` and `sup[n-1]` are unused.
    pub fn from_bands(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Self {
        assert_eq!(sub.len(), diag.len());
        assert_eq!(sup.len(), diag.len());
        Tridiag { sub, diag, sup }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn diag_mut(&mut self) -> &mut [f64] {
        &mut self.diag
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.sub[i] * x[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }
}

/// LU factorization of `I - c A`, reused across the solves of one step.
pub struct ShiftedLu {
    lower: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl ShiftedLu {
    /// Thomas factorization of `I - c A`; fails on a zero pivot.
    pub fn factor(a: &Tridiag, c: f64) -> Result<Self> {
        let n = a.len();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n {
            diag[i] = 1.0 - c * a.diag[i];
            sup[i] = -c * a.sup[i];
        }
        for i in 1..n {
            if diag[i - 1] == 0.0 {
                return Err(Error::SingularSystem { pivot: i - 1 });
            }
            let m = (-c * a.sub[i]) / diag[i - 1];
            lower[i] = m;
            diag[i] -= m * sup[i - 1];
        }
        if diag[n - 1] == 0.0 {
            return Err(Error::SingularSystem { pivot: n - 1 });
        }
        Ok(ShiftedLu { lower, diag, sup })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        debug_assert_eq!(rhs.len(), n);
        let mut y = rhs.to_vec();
        for i in 1..n {
            let m = self.lower[i];
            y[i] -= m * y[i - 1];
        }
        y[n - 1] /= self.diag[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = (y[i] - self.sup[i] * y[i + 1]) / self.diag[i];
        }
        y
    }
}

/// Solves `(I - c A) w = rhs` via a one-shot factorization.
pub fn solve_shifted(a: &Tridiag, c: f64, rhs: &GridFunction) -> Result<GridFunction> {
    let lu = ShiftedLu::factor(a, c)?;
    Ok(GridFunction::new(rhs.level(), rhs.role(), lu.solve(rhs.values())))
}

/// Assembles the analytic Jacobian `A = ∂F_h/∂v` with the same stencils and
/// boundary eliminations as [`apply_rhs`].
pub fn jacobian(
    spec: &ProblemSpec,
    mesh: &Mesh,
    t: f64,
    v: &GridFunction,
) -> Result<Tridiag> {
    if v.len() != mesh.n_unknowns() {
        return Err(Error::LengthMismatch { expected: mesh.n_unknowns(), found: v.len() });
    }
    check_neumann_spacing(mesh)?;
    let full = full_values(spec, mesh, t, v.values());
    let x = mesh.nodes();
    let last = mesh.n_nodes() - 1;
    let n = mesh.n_unknowns();
    let mut a = Tridiag::zeros(n);
    for k in 0..n {
        let i = mesh.node_of_unknown(k);
        if i == 0 {
            let h = mesh.spacing(1);
            let g = spec.left.data(t);
            let s = (2.0 * full[1] - 2.0 * full[0] - 2.0 * h * g) / (h * h);
            let fu = spec.rhs_du(t, x[0], full[0], g, s);
            let fs = spec.rhs_ds(t, x[0], full[0], g, s);
            a.diag[k] = fu - fs * 2.0 / (h * h);
            a.sup[k] = fs * 2.0 / (h * h);
        } else if i == last {
            let h = mesh.spacing(last);
            let g = spec.right.data(t);
            let s = (2.0 * full[last - 1] - 2.0 * full[last] + 2.0 * h * g) / (h * h);
            let fu = spec.rhs_du(t, x[last], full[last], g, s);
            let fs = spec.rhs_ds(t, x[last], full[last], g, s);
            a.diag[k] = fu - fs * 2.0 / (h * h);
            a.sub[k] = fs * 2.0 / (h * h);
        } else {
            let (cx, cs) = interior_stencil(mesh.spacing(i), mesh.spacing(i + 1));
            let p = cx[0] * full[i - 1] + cx[1] * full[i] + cx[2] * full[i + 1];
            let s = cs[0] * full[i - 1] + cs[1] * full[i] + cs[2] * full[i + 1];
            let fu = spec.rhs_du(t, x[i], full[i], p, s);
            let fp = spec.rhs_dp(t, x[i], full[i], p, s);
            let fs = spec.rhs_ds(t, x[i], full[i], p, s);
            a.diag[k] = fu + fp * cx[1] + fs * cs[1];
            if i - 1 >= mesh.first_unknown() {
                a.sub[k] = fp * cx[0] + fs * cs[0];
            }
            if i + 1 <= mesh.last_unknown() {
                a.sup[k] = fp * cx[2] + fs * cs[2];
            }
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_pair, Mesh};
    use crate::problem::{make_benchmark, BenchmarkId};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn heat() -> ProblemSpec {
        make_benchmark(&BenchmarkId::HeatNeumann)
    }

    #[test]
    fn constant_profile_has_zero_second_difference() {
        let spec = make_benchmark(&BenchmarkId::allen_cahn());
        // pure reaction on a constant: interior second difference vanishes,
        // so F reduces to the reaction term
        let mesh = Mesh::uniform(0.0, 2.5, 10, BcKind::Dirichlet, BcKind::Dirichlet).unwrap();
        let v = GridFunction::new(Level::Fine, Role::Solution, vec![1.0; mesh.n_unknowns()]);
        // Dirichlet traces at t=0 are not exactly 1, so probe only deep interior rows
        let f = apply_rhs(&spec, &mesh, Level::Fine, 0.0, &v).unwrap();
        for k in 2..mesh.n_unknowns() - 2 {
            assert_abs_diff_eq!(f.values()[k], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn neumann_boundary_row_hand_value() {
        // u identically 0, flux pi at t=0, h=0.1: F_0 = -2 h g / h^2 = -20 pi
        let spec = heat();
        let mesh = Mesh::uniform(0.0, 1.0, 10, BcKind::Neumann, BcKind::Neumann).unwrap();
        let v = GridFunction::zeros(Level::Fine, Role::Solution, mesh.n_unknowns());
        let f = apply_rhs(&spec, &mesh, Level::Fine, 0.0, &v).unwrap();
        assert_relative_eq!(f.values()[0], -20.0 * std::f64::consts::PI, max_relative = 1e-12);
    }

    #[test]
    fn quadratic_exactness_on_nonuniform_mesh() {
        let spec = heat();
        let mesh = Mesh::new(
            vec![0.0, 0.07, 0.2, 0.33, 0.5, 0.61, 0.8, 1.0],
            BcKind::Dirichlet,
            BcKind::Dirichlet,
        )
        .unwrap();
        // boundary data of the heat problem is irrelevant here: probe interior rows
        let v = GridFunction::new(
            Level::Fine,
            Role::Solution,
            mesh.unknown_coords().iter().map(|&x| x * x).collect(),
        );
        let f = apply_rhs(&spec, &mesh, Level::Fine, 0.0, &v).unwrap();
        for k in 1..mesh.n_unknowns() - 1 {
            assert_relative_eq!(f.values()[k], 2.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn stencils_exact_on_linear_and_constant() {
        let spec = make_benchmark(&BenchmarkId::burgers());
        let mesh = Mesh::new(
            vec![0.0, 0.1, 0.25, 0.45, 0.6, 0.85, 1.0],
            BcKind::Dirichlet,
            BcKind::Dirichlet,
        )
        .unwrap();
        // u = 3x + 1 (interior rows): p = 3, s = 0 => f = -u*3
        let v = GridFunction::new(
            Level::Fine,
            Role::Solution,
            mesh.unknown_coords().iter().map(|&x| 3.0 * x + 1.0).collect(),
        );
        let f = apply_rhs(&spec, &mesh, Level::Fine, 0.0, &v).unwrap();
        for k in 1..mesh.n_unknowns() - 1 {
            let x = mesh.unknown_coords()[k];
            assert_relative_eq!(f.values()[k], -(3.0 * x + 1.0) * 3.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn pure_diffusion_jacobian_row() {
        let spec = heat();
        let mesh = Mesh::uniform(0.0, 1.0, 10, BcKind::Dirichlet, BcKind::Dirichlet).unwrap();
        let v = GridFunction::zeros(Level::Fine, Role::Solution, mesh.n_unknowns());
        let a = jacobian(&spec, &mesh, 0.0, &v).unwrap();
        let h2 = 0.01;
        for k in 1..a.len() - 1 {
            assert_relative_eq!(a.sub[k], 1.0 / h2, max_relative = 1e-12);
            assert_relative_eq!(a.diag[k], -2.0 / h2, max_relative = 1e-12);
            assert_relative_eq!(a.sup[k], 1.0 / h2, max_relative = 1e-12);
        }
    }

    #[test]
    fn source_only_problem_has_zero_jacobian() {
        use crate::problem::BoundaryCondition;
        let spec = ProblemSpec {
            name: "source".into(),
            domain: (0.0, 1.0),
            horizon: 1.0,
            left: BoundaryCondition::Dirichlet(Box::new(|_| 0.0)),
            right: BoundaryCondition::Dirichlet(Box::new(|_| 0.0)),
            spatial_order: 2,
            f: Box::new(|t, x, _, _, _| t + x),
            f_u: Box::new(|_, _, _, _, _| 0.0),
            f_p: Box::new(|_, _, _, _, _| 0.0),
            f_s: Box::new(|_, _, _, _, _| 0.0),
            u0: Box::new(|_| 0.0),
            solution: None,
        };
        let mesh = Mesh::uniform(0.0, 1.0, 8, BcKind::Dirichlet, BcKind::Dirichlet).unwrap();
        let v = GridFunction::zeros(Level::Fine, Role::Solution, mesh.n_unknowns());
        let a = jacobian(&spec, &mesh, 0.3, &v).unwrap();
        assert!(a.sub.iter().chain(&a.diag).chain(&a.sup).all(|&c| c == 0.0));
    }

    #[test]
    fn jacobian_matches_directional_derivative() {
        for id in [BenchmarkId::HeatNeumann, BenchmarkId::burgers(), BenchmarkId::allen_cahn()] {
            let spec = make_benchmark(&id);
            let (l, r) = spec.bc_kinds();
            let pair = build_uniform_pair(spec.domain, 41, l, r).unwrap();
            let mesh = pair.fine();
            let t = 0.1 * spec.horizon;
            let v = GridFunction::new(
                Level::Fine,
                Role::Solution,
                mesh.unknown_coords().iter().map(|&x| spec.exact(t, x).unwrap()).collect(),
            );
            let a = jacobian(&spec, mesh, t, &v).unwrap();
            let w: Vec<f64> =
                (0..mesh.n_unknowns()).map(|i| ((i as f64) * 0.61 + 0.3).sin()).collect();
            let wn = mesh.l2_norm(&w).unwrap();
            let w: Vec<f64> = w.iter().map(|x| x / wn).collect();
            let delta = 1e-6;
            let mut vp = v.clone();
            vp.add_scaled(delta, &GridFunction::new(Level::Fine, Role::Solution, w.clone()));
            let f0 = apply_rhs(&spec, mesh, Level::Fine, t, &v).unwrap();
            let f1 = apply_rhs(&spec, mesh, Level::Fine, t, &vp).unwrap();
            let fd: Vec<f64> = f1
                .values()
                .iter()
                .zip(f0.values())
                .map(|(a, b)| (a - b) / delta)
                .collect();
            let aw = a.mul_vec(&w);
            let diff: Vec<f64> = fd.iter().zip(&aw).map(|(a, b)| a - b).collect();
            let rel = mesh.l2_norm(&diff).unwrap();
            let scale = mesh.l2_norm(&aw).unwrap();
            assert!(rel <= 1e-5 * scale.max(1.0), "{}: {rel} vs {scale}", spec.name);
        }
    }

    #[test]
    fn solve_shifted_identity_when_c_is_zero() {
        let a = Tridiag {
            sub: vec![0.0, 2.0, 1.5],
            diag: vec![4.0, -3.0, 2.0],
            sup: vec![1.0, 0.5, 0.0],
        };
        let rhs = GridFunction::new(Level::Fine, Role::Residual, vec![1.0, -2.0, 0.5]);
        let w = solve_shifted(&a, 0.0, &rhs).unwrap();
        assert_eq!(w.values(), rhs.values());
    }

    #[test]
    fn solve_shifted_two_by_two_hand_solve() {
        // A = [[0,1],[1,0]], c = 0.5: (I - 0.5 A) w = (1,0) has w = (4/3, 2/3)
        let a = Tridiag { sub: vec![0.0, 1.0], diag: vec![0.0, 0.0], sup: vec![1.0, 0.0] };
        let rhs = GridFunction::new(Level::Fine, Role::Residual, vec![1.0, 0.0]);
        let w = solve_shifted(&a, 0.5, &rhs).unwrap();
        assert_relative_eq!(w.values()[0], 4.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(w.values()[1], 2.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn solve_shifted_residual_on_random_system() {
        // diagonally dominant 50x50
        let n = 50;
        let mut a = Tridiag::zeros(n);
        for i in 0..n {
            let s = ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5;
            a.diag[i] = 3.0 + s;
            if i > 0 {
                a.sub[i] = 0.9 * ((i * 5 + 1) % 7) as f64 / 7.0;
            }
            if i + 1 < n {
                a.sup[i] = -0.8 * ((i * 3 + 2) % 5) as f64 / 5.0;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.77).cos()).collect();
        let c = 0.23;
        let w = solve_shifted(&a, c, &GridFunction::new(Level::Fine, Role::Residual, rhs.clone()))
            .unwrap();
        let aw = a.mul_vec(w.values());
        let res: Vec<f64> = (0..n).map(|i| w.values()[i] - c * aw[i] - rhs[i]).collect();
        let rn = res.iter().map(|r| r * r).sum::<f64>().sqrt();
        let bn = rhs.iter().map(|r| r * r).sum::<f64>().sqrt();
        assert!(rn <= 1e-12 * bn, "residual {rn}");
    }

    #[test]
    fn singular_system_reports_pivot() {
        let a = Tridiag { sub: vec![0.0, 0.0], diag: vec![1.0, 0.0], sup: vec![0.0, 0.0] };
        let rhs = GridFunction::new(Level::Fine, Role::Residual, vec![1.0, 1.0]);
        // I - 1*A has a zero pivot in row 0
        match solve_shifted(&a, 1.0, &rhs) {
            Err(Error::SingularSystem { pivot }) => assert_eq!(pivot, 0),
            other => panic!("expected singular system, got {other:?}"),
        }
    }
}
