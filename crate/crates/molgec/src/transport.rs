//! Richardson estimation of the spatial truncation error and implicit-midpoint
//! advancement of the two linearised error-transport equations.
//!
//! Evaluating the semi-discrete operator on the fine mesh and on its coarse
//! parent at the same interpolated state isolates the leading truncation term:
//! with second order in space,
//! `α̃_{2h} = 4/3 (R F_h(t, V) − F_{2h}(t, R V))` approximates the coarse-mesh
//! truncation error. Prolongated and rescaled to the fine mesh it forces the
//! spatial transport equation, while the Hermite midpoint residual forces the
//! temporal one. Both are advanced per step with the step-frozen Jacobian:
//!
//! ```text
//! (I − τ/2 A) δ = 2 y_n + forcing,    y_{n+1} = δ − y_n
//! ```
//!
//! which is the implicit midpoint rule in residual form.

use crate::error::Result;
use crate::mesh::{GridFunction, Level, Marks, MeshPair, Role};
use crate::problem::ProblemSpec;
use crate::spatial::{apply_rhs, ShiftedLu};

/// Global error estimates carried along the time integration; both start
/// from zero at `t = 0`.
#[derive(Clone, Debug)]
pub struct ErrorState {
    /// Global time error estimate on the fine mesh.
    pub e_tilde: GridFunction,
    /// Global spatial error estimate on the fine mesh.
    pub eta_tilde: GridFunction,
}

impl ErrorState {
    pub fn zeros(n_fine: usize) -> Self {
        ErrorState {
            e_tilde: GridFunction::zeros(Level::Fine, Role::Error, n_fine),
            eta_tilde: GridFunction::zeros(Level::Fine, Role::Error, n_fine),
        }
    }
}

/// Richardson estimate of the truncation error on the coarse mesh at the
/// step midpoint, reusing the fine-grid midpoint state and its `F_h` value.
pub fn truncation_estimate_coarse(
    spec: &ProblemSpec,
    pair: &MeshPair,
    t_mid: f64,
    v_mid: &GridFunction,
    f_mid: &GridFunction,
) -> Result<GridFunction> {
    let q = spec.spatial_order;
    let factor = {
        let p = (1u32 << q) as f64; // 2^q
        p / (p - 1.0)
    };
    let vc = crate::mesh::restrict(pair, v_mid)?;
    let fc_of_vc = apply_rhs(spec, pair.coarse(), Level::Coarse, t_mid, &vc)?;
    let rf = crate::mesh::restrict(pair, f_mid)?;
    let values = rf
        .values()
        .iter()
        .zip(fc_of_vc.values())
        .map(|(fine, coarse)| factor * (fine - coarse))
        .collect();
    Ok(GridFunction::new(Level::Coarse, Role::Truncation, values))
}

const EQUAL_SPACING_RTOL: f64 = 1e-12;

/// Prolongates the coarse truncation estimate to the fine mesh: shared nodes
/// are divided by `2^q` when their two flanking fine intervals are equal and
/// by `2^{q-1}` otherwise; midpoints take the mean of the two already-scaled
/// neighbours. Dirichlet boundary nodes contribute zero.
pub fn prolongate_truncation(
    spec: &ProblemSpec,
    alpha_coarse: &GridFunction,
    pair: &MeshPair,
) -> Result<GridFunction> {
    let q = spec.spatial_order;
    let full_div = (1u32 << q) as f64;
    let half_div = (1u32 << (q - 1)) as f64;
    let coarse = pair.coarse();
    let fine = pair.fine();

    // coarse nodal field with zeros at non-unknown (Dirichlet) boundary nodes
    let mut scaled = vec![0.0; coarse.n_nodes()];
    for (k, &a) in alpha_coarse.values().iter().enumerate() {
        scaled[coarse.node_of_unknown(k)] = a;
    }
    for (c, s) in scaled.iter_mut().enumerate() {
        let fi = pair.fine_node_of_coarse(c);
        let div = if fi == 0 || fi == fine.n_nodes() - 1 {
            // a boundary node's flanking fine intervals come from bisecting
            // one coarse interval, hence always locally uniform
            full_div
        } else {
            let h1 = fine.spacing(fi);
            let h2 = fine.spacing(fi + 1);
            if (h1 - h2).abs() <= EQUAL_SPACING_RTOL * h1.max(h2) {
                full_div
            } else {
                half_div
            }
        };
        *s /= div;
    }

    let values = (0..fine.n_unknowns())
        .map(|k| {
            let fi = fine.node_of_unknown(k);
            if fi % 2 == 0 {
                scaled[fi / 2]
            } else {
                let j = (fi + 1) / 2; // coarse interval (1-based), ends j-1 and j
                0.5 * (scaled[j - 1] + scaled[j])
            }
        })
        .collect();
    Ok(GridFunction::new(Level::Fine, Role::Truncation, values))
}

/// Advances the global time-error estimate by one implicit-midpoint step:
/// `(I − τ/2 A) δe = 2 ẽ_n + (2/3) τ r_mid`, `ẽ_{n+1} = δe − ẽ_n`.
pub fn advance_time_error(
    lu_half: &ShiftedLu,
    e_tilde: &GridFunction,
    tau: f64,
    r_mid: &GridFunction,
) -> GridFunction {
    let rhs: Vec<f64> = e_tilde
        .values()
        .iter()
        .zip(r_mid.values())
        .map(|(e, r)| 2.0 * e + (2.0 / 3.0) * tau * r)
        .collect();
    let delta = lu_half.solve(&rhs);
    let values = delta.iter().zip(e_tilde.values()).map(|(d, e)| d - e).collect();
    GridFunction::new(Level::Fine, Role::Error, values)
}

/// Advances the global space-error estimate, identical in structure with
/// forcing `−τ α̃_h(t_{n+1/2})`.
pub fn advance_space_error(
    lu_half: &ShiftedLu,
    eta_tilde: &GridFunction,
    tau: f64,
    alpha_mid: &GridFunction,
) -> GridFunction {
    let rhs: Vec<f64> = eta_tilde
        .values()
        .iter()
        .zip(alpha_mid.values())
        .map(|(e, a)| 2.0 * e - tau * a)
        .collect();
    let delta = lu_half.solve(&rhs);
    let values = delta.iter().zip(eta_tilde.values()).map(|(d, e)| d - e).collect();
    GridFunction::new(Level::Fine, Role::Error, values)
}

/// Outcome of the equidistribution indicator over the fine midpoints.
#[derive(Clone, Debug)]
pub struct IndicatorResult {
    /// `A_n = (Σ 2 h_i |α̃_i|²)^{1/2}` over the midpoint set.
    pub a_n: f64,
    pub refine: Marks,
    pub coarsen: Marks,
}

/// Unscaled truncation values at the fine midpoints, filtered with the
/// step's `(I − γτA)^{-1}`.
///
/// Interpolating the coarse estimate gives the truncation content of the
/// coarse interval each midpoint would refine, which is what the marking
/// decision is about. After a mesh adaptation the transferred solution
/// carries interpolation kinks at the new nodes; their second differences
/// enter the raw Richardson estimate at the size of the source mesh's
/// truncation error and do not shrink under refinement, so marking on the
/// raw field can run away. The filter damps exactly those mesh-frequency
/// components (by `1/(1 + γτ|λ|)` with `|λ| ~ 1/h²`) while leaving the
/// smooth truncation profile essentially untouched.
pub fn indicator_values(
    pair: &MeshPair,
    alpha_coarse: &GridFunction,
    lu_gamma: &ShiftedLu,
) -> Vec<f64> {
    let coarse = pair.coarse();
    let fine = pair.fine();
    let mut nodal = vec![0.0; coarse.n_nodes()];
    for (k, &a) in alpha_coarse.values().iter().enumerate() {
        nodal[coarse.node_of_unknown(k)] = a;
    }
    // fine nodal field without the Richardson rescaling
    let raw: Vec<f64> = (0..fine.n_unknowns())
        .map(|k| {
            let fi = fine.node_of_unknown(k);
            if fi % 2 == 0 {
                nodal[fi / 2]
            } else {
                let j = (fi + 1) / 2;
                0.5 * (nodal[j - 1] + nodal[j])
            }
        })
        .collect();
    let filtered = lu_gamma.solve(&raw);
    (1..=coarse.n_intervals())
        .map(|j| filtered[pair.midpoint_node(j) - fine.first_unknown()])
        .collect()
}

/// Evaluates the equidistribution indicator on the midpoint truncation
/// values and marks coarse intervals for refinement or coarsening against
/// `α_tol = 0.9 Tol_n^α / √N`. Magnitudes are used throughout.
pub fn alpha_indicator(
    pair: &MeshPair,
    midpoint_values: &[f64],
    tol_alpha_n: f64,
) -> IndicatorResult {
    let coarse = pair.coarse();
    debug_assert_eq!(midpoint_values.len(), coarse.n_intervals());
    let n_fine = pair.fine().n_unknowns() as f64;
    let alpha_tol = 0.9 * tol_alpha_n / n_fine.sqrt();

    let mut a_sq = 0.0;
    let mut refine = Marks::none();
    let mut coarsen = Marks::none();
    for j in 1..=coarse.n_intervals() {
        let mid = midpoint_values[j - 1].abs();
        let h_fine = 0.5 * coarse.spacing(j);
        a_sq += 2.0 * h_fine * mid * mid;
        let local = h_fine.sqrt() * mid;
        let node = pair.midpoint_node(j);
        if local > alpha_tol {
            refine.nodes.push(node);
        } else if local < 0.1 * alpha_tol {
            coarsen.nodes.push(node);
        }
    }
    IndicatorResult { a_n: a_sq.sqrt(), refine, coarsen }
}
