//! Non-uniform 1D meshes, coarse/fine pairs and grid functions.
//!
//! A [`Mesh`] stores all node coordinates `x_0 < x_1 < … < x_{N+1}` including
//! the domain endpoints. Which nodes carry solution unknowns depends on the
//! boundary conditions: interior nodes only for Dirichlet ends, interior plus
//! the boundary node for Neumann ends. A [`MeshPair`] couples a coarse mesh
//! with the fine mesh obtained by bisecting every coarse interval, which is
//! the structure required for Richardson extrapolation of the spatial
//! truncation error.
//!
//! The discrete L2 norm uses the trapezoidal weights `(h_i + h_{i+1})/2` at
//! interior nodes and half-interval weights at Neumann boundary unknowns.

use crate::error::{Error, Result};

/// Which mesh of a [`MeshPair`] a grid function lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Coarse,
    Fine,
}

/// What a grid function represents; a debugging aid carried through the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Solution,
    Error,
    Residual,
    Truncation,
}

/// Boundary treatment per endpoint. Dirichlet ends supply values, so the
/// boundary node carries no unknown; Neumann ends supply fluxes, so it does.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

/// A 1D mesh with strictly increasing nodes and per-end unknown convention.
#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<f64>,
    left: BcKind,
    right: BcKind,
}

impl Mesh {
    pub fn new(nodes: Vec<f64>, left: BcKind, right: BcKind) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidMesh("need at least two nodes".into()));
        }
        if !nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidMesh("nodes must be strictly increasing".into()));
        }
        let mesh = Mesh { nodes, left, right };
        if mesh.n_unknowns() == 0 {
            return Err(Error::InvalidMesh("mesh carries no unknowns".into()));
        }
        Ok(mesh)
    }

    /// Uniform mesh with `n_intervals` equal intervals on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n_intervals: usize, left: BcKind, right: BcKind) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidMesh(format!("empty domain [{a}, {b}]")));
        }
        let nodes = (0..=n_intervals)
            .map(|i| {
                if i == n_intervals {
                    b
                } else {
                    a + (b - a) * i as f64 / n_intervals as f64
                }
            })
            .collect();
        Mesh::new(nodes, left, right)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn bc(&self) -> (BcKind, BcKind) {
        (self.left, self.right)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().unwrap())
    }

    /// Spacing `h_i = x_i - x_{i-1}` for `i` in `1..=n_intervals`.
    pub fn spacing(&self, i: usize) -> f64 {
        self.nodes[i] - self.nodes[i - 1]
    }

    /// Node index of the first unknown.
    pub fn first_unknown(&self) -> usize {
        match self.left {
            BcKind::Neumann => 0,
            BcKind::Dirichlet => 1,
        }
    }

    /// Node index of the last unknown.
    pub fn last_unknown(&self) -> usize {
        match self.right {
            BcKind::Neumann => self.nodes.len() - 1,
            BcKind::Dirichlet => self.nodes.len() - 2,
        }
    }

    pub fn n_unknowns(&self) -> usize {
        self.last_unknown() + 1 - self.first_unknown()
    }

    pub fn node_of_unknown(&self, k: usize) -> usize {
        self.first_unknown() + k
    }

    /// Coordinates of the unknown-carrying nodes.
    pub fn unknown_coords(&self) -> &[f64] {
        &self.nodes[self.first_unknown()..=self.last_unknown()]
    }

    /// L2 weight of unknown `k`: `(h_i + h_{i+1})/2` interior, half-interval
    /// at Neumann boundary nodes.
    pub fn weight(&self, k: usize) -> f64 {
        let i = self.node_of_unknown(k);
        if i == 0 {
            self.spacing(1) / 2.0
        } else if i == self.nodes.len() - 1 {
            self.spacing(self.nodes.len() - 1) / 2.0
        } else {
            (self.spacing(i) + self.spacing(i + 1)) / 2.0
        }
    }

    /// Discrete L2 norm of a vector over the unknown nodes.
    pub fn l2_norm(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.n_unknowns() {
            return Err(Error::LengthMismatch { expected: self.n_unknowns(), found: values.len() });
        }
        if self.n_unknowns() == 0 {
            return Err(Error::EmptyNorm);
        }
        let mut sum = 0.0;
        for (k, &v) in values.iter().enumerate() {
            sum += self.weight(k) * v * v;
        }
        Ok(sum.sqrt())
    }

    /// Writes one node coordinate per line in round-trip precision.
    pub fn write_nodes(&self, w: &mut impl std::io::Write) -> Result<()> {
        for x in &self.nodes {
            writeln!(w, "{x:?}")?;
        }
        Ok(())
    }

    /// Parses a node list produced by [`Mesh::write_nodes`].
    pub fn read_nodes(text: &str, left: BcKind, right: BcKind) -> Result<Self> {
        let nodes = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidMesh(format!("bad node '{l}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Mesh::new(nodes, left, right)
    }
}

/// Nodal values on one level of a mesh pair, one entry per unknown.
#[derive(Clone, Debug)]
pub struct GridFunction {
    level: Level,
    role: Role,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(level: Level, role: Role, values: Vec<f64>) -> Self {
        GridFunction { level, role, values }
    }

    pub fn zeros(level: Level, role: Role, len: usize) -> Self {
        GridFunction { level, role, values: vec![0.0; len] }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `self += c * other`, laying the level tags side by side first.
    pub fn add_scaled(&mut self, c: f64, other: &GridFunction) {
        debug_assert_eq!(self.level, other.level);
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }
}

/// A coarse mesh and its bisection refinement, with index maps between them.
///
/// Coarse node `j` is fine node `2j`; the midpoint of coarse interval `J`
/// (1-based) is fine node `2J - 1`. The restriction from fine to coarse is
/// injection at the shared nodes, so `R_{2h} = R^h_{2h} ∘ R_h` holds by
/// construction.
#[derive(Clone, Debug)]
pub struct MeshPair {
    coarse: Mesh,
    fine: Mesh,
}

impl MeshPair {
    /// Builds the fine mesh by bisecting every coarse interval.
    pub fn from_coarse(coarse: Mesh) -> Result<Self> {
        let (left, right) = coarse.bc();
        let mut fine_nodes = Vec::with_capacity(2 * coarse.n_intervals() + 1);
        for i in 0..coarse.n_intervals() {
            let a = coarse.nodes()[i];
            let b = coarse.nodes()[i + 1];
            fine_nodes.push(a);
            fine_nodes.push(0.5 * (a + b));
        }
        fine_nodes.push(*coarse.nodes().last().unwrap());
        let fine = Mesh::new(fine_nodes, left, right)?;
        Ok(MeshPair { coarse, fine })
    }

    pub fn coarse(&self) -> &Mesh {
        &self.coarse
    }

    pub fn fine(&self) -> &Mesh {
        &self.fine
    }

    pub fn mesh(&self, level: Level) -> &Mesh {
        match level {
            Level::Coarse => &self.coarse,
            Level::Fine => &self.fine,
        }
    }

    pub fn fine_node_of_coarse(&self, j: usize) -> usize {
        2 * j
    }

    /// Fine node index of the midpoint of coarse interval `j` (1-based).
    pub fn midpoint_node(&self, j: usize) -> usize {
        2 * j - 1
    }

    /// Number of fine nodes not shared with the coarse mesh.
    pub fn n_midpoints(&self) -> usize {
        self.coarse.n_intervals()
    }

    /// Norm on the requested level, checking the function's tag.
    pub fn l2_norm(&self, v: &GridFunction) -> Result<f64> {
        self.mesh(v.level()).l2_norm(v.values())
    }
}

/// Builds a uniform pair from the fine unknown count.
///
/// The fine interval count must be even so that taking every second node
/// yields the coarse parent: `n + 1` intervals for Dirichlet/Dirichlet ends
/// (interior unknowns), `n - 1` for Neumann/Neumann (all nodes unknown), and
/// `n` for the mixed cases.
pub fn build_uniform_pair(
    domain: (f64, f64),
    n_unknowns_fine: usize,
    left: BcKind,
    right: BcKind,
) -> Result<MeshPair> {
    let mut intervals = n_unknowns_fine + 1;
    if left == BcKind::Neumann {
        intervals -= 1;
    }
    if right == BcKind::Neumann {
        intervals -= 1;
    }
    if intervals % 2 != 0 || intervals < 2 {
        return Err(Error::InvalidMesh(format!(
            "{n_unknowns_fine} unknowns give {intervals} fine intervals; an even count \
             is required for the coarse parent"
        )));
    }
    let coarse = Mesh::uniform(domain.0, domain.1, intervals / 2, left, right)?;
    MeshPair::from_coarse(coarse)
}

/// Injection of a fine grid function onto the coarse mesh.
pub fn restrict(pair: &MeshPair, v: &GridFunction) -> Result<GridFunction> {
    if v.level() != Level::Fine {
        return Err(Error::LevelMismatch { expected: Level::Fine, found: v.level() });
    }
    if v.len() != pair.fine().n_unknowns() {
        return Err(Error::LengthMismatch { expected: pair.fine().n_unknowns(), found: v.len() });
    }
    let coarse = pair.coarse();
    let fine = pair.fine();
    let values = (0..coarse.n_unknowns())
        .map(|k| {
            let fi = pair.fine_node_of_coarse(coarse.node_of_unknown(k));
            v.values()[fi - fine.first_unknown()]
        })
        .collect();
    Ok(GridFunction::new(Level::Coarse, v.role(), values))
}

/// Per-interval adaptation marks, indexed by the fine midpoint node.
#[derive(Clone, Debug, Default)]
pub struct Marks {
    /// Fine node indices of marked midpoints.
    pub nodes: Vec<usize>,
}

impl Marks {
    pub fn none() -> Self {
        Marks { nodes: Vec::new() }
    }

    /// Translates fine midpoint nodes to 0-based coarse interval indices.
    fn to_intervals(&self, pair: &MeshPair) -> Result<Vec<bool>> {
        let mut flags = vec![false; pair.coarse().n_intervals()];
        for &node in &self.nodes {
            if node % 2 == 0 || node >= pair.fine().n_nodes() {
                return Err(Error::NonMidpointMark { node });
            }
            flags[(node - 1) / 2] = true;
        }
        Ok(flags)
    }
}

const EQUIDISTANT_RTOL: f64 = 1e-12;

fn equidistant(h1: f64, h2: f64) -> bool {
    (h1 - h2).abs() <= EQUIDISTANT_RTOL * h1.max(h2)
}

/// Refines and coarsens the coarse mesh by midpoint marks, smooths it to the
/// ratio bound `0.5 <= h_i/h_{i-1} <= 2`, and rebuilds the fine mesh by
/// bisection. Boundary nodes never move; a shared node is removed only when
/// both flanking intervals are equidistant, both midpoints carry coarsen
/// marks, neither interval touches the boundary, and the merged interval
/// does not exceed `max_interval` (pass infinity for unrestricted merges).
pub fn adapt_coarse_mesh(
    pair: &MeshPair,
    refine: &Marks,
    coarsen: &Marks,
    max_interval: f64,
) -> Result<MeshPair> {
    let refine = refine.to_intervals(pair)?;
    let coarsen = coarsen.to_intervals(pair)?;
    let old = pair.coarse();
    let x = old.nodes();
    let n_int = old.n_intervals();

    let mut keep = vec![true; x.len()];
    let mut j = 0;
    while j + 1 < n_int {
        let h1 = x[j + 1] - x[j];
        let h2 = x[j + 2] - x[j + 1];
        // boundary-adjacent intervals are exempt from coarsening so the
        // Neumann ghost elimination keeps its local uniformity
        let interior = j != 0 && j + 1 != n_int - 1;
        let within_cap = h1 + h2 <= max_interval * (1.0 + EQUIDISTANT_RTOL);
        if coarsen[j] && coarsen[j + 1] && interior && within_cap && equidistant(h1, h2) && !refine[j] && !refine[j + 1] {
            keep[j + 1] = false;
            j += 2;
        } else {
            j += 1;
        }
    }

    let mut nodes = Vec::with_capacity(x.len() + refine.iter().filter(|&&r| r).count());
    for i in 0..x.len() {
        if keep[i] {
            nodes.push(x[i]);
        }
        if i < n_int && refine[i] {
            nodes.push(0.5 * (x[i] + x[i + 1]));
        }
    }

    let pre_smooth = nodes.len();
    smooth(&mut nodes);
    if std::env::var_os("MOLGEC_TRACE").is_some() && nodes.len() > 4 * pre_smooth {
        eprintln!(
            "smoothing blowup: {} -> {} nodes; input mesh {:?} refine {:?} coarsen {:?}",
            pre_smooth,
            nodes.len(),
            x,
            refine,
            coarsen
        );
    }

    let (left, right) = old.bc();
    let coarse = Mesh::new(nodes, left, right)?;
    let new_pair = MeshPair::from_coarse(coarse)?;
    debug_assert!(ratio_bound_holds(new_pair.coarse()));
    debug_assert_eq!(new_pair.fine().n_nodes(), 2 * new_pair.coarse().n_intervals() + 1);
    Ok(new_pair)
}

/// Splits any interval violating the 0.5–2 ratio bound, sweeping alternately
/// left-to-right and right-to-left until a fixed point. Terminates because
/// every action bisects an interval.
fn smooth(nodes: &mut Vec<f64>) {
    let mut forward = true;
    loop {
        let mut split_at = Vec::new();
        let h = |nodes: &[f64], i: usize| nodes[i + 1] - nodes[i];
        let m = nodes.len() - 1;
        if forward {
            for i in 1..m {
                let r = h(nodes, i) / h(nodes, i - 1);
                if r > 2.0 + EQUIDISTANT_RTOL {
                    split_at.push(i);
                } else if r < 0.5 - EQUIDISTANT_RTOL {
                    split_at.push(i - 1);
                }
            }
        } else {
            for i in (1..m).rev() {
                let r = h(nodes, i) / h(nodes, i - 1);
                if r > 2.0 + EQUIDISTANT_RTOL {
                    split_at.push(i);
                } else if r < 0.5 - EQUIDISTANT_RTOL {
                    split_at.push(i - 1);
                }
            }
        }
        if split_at.is_empty() {
            return;
        }
        split_at.sort_unstable();
        split_at.dedup();
        for &i in split_at.iter().rev() {
            nodes.insert(i + 1, 0.5 * (nodes[i] + nodes[i + 1]));
        }
        forward = !forward;
    }
}

pub(crate) fn ratio_bound_holds(mesh: &Mesh) -> bool {
    (2..=mesh.n_intervals()).all(|i| {
        let r = mesh.spacing(i) / mesh.spacing(i - 1);
        (0.5 - 1e-9..=2.0 + 1e-9).contains(&r)
    })
}

/// Derivatives at every node from a degree-4 polynomial through the five
/// nearest nodes (one-sided near the boundaries). Exact on quartics.
fn quartic_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 2);
    if n < 5 {
        // small meshes: fit through all nodes instead
        return lagrange_slopes_all(x, y);
    }
    let mut d = vec![0.0; n];
    for i in 0..n {
        let j0 = i.saturating_sub(2).min(n - 5);
        d[i] = lagrange_derivative(&x[j0..j0 + 5], &y[j0..j0 + 5], x[i]);
    }
    d
}

fn lagrange_slopes_all(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().map(|&xi| lagrange_derivative(x, y, xi)).collect()
}

/// Derivative of the Lagrange interpolant through `(z, y)` at `t`, where `t`
/// coincides with one of the nodes.
fn lagrange_derivative(z: &[f64], y: &[f64], t: f64) -> f64 {
    let k = z.iter().position(|&zj| zj == t);
    let n = z.len();
    let mut total = 0.0;
    for j in 0..n {
        let lp = match k {
            Some(k) if j == k => {
                let mut s = 0.0;
                for m in 0..n {
                    if m != j {
                        s += 1.0 / (z[j] - z[m]);
                    }
                }
                s
            }
            _ => {
                let mut num = 1.0;
                let mut den = 1.0;
                for m in 0..n {
                    if m != j {
                        den *= z[j] - z[m];
                        if Some(m) != k {
                            num *= t - z[m];
                        }
                    }
                }
                match k {
                    Some(_) => num / den,
                    None => {
                        // general point: differentiate the product
                        let mut s = 0.0;
                        for e in 0..n {
                            if e == j {
                                continue;
                            }
                            let mut p = 1.0;
                            for m in 0..n {
                                if m != j && m != e {
                                    p *= t - z[m];
                                }
                            }
                            s += p;
                        }
                        s / den
                    }
                }
            }
        };
        total += y[j] * lp;
    }
    total
}

/// Moves a grid function from one mesh to another by piecewise cubic Hermite
/// interpolation with nodal slopes from fourth-order finite differences.
///
/// `boundary` supplies the nodal values at ends where the source mesh carries
/// no unknown (Dirichlet); pass zeros for error-type fields.
pub fn transfer_solution(
    v: &GridFunction,
    old: &Mesh,
    new: &Mesh,
    boundary: (f64, f64),
) -> Result<GridFunction> {
    if v.len() != old.n_unknowns() {
        return Err(Error::LengthMismatch { expected: old.n_unknowns(), found: v.len() });
    }
    let (lo, hi) = old.domain();
    let (nlo, nhi) = new.domain();
    if nlo < lo - 1e-12 || nhi > hi + 1e-12 {
        return Err(Error::OutOfDomain { x: if nlo < lo { nlo } else { nhi }, lo, hi });
    }

    let x = old.nodes();
    let mut full = vec![0.0; x.len()];
    full[old.first_unknown()..=old.last_unknown()].copy_from_slice(v.values());
    if old.first_unknown() == 1 {
        full[0] = boundary.0;
    }
    if old.last_unknown() == x.len() - 2 {
        full[x.len() - 1] = boundary.1;
    }
    let slopes = quartic_slopes(x, &full);

    let mut out = Vec::with_capacity(new.n_unknowns());
    let mut j = 0usize;
    for k in 0..new.n_unknowns() {
        let xt = new.nodes()[new.node_of_unknown(k)];
        while j + 2 < x.len() && x[j + 1] <= xt {
            j += 1;
        }
        let h = x[j + 1] - x[j];
        let th = (xt - x[j]) / h;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        out.push(h00 * full[j] + h * h10 * slopes[j] + h01 * full[j + 1] + h * h11 * slopes[j + 1]);
    }
    Ok(GridFunction::new(v.level(), v.role(), out))
}
