//! Error types shared across the crate.

use std::fmt;

/// Errors from mesh handling, linear algebra, time stepping and the control loops.
#[derive(Debug)]
pub enum Error {
    /// Mesh construction or query violated a structural requirement.
    InvalidMesh(String),
    /// A grid function was used on the wrong mesh level.
    LevelMismatch { expected: super::mesh::Level, found: super::mesh::Level },
    /// Vector length does not match the unknown count of the mesh.
    LengthMismatch { expected: usize, found: usize },
    /// Norm requested on a mesh without weighted nodes.
    EmptyNorm,
    /// Interpolation target lies outside the source mesh.
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    /// Adaptation mark placed on a node that is not a fine-mesh midpoint.
    NonMidpointMark { node: usize },
    /// Neumann boundary handling requires the first two spacings to agree.
    BoundarySpacing { end: &'static str, h1: f64, h2: f64 },
    /// Zero pivot in the tridiagonal factorization.
    SingularSystem { pivot: usize },
    /// Step size fell below the stagnation floor while rejecting.
    StepStagnation { t: f64, tau: f64 },
    /// Accepted-step count exceeded the runaway guard.
    RunawayStepCount { cap: usize },
    /// Per-step mesh adaptation failed to settle.
    AdaptationStall { t: f64, redos: usize },
    /// Unknown benchmark or problem name.
    UnknownProblem(String),
    /// Config file could not be parsed.
    ConfigParse { line: usize, msg: String },
    /// CSV structure does not match the expected schema.
    ColumnMismatch(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidMesh(msg) => write!(f, "invalid mesh: {msg}"),
            Error::LevelMismatch { expected, found } => {
                write!(f, "grid function on {found:?} level, expected {expected:?}")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "vector length {found} does not match {expected} unknowns")
            }
            Error::EmptyNorm => write!(f, "discrete norm needs at least one weighted node"),
            Error::OutOfDomain { x, lo, hi } => {
                write!(f, "node {x} outside source domain [{lo}, {hi}]")
            }
            Error::NonMidpointMark { node } => {
                write!(f, "adaptation mark on fine node {node}, which is not a midpoint")
            }
            Error::BoundarySpacing { end, h1, h2 } => write!(
                f,
                "Neumann ghost elimination at {end} end needs equal first spacings, got {h1} and {h2}"
            ),
            Error::SingularSystem { pivot } => {
                write!(f, "singular tridiagonal system: zero pivot at row {pivot}")
            }
            Error::StepStagnation { t, tau } => {
                write!(f, "step size stagnated at t = {t} (tau = {tau})")
            }
            Error::RunawayStepCount { cap } => {
                write!(f, "step count exceeded the runaway guard of {cap}")
            }
            Error::AdaptationStall { t, redos } => {
                write!(f, "mesh adaptation did not settle at t = {t} after {redos} redos")
            }
            Error::UnknownProblem(name) => write!(f, "unknown problem '{name}'"),
            Error::ConfigParse { line, msg } => write!(f, "config line {line}: {msg}"),
            Error::ColumnMismatch(msg) => write!(f, "csv structure mismatch: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
