//! Crate-wide error type. One enum keeps the solver pipeline signatures simple.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("macro mesh format error at line {line}: {msg}")]
    MeshFormat { line: usize, msg: String },
    #[error("macro mesh validation: {0}")]
    MeshInvalid(String),
    #[error("element {0:?} is degenerate (volume {1:e})")]
    DegenerateElement(usize, f64),
    #[error("refinement edge marking does not terminate (cycle through macro element {0})")]
    IncompatibleRefinementEdges(usize),
    #[error("refinement depth cap of 64 levels exceeded")]
    DepthCap,
    #[error("refinement sequence overflow: more than 64 steps")]
    SequenceOverflow,
    #[error("element {0:?} not found or not a leaf")]
    NotALeaf(crate::mesh::ElemId),
    #[error("meshes do not share a macro mesh")]
    MacroMismatch,
    #[error("finite element space is out of date with its mesh (mesh changed since build)")]
    StaleSpace,
    #[error("unsupported polynomial degree {0} (supported: 1..=4)")]
    UnsupportedDegree(u32),
    #[error("unsupported quadrature order {0} (supported: 1..=12)")]
    UnsupportedQuadrature(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("solver breakdown after {iterations} iterations (residual {residual:e})")]
    SolverBreakdown { iterations: usize, residual: f64 },
    #[error("solver reached max iterations {iterations} (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("matrix diagonal entry {0} is zero; diagonal preconditioner unavailable")]
    SingularDiagonal(usize),
    #[error("direct solver refused: {0} unknowns exceeds the dense-LU cap of {1}")]
    DirectTooLarge(usize, usize),
    #[error("singular matrix in direct solve (pivot {0})")]
    SingularMatrix(usize),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing config key `{0}`")]
    MissingKey(String),
    #[error("no zero crossing found on the probe axis")]
    NoCrossing,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
