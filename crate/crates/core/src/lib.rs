//! Adaptive finite elements where each unknown of a coupled system lives on its
//! own simplicial mesh. All meshes of a problem share one macro mesh and are
//! refined independently by newest-vertex bisection; coupling terms between two
//! meshes are assembled by traversing the virtual union of their refinement
//! trees and mapping element matrices with basis transformation matrices.
//!
//! Modules follow the pipeline: [`mesh`] and [`basis`] provide geometry and
//! reference elements, [`traverse`] walks pairs of trees, [`transform`] builds
//! and caches the coarse-to-fine basis maps, [`assemble`] produces block
//! systems, [`linalg`] solves them, [`adapt`] closes the loop with residual
//! estimation and marking, and [`problems`] wires complete solvers for the
//! demo applications driven by [`driver`].

pub mod adapt;
pub mod assemble;
pub mod basis;
pub mod config;
pub mod driver;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod problems;
pub mod report;
pub mod transform;
pub mod traverse;
pub mod vtk;

pub use error::{Error, Result};
pub use mesh::{ElemId, ElementInfo, MacroMesh, Mesh, TraverseSpec};
pub use traverse::{ElementPair, FinerSide, RefinementSequence};
