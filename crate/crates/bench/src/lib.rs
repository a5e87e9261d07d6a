//! Shared fixtures for the criterion benchmarks: a two-mesh setup with the
//! scale separation typical of the demo problems, where one field is
//! sharply refined around a ring and the other stays coarse.

use std::sync::Arc;

use multimesh::assemble::{FESpace, FeFunction};
use multimesh::mesh::{MacroMesh, Mesh, TraverseSpec};
use multimesh::problems::union_of;
use multimesh::Result;

/// Refines mesh leaves whose centroid lies within `band` of the circle of
/// radius `r` around the domain centre, `rounds` times.
pub fn refine_ring(mesh: &mut Mesh, r: f64, band: f64, rounds: usize) -> Result<()> {
    for _ in 0..rounds {
        let mut marks = Vec::new();
        mesh.traverse(TraverseSpec::Leaves, |info| {
            let cx = (info.coords[0][0] + info.coords[1][0] + info.coords[2][0]) / 3.0;
            let cy = (info.coords[0][1] + info.coords[1][1] + info.coords[2][1]) / 3.0;
            let d = ((cx - 0.5).powi(2) + (cy - 0.5).powi(2)).sqrt();
            if (d - r).abs() < band {
                marks.push(info.id);
            }
        });
        for id in marks {
            if mesh.is_leaf(id) {
                mesh.bisect(id)?;
            }
        }
    }
    Ok(())
}

/// A fine/coarse mesh pair over the unit square plus their union, with P1
/// spaces and an interpolated ring profile on the fine side.
pub struct TwoMeshFixture {
    pub fine: Mesh,
    pub coarse: Mesh,
    pub union: Mesh,
    pub space_fine: Arc<FESpace>,
    pub space_coarse: Arc<FESpace>,
    pub space_union: Arc<FESpace>,
    pub profile: FeFunction,
}

impl TwoMeshFixture {
    pub fn build(base_levels: usize, ring_rounds: usize) -> Result<Self> {
        let mut fine = Mesh::new(Arc::new(MacroMesh::unit_square_cross()));
        for _ in 0..base_levels {
            fine.refine_all()?;
        }
        let coarse = fine.clone();
        refine_ring(&mut fine, 0.3, 0.05, ring_rounds)?;
        let union = union_of(&fine, &coarse)?;
        let space_fine = FESpace::new(&fine, 1)?;
        let space_coarse = FESpace::new(&coarse, 1)?;
        let space_union = FESpace::new(&union, 1)?;
        let profile = FeFunction::from_fn(Arc::clone(&space_fine), |x| {
            let d = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
            ((0.3 - d) * 40.0).tanh()
        });
        Ok(Self { fine, coarse, union, space_fine, space_coarse, space_union, profile })
    }
}
