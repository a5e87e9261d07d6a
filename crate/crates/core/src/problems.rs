//! Ready-made demonstration problems driving the multi-mesh machinery.

pub mod biharmonic;
pub mod cahn_hilliard;
pub mod cavity;
pub mod dendrite;

use crate::adapt::Marks;
use crate::error::Result;
use crate::mesh::Mesh;
use crate::traverse::{dual_traverse, FinerSide};

/// The common refinement of two meshes over one macro mesh, as a real mesh.
///
/// The result starts from a clone of `a` and is bisected until every leaf of
/// `b` is matched, so both variables of a coupled problem could live on it.
/// Used to compare a multi-mesh discretization against its single-mesh
/// equivalent.
pub fn union_of(a: &Mesh, b: &Mesh) -> Result<Mesh> {
    let mut u = a.clone();
    loop {
        let mut marks = Vec::new();
        dual_traverse(&u, b, |pair| {
            if pair.finer == FinerSide::B {
                marks.push(pair.large.id);
            }
        })?;
        marks.sort_unstable();
        marks.dedup();
        if marks.is_empty() {
            return Ok(u);
        }
        for id in marks {
            if u.is_leaf(id) {
                u.bisect(id)?;
            }
        }
    }
}

/// Drops refinement marks on elements already at the depth limit.
pub fn cap_refinement(mesh: &Mesh, marks: &mut Marks, max_level: u8) -> Result<()> {
    let mut kept = Vec::with_capacity(marks.refine.len());
    for &id in &marks.refine {
        if mesh.element_info(id)?.level < max_level {
            kept.push(id);
        }
    }
    marks.refine = kept;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MacroMesh;
    use std::sync::Arc;

    #[test]
    fn union_contains_both_refinements() {
        let base = Mesh::new(Arc::new(MacroMesh::unit_square_cross()));
        let mut a = base.clone();
        let mut b = base.clone();
        a.refine_all().unwrap();
        let leaves = b.leaf_elements();
        b.bisect(leaves[0].id).unwrap();
        let leaves = b.leaf_elements();
        let deep = leaves.iter().max_by_key(|l| l.sequence.len()).unwrap().id;
        b.bisect(deep).unwrap();

        let u = union_of(&a, &b).unwrap();
        // every leaf of the union must be Equal or finer against both inputs
        for other in [&a, &b] {
            dual_traverse(&u, other, |p| {
                assert_ne!(p.finer, FinerSide::B, "union is missing a refinement");
            })
            .unwrap();
        }
        assert!((u.total_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cap_refinement_filters_deep_elements() {
        let mut mesh = Mesh::new(Arc::new(MacroMesh::unit_square_cross()));
        mesh.refine_all().unwrap();
        mesh.refine_all().unwrap();
        let leaves = mesh.leaf_elements();
        let mut marks = Marks { refine: leaves.iter().map(|l| l.id).collect(), coarsen: vec![] };
        cap_refinement(&mesh, &mut marks, 2).unwrap();
        assert!(marks.refine.is_empty());
        let mut marks = Marks { refine: leaves.iter().map(|l| l.id).collect(), coarsen: vec![] };
        cap_refinement(&mesh, &mut marks, 3).unwrap();
        assert_eq!(marks.refine.len(), leaves.len());
    }
}
