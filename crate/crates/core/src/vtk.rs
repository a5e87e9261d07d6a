//! Legacy ASCII VTK output of finite element fields.
//!
//! Each leaf element is subdivided into a parameter lattice matching the
//! highest polynomial degree among the written fields, so quadratic and
//! higher functions show their in-element variation instead of being
//! flattened to corner values. Points are written per element without
//! sharing, which keeps the writer independent of DOF connectivity.

use std::fmt::Write as _;
use std::path::Path;

use crate::assemble::FeFunction;
use crate::error::Result;
use crate::mesh::{Mesh, TraverseSpec};

/// Writes one mesh with any number of scalar fields living on it.
pub fn write_vtk(path: &Path, mesh: &Mesh, fields: &[(&str, &FeFunction)]) -> Result<()> {
    for (_, f) in fields {
        f.space.check_current(mesh)?;
    }
    let dim = mesh.dim();
    let sub = fields.iter().map(|(_, f)| f.space.degree()).max().unwrap_or(1) as usize;

    let mut leaves = Vec::new();
    mesh.traverse(TraverseSpec::Leaves, |e| leaves.push(e.clone()));

    // lattice points in barycentric coordinates, shared by all elements
    let mut lattice: Vec<[f64; 3]> = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    if dim == 1 {
        for i in 0..=sub {
            let t = i as f64 / sub as f64;
            lattice.push([1.0 - t, t, 0.0]);
        }
        for i in 0..sub {
            cells.push(vec![i, i + 1]);
        }
    } else {
        // rows j = 0..=sub from the vertex-2 side; index of (i, j)
        let idx = |i: usize, j: usize| -> usize {
            // number of points in rows 0..j, each row j has sub+1-j entries
            (0..j).map(|r| sub + 1 - r).sum::<usize>() + i
        };
        for j in 0..=sub {
            for i in 0..=(sub - j) {
                let l0 = (sub - j - i) as f64 / sub as f64;
                let l1 = i as f64 / sub as f64;
                let l2 = j as f64 / sub as f64;
                lattice.push([l0, l1, l2]);
            }
        }
        for j in 0..sub {
            for i in 0..(sub - j) {
                cells.push(vec![idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
                if i + 1 <= sub - j - 1 {
                    cells.push(vec![idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                }
            }
        }
    }

    let n_points = leaves.len() * lattice.len();
    let n_cells = leaves.len() * cells.len();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("multimesh field output\n");
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {n_points} double");
    for info in &leaves {
        for l in &lattice {
            let x = crate::basis::lambda_to_point(dim, &info.coords, *l);
            let _ = writeln!(out, "{} {} 0", fmt(x[0]), fmt(x[1]));
        }
    }
    let entry_len: usize = cells.iter().map(|c| c.len() + 1).sum();
    let _ = writeln!(out, "CELLS {n_cells} {}", leaves.len() * entry_len);
    for (e, _) in leaves.iter().enumerate() {
        let base = e * lattice.len();
        for c in &cells {
            let _ = write!(out, "{}", c.len());
            for &v in c {
                let _ = write!(out, " {}", base + v);
            }
            out.push('\n');
        }
    }
    let _ = writeln!(out, "CELL_TYPES {n_cells}");
    let ct = if dim == 1 { 3 } else { 5 };
    for _ in 0..n_cells {
        let _ = writeln!(out, "{ct}");
    }
    let _ = writeln!(out, "POINT_DATA {n_points}");
    for (name, f) in fields {
        let _ = writeln!(out, "SCALARS {name} double 1");
        out.push_str("LOOKUP_TABLE default\n");
        for info in &leaves {
            for l in &lattice {
                let v = f.value_on(info, *l)?;
                let _ = writeln!(out, "{}", fmt(v));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Full-precision float formatting that never prints NaN-breaking output.
fn fmt(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.12e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::FESpace;
    use crate::mesh::MacroMesh;
    use std::sync::Arc;

    #[test]
    fn linear_field_writes_consistent_file() {
        let dir = std::env::temp_dir().join("mm_vtk_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut mesh = Mesh::new(Arc::new(MacroMesh::unit_square_cross()));
        mesh.refine_all().unwrap();
        let space = FESpace::new(&mesh, 1).unwrap();
        let f = FeFunction::from_fn(Arc::clone(&space), |x| x[0]);
        let path = dir.join("lin.vtk");
        write_vtk(&path, &mesh, &[("u", &f)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        // 8 leaves, 3 lattice points each
        assert!(text.contains("POINTS 24 double"));
        assert!(text.contains("CELLS 8 32"));
        assert!(text.contains("SCALARS u double 1"));
        let cell_type_count = text.lines().filter(|l| *l == "5").count();
        assert_eq!(cell_type_count, 8);
    }

    #[test]
    fn quadratic_field_gets_subdivided() {
        let dir = std::env::temp_dir().join("mm_vtk_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mesh = Mesh::new(Arc::new(MacroMesh::unit_square_cross()));
        let space = FESpace::new(&mesh, 2).unwrap();
        let f = FeFunction::from_fn(Arc::clone(&space), |x| x[0] * x[0]);
        let path = dir.join("quad.vtk");
        write_vtk(&path, &mesh, &[("u", &f)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // 4 macro leaves, 6 lattice points and 4 sub-triangles each
        assert!(text.contains("POINTS 24 double"));
        assert!(text.contains("CELL_TYPES 16"));
    }

    #[test]
    fn one_dim_uses_line_cells() {
        let dir = std::env::temp_dir().join("mm_vtk_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mesh = Mesh::new(Arc::new(MacroMesh::interval(0.0, 1.0, 4)));
        let space = FESpace::new(&mesh, 1).unwrap();
        let f = FeFunction::from_fn(Arc::clone(&space), |x| x[0]);
        let path = dir.join("line.vtk");
        write_vtk(&path, &mesh, &[("u", &f)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("CELL_TYPES 4"));
        assert!(text.lines().filter(|l| *l == "3").count() >= 4);
    }
}
