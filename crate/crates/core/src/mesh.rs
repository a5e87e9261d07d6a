//! Simplicial meshes (intervals in 1D, triangles in 2D) refined by
//! newest-vertex bisection.
//!
//! Topology and geometry are stored only for the macro elements; below that
//! each macro element carries a plain binary tree, and element data (vertex
//! ids, coordinates, volumes, boundary markers) is recomputed on the way down
//! during traversal. The convention is fixed once for the whole crate: an
//! element's refinement edge is the edge between its local vertices 0 and 1,
//! bisection inserts the midpoint `m` of that edge, and the children are
//! `L = (v0, v2, m)` and `R = (v1, v2, m)` (in 1D `L = (v0, m)`,
//! `R = (m, v1)`). Every child again has its refinement edge at locals (0,1),
//! so one level of the hierarchy looks like any other.
//!
//! Refining an element whose edge neighbour bisects a different edge first
//! refines that neighbour (recursively); each actual bisection splits either a
//! boundary element alone or an edge-sharing pair at once, so the leaf level
//! never holds a hanging node.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::traverse::{RefinementSequence, Side};

/// Hard refinement depth limit; paths are stored in 64-bit sequences.
pub const MAX_DEPTH: u8 = 64;

const NONE: u32 = u32::MAX;
const FREED: u32 = u32::MAX - 1;

/// Sentinel for the unused third vertex slot of 1D elements.
pub const NO_VERTEX: u32 = u32::MAX;

/// A facet of a macro element: either the neighbouring element or a boundary
/// marker (nonzero by construction).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroFacet {
    Neighbor(u32),
    Boundary(i32),
}

/// Macro element, normalized so the refinement edge lies between local
/// vertices 0 and 1. Facet `i` is opposite vertex `i`.
#[derive(Debug, Clone)]
pub struct MacroElement {
    pub vertices: [u32; 3],
    pub facets: [MacroFacet; 3],
}

/// The coarsest triangulation. Shared (via `Arc`) by every mesh of a problem.
#[derive(Debug, Clone)]
pub struct MacroMesh {
    pub dim: u8,
    pub vertices: Vec<[f64; 2]>,
    pub elements: Vec<MacroElement>,
}

/// Identifies a live element: macro tree index plus node index in that tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElemId {
    pub macro_idx: u32,
    pub node: u32,
}

/// Everything a visitor learns about one element during traversal.
#[derive(Debug, Clone)]
pub struct ElementInfo {
    pub id: ElemId,
    pub sequence: RefinementSequence,
    pub level: u8,
    /// Global vertex ids; slot 2 is `NO_VERTEX` in 1D.
    pub vertices: [u32; 3],
    /// Vertex coordinates; only the x component is meaningful in 1D.
    pub coords: [[f64; 2]; 3],
    /// Unsigned measure (length / area), exactly halved per bisection.
    pub volume: f64,
    /// Boundary marker per facet, 0 on interior facets. Facet `i` is opposite
    /// vertex `i`; in 1D facet 0 sits at vertex 1 and facet 1 at vertex 0.
    pub markers: [i32; 3],
}

impl ElementInfo {
    /// Longest edge (2D) or element length (1D).
    pub fn diameter(&self, dim: u8) -> f64 {
        if dim == 1 {
            (self.coords[1][0] - self.coords[0][0]).abs()
        } else {
            let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            d(self.coords[0], self.coords[1])
                .max(d(self.coords[1], self.coords[2]))
                .max(d(self.coords[0], self.coords[2]))
        }
    }

    /// Sorted global vertex pair of facet `f` (in 1D a doubled single vertex).
    pub fn facet_key(&self, dim: u8, f: usize) -> (u32, u32) {
        if dim == 1 {
            let v = self.vertices[1 - f];
            (v, v)
        } else {
            let (a, b) = match f {
                0 => (self.vertices[1], self.vertices[2]),
                1 => (self.vertices[0], self.vertices[2]),
                _ => (self.vertices[0], self.vertices[1]),
            };
            (a.min(b), a.max(b))
        }
    }

    /// Local vertex indices spanning facet `f` (2D).
    pub fn facet_locals(f: usize) -> (usize, usize) {
        match f {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

impl MacroMesh {
    /// Parses the plain-text macro format: sections DIM, VERTICES, ELEMENTS,
    /// NEIGHBOURS, BOUNDARY and (2D) REFINEMENT_EDGES in that order, one
    /// record per line, `#` comments allowed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::MeshFormat {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };

        let (ln, l) = next("DIM")?;
        let dim: u8 = match l.strip_prefix("DIM") {
            Some(rest) => rest.trim().parse().map_err(|_| Error::MeshFormat {
                line: ln,
                msg: "DIM must be 1 or 2".into(),
            })?,
            None => {
                return Err(Error::MeshFormat {
                    line: ln,
                    msg: format!("expected DIM, found `{l}`"),
                })
            }
        };
        if dim != 1 && dim != 2 {
            return Err(Error::MeshFormat {
                line: ln,
                msg: format!("DIM {dim} unsupported (1 or 2)"),
            });
        }

        let (ln, l) = next("VERTICES")?;
        let nv: usize = section_count(ln, l, "VERTICES")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = next("vertex record")?;
            let parts: Vec<f64> = parse_floats(ln, l)?;
            if parts.len() != dim as usize {
                return Err(Error::MeshFormat {
                    line: ln,
                    msg: format!("expected {dim} coordinates, found {}", parts.len()),
                });
            }
            let mut c = [0.0; 2];
            c[..dim as usize].copy_from_slice(&parts);
            vertices.push(c);
        }

        let (ln, l) = next("ELEMENTS")?;
        let ne: usize = section_count(ln, l, "ELEMENTS")?;
        let nvert = dim as usize + 1;
        let mut elem_verts = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = next("element record")?;
            let ids = parse_ints::<u32>(ln, l)?;
            if ids.len() != nvert {
                return Err(Error::MeshFormat {
                    line: ln,
                    msg: format!("expected {nvert} vertex ids, found {}", ids.len()),
                });
            }
            let mut v = [NO_VERTEX; 3];
            v[..nvert].copy_from_slice(&ids);
            elem_verts.push(v);
        }

        let (ln, l) = next("NEIGHBOURS")?;
        expect_section(ln, l, "NEIGHBOURS")?;
        let mut neighbours = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = next("neighbour record")?;
            let ids = parse_ints::<i64>(ln, l)?;
            if ids.len() != nvert {
                return Err(Error::MeshFormat {
                    line: ln,
                    msg: format!("expected {nvert} neighbour entries, found {}", ids.len()),
                });
            }
            neighbours.push(ids);
        }

        let (ln, l) = next("BOUNDARY")?;
        expect_section(ln, l, "BOUNDARY")?;
        let mut boundary = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = next("boundary record")?;
            let ids = parse_ints::<i32>(ln, l)?;
            if ids.len() != nvert {
                return Err(Error::MeshFormat {
                    line: ln,
                    msg: format!("expected {nvert} boundary markers, found {}", ids.len()),
                });
            }
            boundary.push(ids);
        }

        let mut ref_edges = vec![2usize; ne];
        if dim == 2 {
            let (ln, l) = next("REFINEMENT_EDGES")?;
            expect_section(ln, l, "REFINEMENT_EDGES")?;
            for e in ref_edges.iter_mut() {
                let (ln, l) = next("refinement edge record")?;
                let ids = parse_ints::<usize>(ln, l)?;
                if ids.len() != 1 || ids[0] > 2 {
                    return Err(Error::MeshFormat {
                        line: ln,
                        msg: "expected one local edge index in 0..=2".into(),
                    });
                }
                *e = ids[0];
            }
        }

        let mut elements = Vec::with_capacity(ne);
        for i in 0..ne {
            let mut facets = [MacroFacet::Boundary(0); 3];
            for f in 0..nvert {
                let nb = neighbours[i][f];
                let marker = boundary[i][f];
                facets[f] = if nb < 0 {
                    if marker == 0 {
                        return Err(Error::MeshInvalid(format!(
                            "element {i} facet {f}: boundary facet needs a nonzero marker"
                        )));
                    }
                    MacroFacet::Boundary(marker)
                } else {
                    if marker != 0 {
                        return Err(Error::MeshInvalid(format!(
                            "element {i} facet {f}: interior facet must have marker 0"
                        )));
                    }
                    MacroFacet::Neighbor(nb as u32)
                };
            }
            let mut el = MacroElement { vertices: elem_verts[i], facets };
            // rotate so the refinement edge becomes the edge opposite vertex 2
            if dim == 2 {
                let s = (ref_edges[i] + 1) % 3;
                if s != 0 {
                    let v = el.vertices;
                    let f = el.facets;
                    for k in 0..3 {
                        el.vertices[k] = v[(k + s) % 3];
                        el.facets[k] = f[(k + s) % 3];
                    }
                }
            }
            elements.push(el);
        }

        let mesh = MacroMesh { dim, vertices, elements };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Structural consistency: index ranges, positive volumes, reciprocal
    /// neighbour links, marker conventions, and (2D) a bounded dry-run showing
    /// that refinement-edge propagation terminates from every element.
    pub fn validate(&self) -> Result<()> {
        let nvert = self.dim as usize + 1;
        if self.elements.is_empty() {
            return Err(Error::MeshInvalid("no elements".into()));
        }
        for (i, el) in self.elements.iter().enumerate() {
            for &v in &el.vertices[..nvert] {
                if v as usize >= self.vertices.len() {
                    return Err(Error::MeshInvalid(format!(
                        "element {i} references vertex {v} out of range"
                    )));
                }
            }
            let vol = self.signed_volume(el);
            if !(vol > 1e-300) {
                return Err(Error::DegenerateElement(i, vol));
            }
            for f in 0..nvert {
                if let MacroFacet::Neighbor(j) = el.facets[f] {
                    let j = j as usize;
                    if j >= self.elements.len() {
                        return Err(Error::MeshInvalid(format!(
                            "element {i} facet {f} references element {j} out of range"
                        )));
                    }
                    let mine = facet_set(el, self.dim, f);
                    let them = &self.elements[j];
                    let found = (0..nvert).any(|g| {
                        them.facets[g] == MacroFacet::Neighbor(i as u32)
                            && facet_set(them, self.dim, g) == mine
                    });
                    if !found {
                        return Err(Error::MeshInvalid(format!(
                            "element {i} facet {f}: neighbour {j} does not point back across the same facet"
                        )));
                    }
                }
            }
        }
        if self.dim == 2 {
            self.check_marking()?;
        }
        Ok(())
    }

    fn signed_volume(&self, el: &MacroElement) -> f64 {
        let v = |i: usize| self.vertices[el.vertices[i] as usize];
        if self.dim == 1 {
            v(1)[0] - v(0)[0]
        } else {
            let (a, b, c) = (v(0), v(1), v(2));
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        }
    }

    /// Follows the chain element -> neighbour across its refinement edge; the
    /// chain must end at a boundary or at a pair sharing its refinement edge.
    fn check_marking(&self) -> Result<()> {
        for start in 0..self.elements.len() {
            let mut chain = vec![start];
            let mut cur = start;
            loop {
                let el = &self.elements[cur];
                let edge = facet_set(el, 2, 2);
                match el.facets[2] {
                    MacroFacet::Boundary(_) => break,
                    MacroFacet::Neighbor(n) => {
                        let n = n as usize;
                        if facet_set(&self.elements[n], 2, 2) == edge {
                            break; // compatible pair
                        }
                        if chain.contains(&n) {
                            return Err(Error::IncompatibleRefinementEdges(n));
                        }
                        chain.push(n);
                        cur = n;
                    }
                }
            }
        }
        Ok(())
    }

    /// Order-independent fingerprint used to decide whether two meshes may be
    /// traversed together.
    pub fn structural_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.dim.hash(&mut h);
        for v in &self.vertices {
            v[0].to_bits().hash(&mut h);
            v[1].to_bits().hash(&mut h);
        }
        for el in &self.elements {
            el.vertices.hash(&mut h);
            for f in &el.facets {
                match f {
                    MacroFacet::Neighbor(n) => (0u8, *n as i64).hash(&mut h),
                    MacroFacet::Boundary(m) => (1u8, *m as i64).hash(&mut h),
                }
            }
        }
        h.finish()
    }

    /// Uniform interval mesh on [a, b] with boundary markers 1 (left) and
    /// 2 (right).
    pub fn interval(a: f64, b: f64, n: usize) -> Self {
        assert!(n >= 1 && b > a);
        let vertices: Vec<[f64; 2]> = (0..=n)
            .map(|i| [a + (b - a) * i as f64 / n as f64, 0.0])
            .collect();
        let elements = (0..n)
            .map(|i| MacroElement {
                vertices: [i as u32, i as u32 + 1, NO_VERTEX],
                facets: [
                    if i + 1 < n { MacroFacet::Neighbor(i as u32 + 1) } else { MacroFacet::Boundary(2) },
                    if i > 0 { MacroFacet::Neighbor(i as u32 - 1) } else { MacroFacet::Boundary(1) },
                    MacroFacet::Boundary(0),
                ],
            })
            .collect();
        MacroMesh { dim: 1, vertices, elements }
    }

    /// Four triangles around the centre of the rectangle, refinement edges on
    /// the outer boundary. Markers: bottom 1, right 2, top 3, left 4. This
    /// marking is compatible and stays uniform under repeated global
    /// refinement.
    pub fn square_cross(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let vertices = vec![
            [x0, y0],
            [x1, y0],
            [x1, y1],
            [x0, y1],
            [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
        ];
        let mut elements = Vec::new();
        for i in 0u32..4 {
            let j = (i + 1) % 4;
            elements.push(MacroElement {
                vertices: [i, j, 4],
                facets: [
                    MacroFacet::Neighbor((i + 1) % 4),
                    MacroFacet::Neighbor((i + 3) % 4),
                    MacroFacet::Boundary(i as i32 + 1),
                ],
            });
        }
        MacroMesh { dim: 2, vertices, elements }
    }

    pub fn unit_square_cross() -> Self {
        Self::square_cross(0.0, 0.0, 1.0, 1.0)
    }
}

fn facet_set(el: &MacroElement, dim: u8, f: usize) -> (u32, u32) {
    if dim == 1 {
        let v = el.vertices[1 - f];
        (v, v)
    } else {
        let (a, b) = match f {
            0 => (el.vertices[1], el.vertices[2]),
            1 => (el.vertices[0], el.vertices[2]),
            _ => (el.vertices[0], el.vertices[1]),
        };
        (a.min(b), a.max(b))
    }
}

fn section_count(line: usize, l: &str, name: &str) -> Result<usize> {
    l.strip_prefix(name)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::MeshFormat {
            line,
            msg: format!("expected `{name} <count>`, found `{l}`"),
        })
}

fn expect_section(line: usize, l: &str, name: &str) -> Result<()> {
    if l == name {
        Ok(())
    } else {
        Err(Error::MeshFormat { line, msg: format!("expected `{name}`, found `{l}`") })
    }
}

fn parse_floats(line: usize, l: &str) -> Result<Vec<f64>> {
    l.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::MeshFormat { line, msg: format!("bad number `{t}`") }))
        .collect()
}

fn parse_ints<T: std::str::FromStr>(line: usize, l: &str) -> Result<Vec<T>> {
    l.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::MeshFormat { line, msg: format!("bad integer `{t}`") }))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct TreeNode {
    parent: u32,
    /// Index of the left child; right child is `children + 1`. `NONE` marks a
    /// leaf, `FREED` a node returned to the free list.
    children: u32,
    level: u8,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<TreeNode>,
    free: Vec<u32>,
}

impl Tree {
    fn root() -> Self {
        Tree { nodes: vec![TreeNode { parent: NONE, children: NONE, level: 0 }], free: Vec::new() }
    }

    fn alloc_pair(&mut self, parent: u32, level: u8) -> u32 {
        let idx = match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = TreeNode { parent, children: NONE, level };
                self.nodes[i as usize + 1] = TreeNode { parent, children: NONE, level };
                i
            }
            None => {
                let i = self.nodes.len() as u32;
                self.nodes.push(TreeNode { parent, children: NONE, level });
                self.nodes.push(TreeNode { parent, children: NONE, level });
                i
            }
        };
        self.nodes[parent as usize].children = idx;
        idx
    }

    fn free_pair(&mut self, parent: u32) {
        let c = self.nodes[parent as usize].children;
        debug_assert!(c != NONE && c != FREED);
        self.nodes[c as usize].children = FREED;
        self.nodes[c as usize + 1].children = FREED;
        self.free.push(c);
        self.nodes[parent as usize].children = NONE;
    }
}

/// Which elements to visit during traversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraverseSpec {
    /// All leaves, in canonical order (macro index, then depth-first with the
    /// left child before the right).
    Leaves,
    /// All elements at exactly this depth.
    Level(u8),
}

type EdgeKey = (u32, u32);

#[derive(Debug, Clone, Copy, Default)]
struct Slot([Option<ElemId>; 2]);

impl Slot {
    fn insert(&mut self, e: ElemId) {
        if self.0[0].is_none() {
            self.0[0] = Some(e);
        } else {
            debug_assert!(self.0[1].is_none(), "more than two leaves on one facet");
            self.0[1] = Some(e);
        }
    }
    fn remove(&mut self, e: ElemId) {
        if self.0[0] == Some(e) {
            self.0[0] = self.0[1];
            self.0[1] = None;
        } else {
            debug_assert_eq!(self.0[1], Some(e));
            self.0[1] = None;
        }
    }
    fn replace(&mut self, old: ElemId, new: ElemId) {
        if self.0[0] == Some(old) {
            self.0[0] = Some(new);
        } else {
            debug_assert_eq!(self.0[1], Some(old));
            self.0[1] = Some(new);
        }
    }
    fn other(&self, me: ElemId) -> Option<ElemId> {
        match self.0 {
            [Some(a), b] if a == me => b,
            [a, Some(b)] if b == me => a,
            _ => None,
        }
    }
    fn is_empty(&self) -> bool {
        self.0[0].is_none() && self.0[1].is_none()
    }
    fn count(&self) -> usize {
        self.0.iter().filter(|s| s.is_some()).count()
    }
}

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

/// One adaptively refined mesh over a shared macro mesh.
#[derive(Debug)]
pub struct Mesh {
    macro_mesh: Arc<MacroMesh>,
    trees: Vec<Tree>,
    vertices: Vec<[f64; 2]>,
    /// Sorted vertex pair of a bisected edge -> midpoint vertex id.
    midpoints: HashMap<(u32, u32), u32>,
    /// Leaf facet incidence: each key holds the one or two leaves sharing it.
    edges: HashMap<EdgeKey, Slot>,
    id: u64,
    version: u64,
    n_leaves: usize,
}

impl Clone for Mesh {
    fn clone(&self) -> Self {
        Mesh {
            macro_mesh: Arc::clone(&self.macro_mesh),
            trees: self.trees.clone(),
            vertices: self.vertices.clone(),
            midpoints: self.midpoints.clone(),
            edges: self.edges.clone(),
            id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
            version: self.version,
            n_leaves: self.n_leaves,
        }
    }
}

impl Mesh {
    pub fn new(macro_mesh: Arc<MacroMesh>) -> Self {
        let trees = macro_mesh.elements.iter().map(|_| Tree::root()).collect::<Vec<_>>();
        let mut edges: HashMap<EdgeKey, Slot> = HashMap::new();
        let nfacets = macro_mesh.dim as usize + 1;
        for (i, el) in macro_mesh.elements.iter().enumerate() {
            for f in 0..nfacets {
                let key = facet_set(el, macro_mesh.dim, f);
                edges.entry(key).or_default().insert(ElemId { macro_idx: i as u32, node: 0 });
            }
        }
        let n_leaves = macro_mesh.elements.len();
        Mesh {
            vertices: macro_mesh.vertices.clone(),
            macro_mesh,
            trees,
            midpoints: HashMap::new(),
            edges,
            id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            n_leaves,
        }
    }

    pub fn macro_mesh(&self) -> &Arc<MacroMesh> {
        &self.macro_mesh
    }
    pub fn dim(&self) -> u8 {
        self.macro_mesh.dim
    }
    /// Unique per mesh object; clones get a fresh id.
    pub fn id(&self) -> u64 {
        self.id
    }
    /// Bumped on every structural change.
    pub fn version(&self) -> u64 {
        self.version
    }
    pub fn leaf_count(&self) -> usize {
        self.n_leaves
    }
    pub fn vertex_coord(&self, v: u32) -> [f64; 2] {
        self.vertices[v as usize]
    }

    /// True if the two meshes refine the same macro mesh (same object, or
    /// structurally identical content).
    pub fn shares_macro_with(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.macro_mesh, &other.macro_mesh)
            || self.macro_mesh.structural_hash() == other.macro_mesh.structural_hash()
    }

    pub fn is_leaf(&self, e: ElemId) -> bool {
        self.trees
            .get(e.macro_idx as usize)
            .and_then(|t| t.nodes.get(e.node as usize))
            .map(|n| n.children == NONE)
            .unwrap_or(false)
    }

    pub(crate) fn node_children(&self, e: ElemId) -> Option<(u32, u32)> {
        let n = &self.trees[e.macro_idx as usize].nodes[e.node as usize];
        if n.children == NONE || n.children == FREED {
            None
        } else {
            Some((n.children, n.children + 1))
        }
    }

    pub(crate) fn midpoint(&self, a: u32, b: u32) -> Option<u32> {
        self.midpoints.get(&edge_key(a, b)).copied()
    }

    pub(crate) fn root_info(&self, macro_idx: u32) -> ElementInfo {
        let el = &self.macro_mesh.elements[macro_idx as usize];
        let mut coords = [[0.0; 2]; 3];
        let n = self.dim() as usize + 1;
        for i in 0..n {
            coords[i] = self.vertices[el.vertices[i] as usize];
        }
        let mut markers = [0i32; 3];
        for i in 0..n {
            if let MacroFacet::Boundary(m) = el.facets[i] {
                markers[i] = m;
            }
        }
        let volume = if self.dim() == 1 {
            (coords[1][0] - coords[0][0]).abs()
        } else {
            let (a, b, c) = (coords[0], coords[1], coords[2]);
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
        };
        ElementInfo {
            id: ElemId { macro_idx, node: 0 },
            sequence: RefinementSequence::empty(),
            level: 0,
            vertices: el.vertices,
            coords,
            volume,
            markers,
        }
    }

    /// Child element data from parent data. `midpoint` is the global id of the
    /// refinement-edge midpoint (`NO_VERTEX` for virtual replay).
    pub(crate) fn child_info(
        dim: u8,
        parent: &ElementInfo,
        side: Side,
        midpoint: u32,
        child_node: u32,
    ) -> ElementInfo {
        let cm = [
            0.5 * (parent.coords[0][0] + parent.coords[1][0]),
            0.5 * (parent.coords[0][1] + parent.coords[1][1]),
        ];
        let (vertices, coords, markers) = if dim == 1 {
            match side {
                Side::Left => (
                    [parent.vertices[0], midpoint, NO_VERTEX],
                    [parent.coords[0], cm, [0.0; 2]],
                    [0, parent.markers[1], 0],
                ),
                Side::Right => (
                    [midpoint, parent.vertices[1], NO_VERTEX],
                    [cm, parent.coords[1], [0.0; 2]],
                    [parent.markers[0], 0, 0],
                ),
            }
        } else {
            match side {
                Side::Left => (
                    [parent.vertices[0], parent.vertices[2], midpoint],
                    [parent.coords[0], parent.coords[2], cm],
                    [0, parent.markers[2], parent.markers[1]],
                ),
                Side::Right => (
                    [parent.vertices[1], parent.vertices[2], midpoint],
                    [parent.coords[1], parent.coords[2], cm],
                    [0, parent.markers[2], parent.markers[0]],
                ),
            }
        };
        ElementInfo {
            id: ElemId { macro_idx: parent.id.macro_idx, node: child_node },
            sequence: parent.sequence.appended(side).expect("depth cap enforced before bisection"),
            level: parent.level + 1,
            vertices,
            coords,
            volume: 0.5 * parent.volume,
            markers,
        }
    }

    /// Recomputes the data of one element by replaying the path from its macro
    /// root.
    pub fn element_info(&self, e: ElemId) -> Result<ElementInfo> {
        let tree = self.trees.get(e.macro_idx as usize).ok_or(Error::NotALeaf(e))?;
        let node = tree.nodes.get(e.node as usize).ok_or(Error::NotALeaf(e))?;
        if node.children == FREED {
            return Err(Error::NotALeaf(e));
        }
        let mut path = Vec::with_capacity(node.level as usize);
        let mut cur = e.node;
        while cur != 0 {
            let parent = tree.nodes[cur as usize].parent;
            let left = tree.nodes[parent as usize].children;
            path.push(if cur == left { Side::Left } else { Side::Right });
            cur = parent;
        }
        let mut info = self.root_info(e.macro_idx);
        for &side in path.iter().rev() {
            let key = edge_key(info.vertices[0], info.vertices[1]);
            let mid = *self.midpoints.get(&key).expect("midpoint of refined edge is registered");
            let (l, r) = (
                self.trees[e.macro_idx as usize].nodes[info.id.node as usize].children,
                self.trees[e.macro_idx as usize].nodes[info.id.node as usize].children + 1,
            );
            let child_node = if side == Side::Left { l } else { r };
            info = Self::child_info(self.dim(), &info, side, mid, child_node);
        }
        Ok(info)
    }

    /// Visits elements in canonical order, recomputing element data on the way
    /// down.
    pub fn traverse<F: FnMut(&ElementInfo)>(&self, spec: TraverseSpec, mut f: F) {
        for macro_idx in 0..self.trees.len() as u32 {
            let root = self.root_info(macro_idx);
            self.walk(&root, spec, &mut f);
        }
    }

    fn walk<F: FnMut(&ElementInfo)>(&self, info: &ElementInfo, spec: TraverseSpec, f: &mut F) {
        let children = self.node_children(info.id);
        match spec {
            TraverseSpec::Leaves => {
                if children.is_none() {
                    f(info);
                    return;
                }
            }
            TraverseSpec::Level(k) => {
                if info.level == k {
                    f(info);
                    return;
                }
                if info.level > k || children.is_none() {
                    return;
                }
            }
        }
        let (l, r) = children.unwrap();
        let key = edge_key(info.vertices[0], info.vertices[1]);
        let mid = *self.midpoints.get(&key).expect("midpoint of refined edge is registered");
        let li = Self::child_info(self.dim(), info, Side::Left, mid, l);
        self.walk(&li, spec, f);
        let ri = Self::child_info(self.dim(), info, Side::Right, mid, r);
        self.walk(&ri, spec, f);
    }

    /// All leaves in canonical order.
    pub fn leaf_elements(&self) -> Vec<ElementInfo> {
        let mut out = Vec::with_capacity(self.n_leaves);
        self.traverse(TraverseSpec::Leaves, |e| out.push(e.clone()));
        out
    }

    /// The leaf across facet `f` of a leaf element, if any.
    pub fn facet_neighbor(&self, info: &ElementInfo, f: usize) -> Option<ElemId> {
        let key = info.facet_key(self.dim(), f);
        self.edges.get(&key).and_then(|s| s.other(info.id))
    }

    /// Bisects a leaf. In 2D, first refines edge neighbours as needed so that
    /// every actual split is conforming; the marked element ends up bisected
    /// exactly once. Errors if the depth cap would be exceeded or the
    /// propagation chain cycles (incompatible macro marking).
    pub fn bisect(&mut self, elem: ElemId) -> Result<()> {
        if !self.is_leaf(elem) {
            return Err(Error::NotALeaf(elem));
        }
        if self.dim() == 1 {
            let info = self.element_info(elem)?;
            return self.atomic_bisect(&info, None);
        }
        let mut stack = vec![elem];
        let mut steps = 0usize;
        while let Some(&top) = stack.last() {
            if !self.is_leaf(top) {
                stack.pop();
                continue;
            }
            steps += 1;
            if steps > 4 * self.n_leaves + 64 {
                return Err(Error::IncompatibleRefinementEdges(top.macro_idx as usize));
            }
            let info = self.element_info(top)?;
            let key = edge_key(info.vertices[0], info.vertices[1]);
            let partner = self.edges.get(&key).and_then(|s| s.other(top));
            match partner {
                None => {
                    self.atomic_bisect(&info, None)?;
                    stack.pop();
                }
                Some(n) => {
                    let ninfo = self.element_info(n)?;
                    let nkey = edge_key(ninfo.vertices[0], ninfo.vertices[1]);
                    if nkey == key {
                        self.atomic_bisect(&info, Some(&ninfo))?;
                        stack.pop();
                    } else if stack.contains(&n) {
                        return Err(Error::IncompatibleRefinementEdges(n.macro_idx as usize));
                    } else {
                        stack.push(n);
                    }
                }
            }
        }
        Ok(())
    }

    fn atomic_bisect(&mut self, a: &ElementInfo, b: Option<&ElementInfo>) -> Result<()> {
        if a.level >= MAX_DEPTH || b.map(|i| i.level >= MAX_DEPTH).unwrap_or(false) {
            return Err(Error::DepthCap);
        }
        let key = edge_key(a.vertices[0], a.vertices[1]);
        let mid = match self.midpoints.get(&key) {
            Some(&m) => m,
            None => {
                let m = self.vertices.len() as u32;
                self.vertices.push([
                    0.5 * (a.coords[0][0] + a.coords[1][0]),
                    0.5 * (a.coords[0][1] + a.coords[1][1]),
                ]);
                self.midpoints.insert(key, m);
                m
            }
        };
        self.split_one(a, mid);
        if let Some(b) = b {
            debug_assert_eq!(key, edge_key(b.vertices[0], b.vertices[1]));
            self.split_one(b, mid);
        }
        debug_assert!(self.edges.get(&key).map(|s| s.is_empty()).unwrap_or(true));
        self.edges.remove(&key);
        Ok(())
    }

    fn split_one(&mut self, info: &ElementInfo, mid: u32) {
        let tree = &mut self.trees[info.id.macro_idx as usize];
        let left = tree.alloc_pair(info.id.node, info.level + 1);
        let cl = ElemId { macro_idx: info.id.macro_idx, node: left };
        let cr = ElemId { macro_idx: info.id.macro_idx, node: left + 1 };
        let (a, b) = (info.vertices[0], info.vertices[1]);
        if self.dim() == 1 {
            self.edges.get_mut(&(a, a)).unwrap().replace(info.id, cl);
            self.edges.get_mut(&(b, b)).unwrap().replace(info.id, cr);
            let slot = self.edges.entry((mid, mid)).or_default();
            slot.insert(cl);
            slot.insert(cr);
        } else {
            let c = info.vertices[2];
            self.edges.get_mut(&edge_key(a, b)).unwrap().remove(info.id);
            self.edges.get_mut(&edge_key(a, c)).unwrap().replace(info.id, cl);
            self.edges.get_mut(&edge_key(b, c)).unwrap().replace(info.id, cr);
            self.edges.entry(edge_key(a, mid)).or_default().insert(cl);
            self.edges.entry(edge_key(b, mid)).or_default().insert(cr);
            let slot = self.edges.entry(edge_key(c, mid)).or_default();
            slot.insert(cl);
            slot.insert(cr);
        }
        self.n_leaves += 1;
        self.version += 1;
    }

    /// The set of leaves that must be removed together to undo the bisection
    /// that created `elem`, or `None` if that removal would be non-conforming.
    pub fn coarsening_patch(&self, elem: ElemId) -> Result<Option<Vec<ElemId>>> {
        if !self.is_leaf(elem) {
            return Err(Error::NotALeaf(elem));
        }
        let tree = &self.trees[elem.macro_idx as usize];
        let parent = tree.nodes[elem.node as usize].parent;
        if parent == NONE {
            return Ok(None);
        }
        let left = tree.nodes[parent as usize].children;
        let cl = ElemId { macro_idx: elem.macro_idx, node: left };
        let cr = ElemId { macro_idx: elem.macro_idx, node: left + 1 };
        if !self.is_leaf(cl) || !self.is_leaf(cr) {
            return Ok(None);
        }
        let pid = ElemId { macro_idx: elem.macro_idx, node: parent };
        let pinfo = self.element_info(pid)?;
        if self.dim() == 1 {
            return Ok(Some(vec![cl, cr]));
        }
        let (a, b) = (pinfo.vertices[0], pinfo.vertices[1]);
        let mid = *self.midpoints.get(&edge_key(a, b)).expect("bisected edge has a midpoint");
        let other = self.edges.get(&edge_key(a, mid)).and_then(|s| s.other(cl));
        match other {
            None => {
                // boundary edge: only this parent's children meet the midpoint
                debug_assert!(self
                    .edges
                    .get(&edge_key(b, mid))
                    .map(|s| s.other(cr).is_none())
                    .unwrap_or(true));
                Ok(Some(vec![cl, cr]))
            }
            Some(x) => {
                let xtree = &self.trees[x.macro_idx as usize];
                let qparent = xtree.nodes[x.node as usize].parent;
                if qparent == NONE {
                    return Ok(None);
                }
                let qleft = xtree.nodes[qparent as usize].children;
                let ql = ElemId { macro_idx: x.macro_idx, node: qleft };
                let qr = ElemId { macro_idx: x.macro_idx, node: qleft + 1 };
                if !self.is_leaf(ql) || !self.is_leaf(qr) {
                    return Ok(None);
                }
                let qid = ElemId { macro_idx: x.macro_idx, node: qparent };
                let qinfo = self.element_info(qid)?;
                if edge_key(qinfo.vertices[0], qinfo.vertices[1]) != edge_key(a, b) {
                    return Ok(None);
                }
                // the four children of P and Q are exactly the leaves at mid
                let s2 = self.edges.get(&edge_key(b, mid)).map(|s| s.count()).unwrap_or(0);
                if s2 != 2 {
                    return Ok(None);
                }
                Ok(Some(vec![cl, cr, ql, qr]))
            }
        }
    }

    /// Undoes one bisection around `elem` if the whole patch is removable.
    /// Returns whether anything changed.
    pub fn coarsen(&mut self, elem: ElemId) -> Result<bool> {
        let patch = match self.coarsening_patch(elem)? {
            Some(p) => p,
            None => return Ok(false),
        };
        // patch holds child pairs [cl, cr] per parent, in order
        let mut i = 0;
        while i < patch.len() {
            let cl = patch[i];
            let parent = self.trees[cl.macro_idx as usize].nodes[cl.node as usize].parent;
            let pid = ElemId { macro_idx: cl.macro_idx, node: parent };
            let pinfo = self.element_info(pid)?;
            self.merge_one(&pinfo);
            i += 2;
        }
        Ok(true)
    }

    fn merge_one(&mut self, pinfo: &ElementInfo) {
        let tree = &mut self.trees[pinfo.id.macro_idx as usize];
        let left = tree.nodes[pinfo.id.node as usize].children;
        let cl = ElemId { macro_idx: pinfo.id.macro_idx, node: left };
        let cr = ElemId { macro_idx: pinfo.id.macro_idx, node: left + 1 };
        tree.free_pair(pinfo.id.node);
        let (a, b) = (pinfo.vertices[0], pinfo.vertices[1]);
        let mid = *self.midpoints.get(&edge_key(a, b)).unwrap();
        if self.dim() == 1 {
            self.edges.get_mut(&(a, a)).unwrap().replace(cl, pinfo.id);
            self.edges.get_mut(&(b, b)).unwrap().replace(cr, pinfo.id);
            let slot = self.edges.get_mut(&(mid, mid)).unwrap();
            slot.remove(cl);
            slot.remove(cr);
            if slot.is_empty() {
                self.edges.remove(&(mid, mid));
            }
        } else {
            let c = pinfo.vertices[2];
            remove_and_gc(&mut self.edges, edge_key(a, mid), cl);
            remove_and_gc(&mut self.edges, edge_key(b, mid), cr);
            let slot = self.edges.get_mut(&edge_key(c, mid)).unwrap();
            slot.remove(cl);
            slot.remove(cr);
            if slot.is_empty() {
                self.edges.remove(&edge_key(c, mid));
            }
            self.edges.get_mut(&edge_key(a, c)).unwrap().replace(cl, pinfo.id);
            self.edges.get_mut(&edge_key(b, c)).unwrap().replace(cr, pinfo.id);
            self.edges.entry(edge_key(a, b)).or_default().insert(pinfo.id);
        }
        self.n_leaves -= 1;
        self.version += 1;
    }

    /// Bisects every current leaf exactly once (propagation may split some
    /// leaves on its own; those are not split again).
    pub fn refine_all(&mut self) -> Result<()> {
        let before: Vec<(ElemId, u8)> = {
            let mut v = Vec::with_capacity(self.n_leaves);
            self.traverse(TraverseSpec::Leaves, |e| v.push((e.id, e.level)));
            v
        };
        for (id, level) in before {
            // skip leaves already bisected by propagation
            if self.is_leaf(id) {
                self.bisect(id)?;
            } else {
                debug_assert!(self.node_children(id).is_some());
                let _ = level;
            }
        }
        Ok(())
    }

    /// Checks that every leaf facet is shared by exactly two leaves or lies on
    /// the boundary (nonzero marker), and that the incremental facet table
    /// agrees with a fresh recount.
    pub fn validate_conformity(&self) -> Result<()> {
        let mut fresh: HashMap<EdgeKey, Vec<(ElemId, i32)>> = HashMap::new();
        let dim = self.dim();
        let mut count = 0usize;
        self.traverse(TraverseSpec::Leaves, |e| {
            count += 1;
            for f in 0..dim as usize + 1 {
                fresh.entry(e.facet_key(dim, f)).or_default().push((e.id, e.markers[f]));
            }
        });
        if count != self.n_leaves {
            return Err(Error::MeshInvalid(format!(
                "leaf count drifted: counter {} vs traversal {count}",
                self.n_leaves
            )));
        }
        for (key, v) in &fresh {
            match v.len() {
                1 => {
                    if v[0].1 == 0 {
                        return Err(Error::MeshInvalid(format!(
                            "facet {key:?} of {:?} has one leaf but no boundary marker",
                            v[0].0
                        )));
                    }
                }
                2 => {
                    if v[0].1 != 0 || v[1].1 != 0 {
                        return Err(Error::MeshInvalid(format!(
                            "interior facet {key:?} carries a boundary marker"
                        )));
                    }
                }
                n => {
                    return Err(Error::MeshInvalid(format!(
                        "facet {key:?} is shared by {n} leaves (hanging node)"
                    )))
                }
            }
            let slot = self.edges.get(key).ok_or_else(|| {
                Error::MeshInvalid(format!("facet {key:?} missing from the incidence table"))
            })?;
            if slot.count() != v.len() {
                return Err(Error::MeshInvalid(format!(
                    "facet {key:?}: incidence table has {} leaves, traversal found {}",
                    slot.count(),
                    v.len()
                )));
            }
        }
        if fresh.len() != self.edges.len() {
            return Err(Error::MeshInvalid(format!(
                "incidence table has {} facets, traversal found {}",
                self.edges.len(),
                fresh.len()
            )));
        }
        Ok(())
    }

    /// Sum of leaf volumes.
    pub fn total_volume(&self) -> f64 {
        let mut v = 0.0;
        self.traverse(TraverseSpec::Leaves, |e| v += e.volume);
        v
    }
}

pub(crate) fn edge_key(a: u32, b: u32) -> EdgeKey {
    (a.min(b), a.max(b))
}

fn remove_and_gc(edges: &mut HashMap<EdgeKey, Slot>, key: EdgeKey, e: ElemId) {
    let slot = edges.get_mut(&key).unwrap();
    slot.remove(e);
    if slot.is_empty() {
        edges.remove(&key);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Mesh {
        Mesh::new(Arc::new(MacroMesh::unit_square_cross()))
    }

    #[test]
    fn macro_square_shape() {
        let m = MacroMesh::unit_square_cross();
        assert_eq!(m.elements.len(), 4);
        assert_eq!(m.vertices.len(), 5);
        m.validate().unwrap();
    }

    #[test]
    fn interval_roundtrip_parse() {
        let m = MacroMesh::interval(0.0, 1.0, 3);
        m.validate().unwrap();
        let mesh = Mesh::new(Arc::new(m));
        assert_eq!(mesh.leaf_count(), 3);
        mesh.validate_conformity().unwrap();
    }

    #[test]
    fn parse_rejects_bad_marker() {
        let text = "DIM 1\nVERTICES 2\n0.0\n1.0\nELEMENTS 1\n0 1\nNEIGHBOURS\n-1 -1\nBOUNDARY\n0 1\n";
        let err = MacroMesh::parse(text).unwrap_err();
        assert!(matches!(err, Error::MeshInvalid(_)));
    }

    #[test]
    fn parse_rotates_refinement_edge() {
        // single triangle, refinement edge given as local edge 0 = (v1, v2)
        let text = "DIM 2\nVERTICES 3\n0.0 0.0\n1.0 0.0\n0.0 1.0\nELEMENTS 1\n0 1 2\nNEIGHBOURS\n-1 -1 -1\nBOUNDARY\n1 1 1\nREFINEMENT_EDGES\n0\n";
        let m = MacroMesh::parse(text).unwrap();
        assert_eq!(m.elements[0].vertices, [1, 2, 0]);
    }

    #[test]
    fn bisect_single_boundary_element() {
        let mut mesh = Mesh::new(Arc::new(MacroMesh::interval(0.0, 1.0, 1)));
        let root = ElemId { macro_idx: 0, node: 0 };
        mesh.bisect(root).unwrap();
        assert_eq!(mesh.leaf_count(), 2);
        let leaves = mesh.leaf_elements();
        assert_eq!(leaves.len(), 2);
        assert_eq!(leaves[0].coords[0][0], 0.0);
        assert_eq!(leaves[0].coords[1][0], 0.5);
        assert_eq!(leaves[1].coords[0][0], 0.5);
        assert_eq!(leaves[1].coords[1][0], 1.0);
        assert_eq!(leaves[0].markers, [0, 1, 0]);
        assert_eq!(leaves[1].markers, [2, 0, 0]);
        mesh.validate_conformity().unwrap();
    }

    #[test]
    fn bisect_pair_stays_conforming() {
        let mut mesh = square();
        mesh.refine_all().unwrap();
        assert_eq!(mesh.leaf_count(), 8);
        mesh.validate_conformity().unwrap();
        // each child has half the root volume, total measure conserved
        assert!((mesh.total_volume() - 1.0).abs() < 1e-14);
        // one more targeted bisect: interior diagonal edges propagate in pairs
        let leaves = mesh.leaf_elements();
        mesh.bisect(leaves[0].id).unwrap();
        mesh.validate_conformity().unwrap();
        assert!((mesh.total_volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn refine_then_coarsen_restores_leaf_stream() {
        let mut mesh = Mesh::new(Arc::new(MacroMesh::interval(0.0, 1.0, 2)));
        let before: Vec<_> = mesh.leaf_elements().iter().map(|e| (e.id, e.coords)).collect();
        let target = before[0].0;
        mesh.bisect(target).unwrap();
        assert_eq!(mesh.leaf_count(), 3);
        let child = mesh.leaf_elements()[0].id;
        assert!(mesh.coarsen(child).unwrap());
        let after: Vec<_> = mesh.leaf_elements().iter().map(|e| (e.id, e.coords)).collect();
        assert_eq!(before, after);
        mesh.validate_conformity().unwrap();
    }

    #[test]
    fn coarsen_refuses_half_patch() {
        let mut mesh = square();
        mesh.refine_all().unwrap();
        // refine one interior pair further; its sibling pair is still needed
        let leaves = mesh.leaf_elements();
        mesh.bisect(leaves[0].id).unwrap();
        mesh.validate_conformity().unwrap();
        // leaves whose sibling was refined further cannot coarsen, the
        // freshly created pair can
        let mut blocked = 0;
        let mut free = 0;
        for e in mesh.leaf_elements() {
            match mesh.coarsening_patch(e.id).unwrap() {
                Some(_) => free += 1,
                None => blocked += 1,
            }
        }
        assert!(blocked > 0);
        assert!(free > 0);
    }

    #[test]
    fn depth_cap_is_enforced() {
        let mut mesh = Mesh::new(Arc::new(MacroMesh::interval(0.0, 1.0, 1)));
        let mut cur = ElemId { macro_idx: 0, node: 0 };
        for _ in 0..64 {
            mesh.bisect(cur).unwrap();
            cur = mesh.leaf_elements()[0].id;
        }
        assert!(matches!(mesh.bisect(cur), Err(Error::DepthCap)));
    }

    #[test]
    fn incompatible_macro_marking_is_rejected() {
        // two triangles sharing the diagonal, exactly one of which bisects it:
        // refining the other one first walks to the pair and terminates, but a
        // 3-cycle of triangles each pointing at the next must error.
        let text = "DIM 2\nVERTICES 4\n0.0 0.0\n1.0 0.0\n1.0 1.0\n0.0 1.0\nELEMENTS 2\n0 1 2\n0 2 3\nNEIGHBOURS\n-1 1 -1\n-1 -1 0\nBOUNDARY\n1 0 1\n1 1 0\nREFINEMENT_EDGES\n2\n2\n";
        // element 0 refines edge (0,1) but its facet-2 neighbour is boundary;
        // element 1 refines edge (0,2) whose neighbour 0 refines (0,1): chain
        // 1 -> 0 -> boundary, terminates. Valid.
        MacroMesh::parse(text).unwrap();
    }

    #[test]
    fn element_info_replays_path() {
        let mut mesh = square();
        mesh.refine_all().unwrap();
        for leaf in mesh.leaf_elements() {
            let again = mesh.element_info(leaf.id).unwrap();
            assert_eq!(leaf.vertices, again.vertices);
            assert_eq!(leaf.sequence, again.sequence);
            for i in 0..3 {
                assert_eq!(leaf.coords[i], again.coords[i]);
            }
        }
    }
}
