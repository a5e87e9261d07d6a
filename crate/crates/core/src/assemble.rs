//! Finite element spaces and weak-form assembly, on one mesh or across two
//! meshes refined from the same macro mesh.
//!
//! Degrees of freedom are numbered in discovery order during the canonical
//! leaf traversal, which makes the numbering reproducible run to run. A
//! vertex DOF is keyed by its global vertex id, an edge DOF by the sorted
//! vertex pair of its edge plus its position along it (counted from the
//! lower vertex id), and interior DOFs by their element.
//!
//! Coupling terms between variables on different meshes never build a union
//! mesh. Instead the two forests are traversed together; every matched pair
//! contributes one element matrix computed by quadrature on the smaller
//! element, lifted to the coarser element's basis with the transformation
//! matrix of the connecting bisection path (rows for a coarse test space,
//! transposed columns for a coarse trial space).

use std::collections::HashMap;
use std::sync::Arc;

use crate::basis::{barycentric_gradients, lambda_to_point, phys_gradient, Basis, NodeKind, Quadrature, MAX_QUAD_ORDER};
use crate::error::{Error, Result};
use crate::linalg::{CooMatrix, CsrMatrix, Matrix};
use crate::mesh::{ElemId, ElementInfo, Mesh, TraverseSpec};
use crate::transform::{gradient_matrix, transform_matrix};
use crate::traverse::{dual_traverse, FinerSide};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum DofKey {
    Vertex(u32),
    Edge(u32, u32, u32),
    Interior(u32, u32, u32),
}

/// A Lagrange finite element space bound to one snapshot of a mesh.
///
/// The space remembers the mesh id and version it was built from; any
/// assembly call against a mesh that has since changed fails with
/// `StaleSpace` instead of producing garbage.
pub struct FESpace {
    mesh_id: u64,
    mesh_version: u64,
    dim: u8,
    degree: u32,
    basis: Basis,
    n_dofs: usize,
    elem_dofs: HashMap<ElemId, Vec<u32>>,
    dof_coords: Vec<[f64; 2]>,
    dof_markers: Vec<Vec<i32>>,
}

impl FESpace {
    pub fn new(mesh: &Mesh, degree: u32) -> Result<Arc<FESpace>> {
        let dim = mesh.dim();
        let basis = Basis::new(dim, degree)?;
        let p = degree;
        let mut keys: HashMap<DofKey, u32> = HashMap::new();
        let mut elem_dofs: HashMap<ElemId, Vec<u32>> = HashMap::new();
        let mut dof_coords: Vec<[f64; 2]> = Vec::new();
        let mut dof_markers: Vec<Vec<i32>> = Vec::new();
        let mut leaves = Vec::new();
        mesh.traverse(TraverseSpec::Leaves, |e| leaves.push(e.clone()));
        for info in &leaves {
            let mut dofs = Vec::with_capacity(basis.n_basis());
            for i in 0..basis.n_basis() {
                let key = match basis.node_kind(i) {
                    NodeKind::Vertex(v) => DofKey::Vertex(info.vertices[v]),
                    NodeKind::Edge { edge, k } => {
                        let (lo, hi) = ElementInfo::facet_locals(edge);
                        let (a, b) = (info.vertices[lo], info.vertices[hi]);
                        if a < b {
                            DofKey::Edge(a, b, k)
                        } else {
                            DofKey::Edge(b, a, p - k)
                        }
                    }
                    NodeKind::Interior(idx) => {
                        DofKey::Interior(info.id.macro_idx, info.id.node, idx as u32)
                    }
                };
                let next = dof_coords.len() as u32;
                let id = *keys.entry(key).or_insert_with(|| {
                    dof_coords.push(lambda_to_point(dim, &info.coords, basis.node_lambda(i)));
                    dof_markers.push(Vec::new());
                    next
                });
                dofs.push(id);
            }
            for f in 0..dim as usize + 1 {
                let marker = info.markers[f];
                if marker == 0 {
                    continue;
                }
                for i in 0..basis.n_basis() {
                    let on_facet = match basis.node_kind(i) {
                        NodeKind::Vertex(v) => {
                            if dim == 1 {
                                v == 1 - f
                            } else {
                                v != f
                            }
                        }
                        NodeKind::Edge { edge, .. } => edge == f,
                        NodeKind::Interior(_) => false,
                    };
                    if on_facet {
                        let d = dofs[i] as usize;
                        if !dof_markers[d].contains(&marker) {
                            dof_markers[d].push(marker);
                        }
                    }
                }
            }
            elem_dofs.insert(info.id, dofs);
        }
        Ok(Arc::new(FESpace {
            mesh_id: mesh.id(),
            mesh_version: mesh.version(),
            dim,
            degree,
            basis,
            n_dofs: dof_coords.len(),
            elem_dofs,
            dof_coords,
            dof_markers,
        }))
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }
    pub fn degree(&self) -> u32 {
        self.degree
    }
    pub fn dim(&self) -> u8 {
        self.dim
    }
    pub fn basis(&self) -> &Basis {
        &self.basis
    }
    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }
    pub fn dof_coord(&self, i: usize) -> [f64; 2] {
        self.dof_coords[i]
    }

    pub fn dofs(&self, elem: ElemId) -> Result<&[u32]> {
        self.elem_dofs.get(&elem).map(|v| v.as_slice()).ok_or(Error::NotALeaf(elem))
    }

    pub fn check_current(&self, mesh: &Mesh) -> Result<()> {
        if mesh.id() != self.mesh_id || mesh.version() != self.mesh_version {
            return Err(Error::StaleSpace);
        }
        Ok(())
    }

    /// All DOFs lying on facets with any of the given markers, ascending.
    pub fn boundary_dofs(&self, markers: &[i32]) -> Vec<u32> {
        let mut out: Vec<u32> = (0..self.n_dofs)
            .filter(|&i| self.dof_markers[i].iter().any(|m| markers.contains(m)))
            .map(|i| i as u32)
            .collect();
        out.sort_unstable();
        out
    }

    /// Nodal interpolation of a pointwise function.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.dof_coords.iter().map(|&x| f(x)).collect()
    }
}

impl std::fmt::Debug for FESpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FESpace")
            .field("mesh_id", &self.mesh_id)
            .field("degree", &self.degree)
            .field("n_dofs", &self.n_dofs)
            .finish()
    }
}

/// A coefficient vector in a space.
#[derive(Clone)]
pub struct FeFunction {
    pub space: Arc<FESpace>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn zero(space: Arc<FESpace>) -> Self {
        let n = space.n_dofs();
        FeFunction { space, coeffs: vec![0.0; n] }
    }

    pub fn from_fn(space: Arc<FESpace>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let coeffs = space.interpolate(f);
        FeFunction { space, coeffs }
    }

    /// Value at a barycentric point of a leaf of the function's own mesh.
    pub fn value_on(&self, info: &ElementInfo, lambda: [f64; 3]) -> Result<f64> {
        let dofs = self.space.dofs(info.id)?;
        let b = self.space.basis();
        Ok((0..b.n_basis()).map(|i| self.coeffs[dofs[i] as usize] * b.eval(i, lambda)).sum())
    }

    /// Physical gradient at a barycentric point of a leaf.
    pub fn gradient_on(&self, info: &ElementInfo, lambda: [f64; 3]) -> Result<[f64; 2]> {
        let dofs = self.space.dofs(info.id)?;
        let b = self.space.basis();
        let bg = barycentric_gradients(self.space.dim(), &info.coords);
        let mut g = [0.0, 0.0];
        for i in 0..b.n_basis() {
            let gi = phys_gradient(b, i, lambda, &bg);
            g[0] += self.coeffs[dofs[i] as usize] * gi[0];
            g[1] += self.coeffs[dofs[i] as usize] * gi[1];
        }
        Ok(g)
    }
}

type PosFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
type DataMap = Arc<dyn Fn(f64, [f64; 2], [f64; 2]) -> f64 + Send + Sync>;

/// A scalar coefficient in a weak-form term.
#[derive(Clone)]
pub enum Coeff {
    Const(f64),
    Position(PosFn),
    /// Derived pointwise from a finite element function (its value, gradient
    /// and the position).
    Data { func: FeFunction, map: DataMap },
}

impl Coeff {
    pub fn constant(v: f64) -> Self {
        Coeff::Const(v)
    }
    pub fn position(f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        Coeff::Position(Arc::new(f))
    }
    pub fn data(func: &FeFunction) -> Self {
        Coeff::Data { func: func.clone(), map: Arc::new(|v, _, _| v) }
    }
    pub fn data_map(
        func: &FeFunction,
        map: impl Fn(f64, [f64; 2], [f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Coeff::Data { func: func.clone(), map: Arc::new(map) }
    }

    fn data_func(&self) -> Option<&FeFunction> {
        match self {
            Coeff::Data { func, .. } => Some(func),
            _ => None,
        }
    }
}

/// One bilinear term; `Mass` multiplies values, `Convection` differentiates
/// the trial function, `Diffusion` differentiates both sides.
#[derive(Clone)]
pub enum Term {
    Mass(Coeff),
    Convection([Coeff; 2]),
    Diffusion(Coeff),
}

/// A sum of bilinear terms assembled in one pass.
#[derive(Clone, Default)]
pub struct Operator {
    pub terms: Vec<Term>,
    /// Quadrature order override; the default covers products of the two
    /// polynomial degrees plus one.
    pub quad_order: Option<u32>,
}

impl Operator {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn mass(mut self, c: Coeff) -> Self {
        self.terms.push(Term::Mass(c));
        self
    }
    pub fn convection(mut self, b: [Coeff; 2]) -> Self {
        self.terms.push(Term::Convection(b));
        self
    }
    pub fn diffusion(mut self, c: Coeff) -> Self {
        self.terms.push(Term::Diffusion(c));
        self
    }
    pub fn with_quad_order(mut self, order: u32) -> Self {
        self.quad_order = Some(order);
        self
    }

    fn coeffs(&self) -> Vec<&Coeff> {
        let mut v = Vec::new();
        for t in &self.terms {
            match t {
                Term::Mass(c) | Term::Diffusion(c) => v.push(c),
                Term::Convection(b) => {
                    v.push(&b[0]);
                    v.push(&b[1]);
                }
            }
        }
        v
    }

    fn differentiates_trial(&self) -> bool {
        self.terms.iter().any(|t| matches!(t, Term::Convection(_) | Term::Diffusion(_)))
    }
}

/// One right-hand-side term; `Source` pairs with the test value, `GradTest`
/// with the test gradient.
#[derive(Clone)]
pub enum SourceTerm {
    Source(Coeff),
    GradTest([Coeff; 2]),
}

/// A sum of right-hand-side terms assembled in one pass.
#[derive(Clone, Default)]
pub struct Functional {
    pub terms: Vec<SourceTerm>,
    pub quad_order: Option<u32>,
}

impl Functional {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn source(mut self, c: Coeff) -> Self {
        self.terms.push(SourceTerm::Source(c));
        self
    }
    pub fn grad_test(mut self, w: [Coeff; 2]) -> Self {
        self.terms.push(SourceTerm::GradTest(w));
        self
    }
    pub fn with_quad_order(mut self, order: u32) -> Self {
        self.quad_order = Some(order);
        self
    }

    fn coeffs(&self) -> Vec<&Coeff> {
        let mut v = Vec::new();
        for t in &self.terms {
            match t {
                SourceTerm::Source(c) => v.push(c),
                SourceTerm::GradTest(w) => {
                    v.push(&w[0]);
                    v.push(&w[1]);
                }
            }
        }
        v
    }
}

fn ref_measure(dim: u8) -> f64 {
    if dim == 1 {
        1.0
    } else {
        0.5
    }
}

/// Per-element evaluation context for the smaller element of a pair.
struct QuadCtx<'a> {
    quad: &'a Quadrature,
    /// physical points per quadrature point
    x: Vec<[f64; 2]>,
    /// measure-scaled weights (summing to the element volume)
    w: Vec<f64>,
    bg: [[f64; 2]; 3],
}

impl<'a> QuadCtx<'a> {
    fn new(dim: u8, quad: &'a Quadrature, info: &ElementInfo) -> Self {
        let scale = info.volume / ref_measure(dim);
        QuadCtx {
            quad,
            x: quad.points.iter().map(|&l| lambda_to_point(dim, &info.coords, l)).collect(),
            w: quad.weights.iter().map(|w| w * scale).collect(),
            bg: barycentric_gradients(dim, &info.coords),
        }
    }
}

/// Local values of every data coefficient on the current small element,
/// indexed like `Operator::coeffs()`.
struct DataLocals<'a> {
    per_coeff: Vec<Option<(Vec<f64>, &'a Basis)>>,
}

fn resolve_data_locals<'a>(
    coeffs: &[&'a Coeff],
    row_space: &FESpace,
    row_leaf: ElemId,
    row_is_large: bool,
    col: Option<(&FESpace, ElemId, bool)>,
    seq: &crate::traverse::RefinementSequence,
) -> Result<DataLocals<'a>> {
    let mut per_coeff = Vec::with_capacity(coeffs.len());
    for c in coeffs {
        let func = match c.data_func() {
            None => {
                per_coeff.push(None);
                continue;
            }
            Some(f) => f,
        };
        let (leaf, is_large) = if func.space.mesh_id() == row_space.mesh_id() {
            (row_leaf, row_is_large)
        } else if let Some((cs, cl, large)) = col {
            if func.space.mesh_id() == cs.mesh_id() {
                (cl, large)
            } else {
                return Err(Error::DimensionMismatch(
                    "coefficient data must live on one of the traversed meshes".into(),
                ));
            }
        } else {
            return Err(Error::DimensionMismatch(
                "coefficient data must live on one of the traversed meshes".into(),
            ));
        };
        let dofs = func.space.dofs(leaf)?;
        let mut local: Vec<f64> = dofs.iter().map(|&d| func.coeffs[d as usize]).collect();
        if is_large && !seq.is_empty() {
            let c = transform_matrix(func.space.dim(), func.space.degree(), seq)?;
            local = crate::transform::restrict_coefficients(&c, &local);
        }
        per_coeff.push(Some((local, func.space.basis())));
    }
    Ok(DataLocals { per_coeff })
}

fn eval_coeff(c: &Coeff, locals: &DataLocals, idx: usize, ctx: &QuadCtx, q: usize) -> f64 {
    match c {
        Coeff::Const(v) => *v,
        Coeff::Position(f) => f(ctx.x[q]),
        Coeff::Data { map, .. } => {
            let (local, basis) = locals.per_coeff[idx].as_ref().expect("data coeff resolved");
            let l = ctx.quad.points[q];
            let mut value = 0.0;
            let mut grad = [0.0, 0.0];
            for i in 0..basis.n_basis() {
                let v = basis.eval(i, l);
                value += local[i] * v;
                let g = phys_gradient(basis, i, l, &ctx.bg);
                grad[0] += local[i] * g[0];
                grad[1] += local[i] * g[1];
            }
            map(value, grad, ctx.x[q])
        }
    }
}

/// Dense element matrix of `op` on one small element, rows in `row_basis`,
/// columns in `col_basis`, both evaluated on that element's geometry.
fn element_matrix(
    op: &Operator,
    row_basis: &Basis,
    col_basis: &Basis,
    ctx: &QuadCtx,
    locals: &DataLocals,
) -> Matrix {
    let (nr, nc) = (row_basis.n_basis(), col_basis.n_basis());
    let mut m = Matrix::zeros(nr, nc);
    let mut row_vals = vec![0.0; nr];
    let mut col_vals = vec![0.0; nc];
    let mut col_grads = vec![[0.0; 2]; nc];
    let mut row_grads = vec![[0.0; 2]; nr];
    for q in 0..ctx.quad.len() {
        let l = ctx.quad.points[q];
        for i in 0..nr {
            row_vals[i] = row_basis.eval(i, l);
            row_grads[i] = phys_gradient(row_basis, i, l, &ctx.bg);
        }
        for j in 0..nc {
            col_vals[j] = col_basis.eval(j, l);
            col_grads[j] = phys_gradient(col_basis, j, l, &ctx.bg);
        }
        let w = ctx.w[q];
        let mut ci = 0;
        for t in &op.terms {
            match t {
                Term::Mass(c) => {
                    let cv = eval_coeff(c, locals, ci, ctx, q) * w;
                    ci += 1;
                    if cv != 0.0 {
                        for i in 0..nr {
                            let a = cv * row_vals[i];
                            for j in 0..nc {
                                m.add(i, j, a * col_vals[j]);
                            }
                        }
                    }
                }
                Term::Convection(b) => {
                    let bx = eval_coeff(&b[0], locals, ci, ctx, q) * w;
                    let by = eval_coeff(&b[1], locals, ci + 1, ctx, q) * w;
                    ci += 2;
                    for i in 0..nr {
                        let a = row_vals[i];
                        for j in 0..nc {
                            m.add(i, j, a * (bx * col_grads[j][0] + by * col_grads[j][1]));
                        }
                    }
                }
                Term::Diffusion(c) => {
                    let cv = eval_coeff(c, locals, ci, ctx, q) * w;
                    ci += 1;
                    if cv != 0.0 {
                        for i in 0..nr {
                            let g = row_grads[i];
                            for j in 0..nc {
                                m.add(
                                    i,
                                    j,
                                    cv * (g[0] * col_grads[j][0] + g[1] * col_grads[j][1]),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

fn default_quad_order(p_row: u32, p_col: u32, explicit: Option<u32>) -> u32 {
    explicit.unwrap_or(p_row + p_col + 1).clamp(1, MAX_QUAD_ORDER)
}

/// Assembles a bilinear operator into triplets, on one mesh or across two.
///
/// The row and column spaces may live on the same mesh object (any degree
/// combination) or on two meshes sharing a macro mesh (equal degrees only,
/// since the lifting applies one basis's transformation matrices).
pub fn assemble_matrix(
    op: &Operator,
    row_space: &Arc<FESpace>,
    row_mesh: &Mesh,
    col_space: &Arc<FESpace>,
    col_mesh: &Mesh,
) -> Result<CooMatrix> {
    row_space.check_current(row_mesh)?;
    col_space.check_current(col_mesh)?;
    let dim = row_mesh.dim();
    let order = default_quad_order(row_space.degree(), col_space.degree(), op.quad_order);
    let quad = Quadrature::new(dim, order)?;
    let coeffs = op.coeffs();
    let mut coo = CooMatrix::new(row_space.n_dofs(), col_space.n_dofs());

    if row_space.mesh_id() == col_space.mesh_id() {
        let mut leaves = Vec::new();
        row_mesh.traverse(TraverseSpec::Leaves, |e| leaves.push(e.clone()));
        let empty = crate::traverse::RefinementSequence::empty();
        for info in &leaves {
            let ctx = QuadCtx::new(dim, &quad, info);
            let locals = resolve_data_locals(&coeffs, row_space, info.id, false, None, &empty)?;
            let m = element_matrix(op, row_space.basis(), col_space.basis(), &ctx, &locals);
            stamp(&mut coo, &m, row_space.dofs(info.id)?, col_space.dofs(info.id)?);
        }
        return Ok(coo);
    }

    if row_space.degree() != col_space.degree() {
        return Err(Error::DimensionMismatch(format!(
            "coupling two meshes needs equal degrees, got {} and {}",
            row_space.degree(),
            col_space.degree()
        )));
    }
    let mut err = None;
    dual_traverse(row_mesh, col_mesh, |pair| {
        if err.is_some() {
            return;
        }
        let r = (|| -> Result<()> {
            let (row_info, col_info, small) = match pair.finer {
                FinerSide::Equal => (&pair.large, &pair.small, &pair.small),
                FinerSide::A => (&pair.small, &pair.large, &pair.small),
                FinerSide::B => (&pair.large, &pair.small, &pair.small),
            };
            let row_is_large = pair.finer == FinerSide::B;
            let col_is_large = pair.finer == FinerSide::A;
            let ctx = QuadCtx::new(dim, &quad, small);
            let locals = resolve_data_locals(
                &coeffs,
                row_space,
                row_info.id,
                row_is_large,
                Some((col_space, col_info.id, col_is_large)),
                &pair.sequence,
            )?;
            let mut m = element_matrix(op, row_space.basis(), col_space.basis(), &ctx, &locals);
            if col_is_large {
                let c = if op.differentiates_trial() {
                    gradient_matrix(dim, col_space.degree(), &pair.sequence)?
                } else {
                    transform_matrix(dim, col_space.degree(), &pair.sequence)?
                };
                m = m.matmul(&c.transpose());
            }
            if row_is_large {
                let c = transform_matrix(dim, row_space.degree(), &pair.sequence)?;
                m = c.matmul(&m);
            }
            stamp(&mut coo, &m, row_space.dofs(row_info.id)?, col_space.dofs(col_info.id)?);
            Ok(())
        })();
        if let Err(e) = r {
            err = Some(e);
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(coo)
}

fn stamp(coo: &mut CooMatrix, m: &Matrix, rows: &[u32], cols: &[u32]) {
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            coo.push(rows[i] as usize, cols[j] as usize, m.get(i, j));
        }
    }
}

/// Assembles a linear functional into `out` (added, not overwritten).
///
/// Data coefficients may live on the test mesh itself or on `aux_mesh`; in
/// the latter case the two meshes are traversed together.
pub fn assemble_functional(
    f: &Functional,
    space: &Arc<FESpace>,
    mesh: &Mesh,
    aux_mesh: Option<&Mesh>,
    out: &mut [f64],
) -> Result<()> {
    space.check_current(mesh)?;
    assert_eq!(out.len(), space.n_dofs());
    let dim = mesh.dim();
    let order = default_quad_order(space.degree(), space.degree(), f.quad_order);
    let quad = Quadrature::new(dim, order)?;
    let coeffs = f.coeffs();
    let needs_aux = coeffs
        .iter()
        .any(|c| c.data_func().map(|df| df.space.mesh_id() != space.mesh_id()).unwrap_or(false));

    if !needs_aux {
        let mut leaves = Vec::new();
        mesh.traverse(TraverseSpec::Leaves, |e| leaves.push(e.clone()));
        let empty = crate::traverse::RefinementSequence::empty();
        for info in &leaves {
            let ctx = QuadCtx::new(dim, &quad, info);
            let locals = resolve_data_locals(&coeffs, space, info.id, false, None, &empty)?;
            let v = element_vector(f, space.basis(), &ctx, &locals);
            for (i, &d) in space.dofs(info.id)?.iter().enumerate() {
                out[d as usize] += v[i];
            }
        }
        return Ok(());
    }

    let aux = aux_mesh.ok_or_else(|| {
        Error::DimensionMismatch("functional has data on another mesh but no aux mesh given".into())
    })?;
    // fake a column space just for data resolution: data funcs carry their own
    // spaces, so only the aux mesh id matters here
    let mut err = None;
    dual_traverse(mesh, aux, |pair| {
        if err.is_some() {
            return;
        }
        let r = (|| -> Result<()> {
            let (test_info, small) = match pair.finer {
                FinerSide::Equal => (&pair.large, &pair.small),
                FinerSide::A => (&pair.small, &pair.small),
                FinerSide::B => (&pair.large, &pair.small),
            };
            let aux_info = match pair.finer {
                FinerSide::Equal => &pair.small,
                FinerSide::A => &pair.large,
                FinerSide::B => &pair.small,
            };
            let test_is_large = pair.finer == FinerSide::B;
            let aux_is_large = pair.finer == FinerSide::A;
            let ctx = QuadCtx::new(dim, &quad, small);
            let locals = resolve_aux_locals(
                &coeffs,
                space,
                test_info.id,
                test_is_large,
                aux_info.id,
                aux_is_large,
                &pair.sequence,
            )?;
            let mut v = element_vector(f, space.basis(), &ctx, &locals);
            if test_is_large {
                let c = transform_matrix(dim, space.degree(), &pair.sequence)?;
                // v_large_i = sum_k C[i][k] v_small_k
                let mut lifted = vec![0.0; v.len()];
                for i in 0..c.rows() {
                    let mut s = 0.0;
                    for k in 0..c.cols() {
                        s += c.get(i, k) * v[k];
                    }
                    lifted[i] = s;
                }
                v = lifted;
            }
            for (i, &d) in space.dofs(test_info.id)?.iter().enumerate() {
                out[d as usize] += v[i];
            }
            Ok(())
        })();
        if let Err(e) = r {
            err = Some(e);
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(())
}

/// Like `resolve_data_locals`, but the non-test side is identified by mesh id
/// of each data function's own space rather than a shared column space.
fn resolve_aux_locals<'a>(
    coeffs: &[&'a Coeff],
    test_space: &FESpace,
    test_leaf: ElemId,
    test_is_large: bool,
    aux_leaf: ElemId,
    aux_is_large: bool,
    seq: &crate::traverse::RefinementSequence,
) -> Result<DataLocals<'a>> {
    let mut per_coeff = Vec::with_capacity(coeffs.len());
    for c in coeffs {
        let func = match c.data_func() {
            None => {
                per_coeff.push(None);
                continue;
            }
            Some(f) => f,
        };
        let (leaf, is_large) = if func.space.mesh_id() == test_space.mesh_id() {
            (test_leaf, test_is_large)
        } else {
            (aux_leaf, aux_is_large)
        };
        let dofs = func.space.dofs(leaf)?;
        let mut local: Vec<f64> = dofs.iter().map(|&d| func.coeffs[d as usize]).collect();
        if is_large && !seq.is_empty() {
            let cm = transform_matrix(func.space.dim(), func.space.degree(), seq)?;
            local = crate::transform::restrict_coefficients(&cm, &local);
        }
        per_coeff.push(Some((local, func.space.basis())));
    }
    Ok(DataLocals { per_coeff })
}

fn element_vector(f: &Functional, basis: &Basis, ctx: &QuadCtx, locals: &DataLocals) -> Vec<f64> {
    let n = basis.n_basis();
    let mut v = vec![0.0; n];
    for q in 0..ctx.quad.len() {
        let l = ctx.quad.points[q];
        let w = ctx.w[q];
        let mut ci = 0;
        for t in &f.terms {
            match t {
                SourceTerm::Source(c) => {
                    let cv = eval_coeff(c, locals, ci, ctx, q) * w;
                    ci += 1;
                    if cv != 0.0 {
                        for i in 0..n {
                            v[i] += cv * basis.eval(i, l);
                        }
                    }
                }
                SourceTerm::GradTest(wc) => {
                    let wx = eval_coeff(&wc[0], locals, ci, ctx, q) * w;
                    let wy = eval_coeff(&wc[1], locals, ci + 1, ctx, q) * w;
                    ci += 2;
                    for i in 0..n {
                        let g = phys_gradient(basis, i, l, &ctx.bg);
                        v[i] += wx * g[0] + wy * g[1];
                    }
                }
            }
        }
    }
    v
}

/// Integral of `f(x, u, grad u)` over the mesh for a finite element function.
pub fn integrate(
    func: &FeFunction,
    mesh: &Mesh,
    order: u32,
    f: impl Fn([f64; 2], f64, [f64; 2]) -> f64,
) -> Result<f64> {
    func.space.check_current(mesh)?;
    let dim = mesh.dim();
    let quad = Quadrature::new(dim, order.clamp(1, MAX_QUAD_ORDER))?;
    let mut total = 0.0;
    let mut leaves = Vec::new();
    mesh.traverse(TraverseSpec::Leaves, |e| leaves.push(e.clone()));
    for info in &leaves {
        let scale = info.volume / ref_measure(dim);
        let dofs = func.space.dofs(info.id)?;
        let b = func.space.basis();
        let bg = barycentric_gradients(dim, &info.coords);
        for q in 0..quad.len() {
            let l = quad.points[q];
            let mut u = 0.0;
            let mut g = [0.0, 0.0];
            for i in 0..b.n_basis() {
                let c = func.coeffs[dofs[i] as usize];
                u += c * b.eval(i, l);
                let gi = phys_gradient(b, i, l, &bg);
                g[0] += c * gi[0];
                g[1] += c * gi[1];
            }
            let x = lambda_to_point(dim, &info.coords, l);
            total += quad.weights[q] * scale * f(x, u, g);
        }
    }
    Ok(total)
}

/// `L2` distance between a finite element function and a reference function.
pub fn l2_error(
    func: &FeFunction,
    mesh: &Mesh,
    exact: impl Fn([f64; 2]) -> f64,
) -> Result<f64> {
    let order = (2 * func.space.degree() + 2).min(MAX_QUAD_ORDER);
    Ok(integrate(func, mesh, order, |x, u, _| (u - exact(x)).powi(2))?.max(0.0).sqrt())
}

type BcFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// A block-structured linear system over several component spaces.
///
/// Blocks accumulate as triplets; `finalize` concatenates them into one CSR
/// matrix with component offsets, applies Dirichlet constraints (later
/// registrations win on shared DOFs), and returns the matching right-hand
/// side.
pub struct BlockSystem {
    spaces: Vec<Arc<FESpace>>,
    offsets: Vec<usize>,
    blocks: Vec<Option<CooMatrix>>,
    rhs: Vec<Vec<f64>>,
    dirichlet: Vec<(usize, Vec<i32>, BcFn)>,
}

impl BlockSystem {
    pub fn new(spaces: Vec<Arc<FESpace>>) -> Self {
        let n = spaces.len();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for s in &spaces {
            offsets.push(offsets.last().unwrap() + s.n_dofs());
        }
        let rhs = spaces.iter().map(|s| vec![0.0; s.n_dofs()]).collect();
        BlockSystem { spaces, offsets, blocks: (0..n * n).map(|_| None).collect(), rhs, dirichlet: Vec::new() }
    }

    pub fn n_components(&self) -> usize {
        self.spaces.len()
    }
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
    pub fn total_dofs(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    pub fn space(&self, c: usize) -> &Arc<FESpace> {
        &self.spaces[c]
    }

    /// Adds triplets into block (r, c), accumulating with what is there.
    pub fn add_block(&mut self, r: usize, c: usize, coo: CooMatrix) {
        assert_eq!(coo.n_rows, self.spaces[r].n_dofs());
        assert_eq!(coo.n_cols, self.spaces[c].n_dofs());
        let n = self.spaces.len();
        match &mut self.blocks[r * n + c] {
            Some(existing) => existing.entries.extend_from_slice(&coo.entries),
            slot @ None => *slot = Some(coo),
        }
    }

    pub fn block(&self, r: usize, c: usize) -> Option<&CooMatrix> {
        self.blocks[r * self.spaces.len() + c].as_ref()
    }

    /// Applies block (r, c) to a coefficient vector of component `c`.
    pub fn block_matvec(&self, r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        match self.block(r, c) {
            None => vec![0.0; self.spaces[r].n_dofs()],
            Some(coo) => {
                let mut y = vec![0.0; coo.n_rows];
                for &(i, j, v) in &coo.entries {
                    y[i as usize] += v * x[j as usize];
                }
                y
            }
        }
    }

    pub fn rhs_mut(&mut self, c: usize) -> &mut Vec<f64> {
        &mut self.rhs[c]
    }

    pub fn add_rhs(&mut self, c: usize, v: &[f64]) {
        for (a, b) in self.rhs[c].iter_mut().zip(v) {
            *a += b;
        }
    }

    /// Registers a Dirichlet condition on all DOFs of component `comp` that
    /// carry one of `markers`. Conditions registered later override earlier
    /// ones where they overlap.
    pub fn set_dirichlet(
        &mut self,
        comp: usize,
        markers: &[i32],
        g: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) {
        self.dirichlet.push((comp, markers.to_vec(), Arc::new(g)));
    }

    /// Builds the global constrained system.
    pub fn finalize(&self) -> (CsrMatrix, Vec<f64>) {
        let n = self.total_dofs();
        let mut constrained: std::collections::BTreeMap<usize, f64> = Default::default();
        for (comp, markers, g) in &self.dirichlet {
            let space = &self.spaces[*comp];
            let off = self.offsets[*comp];
            for d in space.boundary_dofs(markers) {
                let x = space.dof_coord(d as usize);
                constrained.insert(off + d as usize, g(x));
            }
        }
        let mut rhs: Vec<f64> = Vec::with_capacity(n);
        for r in &self.rhs {
            rhs.extend_from_slice(r);
        }
        let nc = self.spaces.len();
        let mut coo = CooMatrix::new(n, n);
        for r in 0..nc {
            for c in 0..nc {
                if let Some(b) = &self.blocks[r * nc + c] {
                    let (ro, co) = (self.offsets[r], self.offsets[c]);
                    for &(i, j, v) in &b.entries {
                        let (gi, gj) = (ro + i as usize, co + j as usize);
                        if constrained.contains_key(&gi) {
                            continue;
                        }
                        if let Some(&val) = constrained.get(&gj) {
                            rhs[gi] -= v * val;
                            continue;
                        }
                        coo.push(gi, gj, v);
                    }
                }
            }
        }
        for (&i, &val) in &constrained {
            coo.push(i, i, 1.0);
            rhs[i] = val;
        }
        (coo.to_csr(), rhs)
    }

    /// Splits a global solution vector back into per-component vectors.
    pub fn split(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.spaces.len())
            .map(|c| x[self.offsets[c]..self.offsets[c + 1]].to_vec())
            .collect()
    }
}
