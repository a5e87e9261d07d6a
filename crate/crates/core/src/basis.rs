//! Lagrange bases (degrees 1 to 4) and quadrature rules on the reference
//! simplex.
//!
//! Everything is expressed in barycentric coordinates. A basis function is
//! identified by its node multi-index `a` with `|a| = p`; its node sits at
//! `lambda_i = a_i / p` and its value is the classical product
//! `prod_i prod_{r < a_i} (p lambda_i - r) / (a_i - r)`. Node order is fixed:
//! vertices first, then edge nodes (2D, per edge from the lower local vertex
//! to the higher), then interior nodes. That order is what ties local matrix
//! rows to global degrees of freedom everywhere else.

use crate::error::{Error, Result};

/// What a basis node is attached to; drives how it is shared across elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Sits on local vertex `i`.
    Vertex(usize),
    /// Sits on the local edge opposite vertex `edge`, at parameter `k / p`
    /// counted from the edge's lower-numbered local vertex.
    Edge { edge: usize, k: u32 },
    /// Interior to the element; never shared.
    Interior(usize),
}

/// Lagrange basis of one fixed degree on the reference interval or triangle.
#[derive(Debug, Clone)]
pub struct Basis {
    dim: u8,
    degree: u32,
    nodes: Vec<[u8; 3]>,
    kinds: Vec<NodeKind>,
}

impl Basis {
    pub fn new(dim: u8, degree: u32) -> Result<Self> {
        if !(1..=4).contains(&degree) {
            return Err(Error::UnsupportedDegree(degree));
        }
        let p = degree as u8;
        let mut nodes = Vec::new();
        let mut kinds = Vec::new();
        if dim == 1 {
            nodes.push([p, 0, 0]);
            kinds.push(NodeKind::Vertex(0));
            nodes.push([0, p, 0]);
            kinds.push(NodeKind::Vertex(1));
            for k in 1..p {
                nodes.push([p - k, k, 0]);
                kinds.push(NodeKind::Interior(k as usize - 1));
            }
        } else {
            for i in 0..3 {
                let mut a = [0u8; 3];
                a[i] = p;
                nodes.push(a);
                kinds.push(NodeKind::Vertex(i));
            }
            for edge in 0..3 {
                let (lo, hi) = crate::mesh::ElementInfo::facet_locals(edge);
                for k in 1..p {
                    let mut a = [0u8; 3];
                    a[lo] = p - k;
                    a[hi] = k;
                    nodes.push(a);
                    kinds.push(NodeKind::Edge { edge, k: k as u32 });
                }
            }
            let mut idx = 0;
            for a0 in (1..=p.saturating_sub(2)).rev() {
                for a1 in (1..=p - 1 - a0).rev() {
                    let a2 = p - a0 - a1;
                    if a2 >= 1 {
                        nodes.push([a0, a1, a2]);
                        kinds.push(NodeKind::Interior(idx));
                        idx += 1;
                    }
                }
            }
        }
        Ok(Basis { dim, degree, nodes, kinds })
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }
    pub fn degree(&self) -> u32 {
        self.degree
    }
    pub fn n_basis(&self) -> usize {
        self.nodes.len()
    }
    pub fn node_kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    /// Barycentric coordinates of node `i`.
    pub fn node_lambda(&self, i: usize) -> [f64; 3] {
        let p = self.degree as f64;
        let a = self.nodes[i];
        [a[0] as f64 / p, a[1] as f64 / p, a[2] as f64 / p]
    }

    pub fn eval(&self, i: usize, lambda: [f64; 3]) -> f64 {
        let a = self.nodes[i];
        let mut v = 1.0;
        for j in 0..self.dim as usize + 1 {
            v *= factor(self.degree, a[j], lambda[j]);
        }
        v
    }

    /// Partial derivatives with respect to the barycentric coordinates,
    /// treating them as independent.
    pub fn grad_lambda(&self, i: usize, lambda: [f64; 3]) -> [f64; 3] {
        let a = self.nodes[i];
        let n = self.dim as usize + 1;
        let mut out = [0.0; 3];
        for j in 0..n {
            let mut d = dfactor(self.degree, a[j], lambda[j]);
            for m in 0..n {
                if m != j {
                    d *= factor(self.degree, a[m], lambda[m]);
                }
            }
            out[j] = d;
        }
        out
    }

    pub fn eval_all(&self, lambda: [f64; 3], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.n_basis() {
            out.push(self.eval(i, lambda));
        }
    }
}

fn factor(p: u32, a: u8, t: f64) -> f64 {
    let mut v = 1.0;
    for r in 0..a as u32 {
        v *= (p as f64 * t - r as f64) / (a as u32 - r) as f64;
    }
    v
}

fn dfactor(p: u32, a: u8, t: f64) -> f64 {
    let mut sum = 0.0;
    for r in 0..a as u32 {
        let mut term = p as f64 / (a as u32 - r) as f64;
        for s in 0..a as u32 {
            if s != r {
                term *= (p as f64 * t - s as f64) / (a as u32 - s) as f64;
            }
        }
        sum += term;
    }
    sum
}

/// Gradients of the barycentric coordinate functions of a physical element,
/// one row per coordinate. Correct for either orientation of the element.
pub fn barycentric_gradients(dim: u8, coords: &[[f64; 2]; 3]) -> [[f64; 2]; 3] {
    if dim == 1 {
        let h = coords[1][0] - coords[0][0];
        [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]]
    } else {
        let (a, b, c) = (coords[0], coords[1], coords[2]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let g1 = [(c[1] - a[1]) / det, (a[0] - c[0]) / det];
        let g2 = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
        [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2]
    }
}

/// Physical gradient of basis function `i` at `lambda` on the element whose
/// barycentric gradients are `bg`.
pub fn phys_gradient(basis: &Basis, i: usize, lambda: [f64; 3], bg: &[[f64; 2]; 3]) -> [f64; 2] {
    let dl = basis.grad_lambda(i, lambda);
    let n = basis.dim() as usize + 1;
    let mut g = [0.0; 2];
    for j in 0..n {
        g[0] += dl[j] * bg[j][0];
        g[1] += dl[j] * bg[j][1];
    }
    g
}

/// Quadrature rule on the reference simplex: barycentric points and weights
/// summing to the reference measure (1 on the interval, 1/2 on the triangle).
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Highest polynomial order the rule constructors accept.
pub const MAX_QUAD_ORDER: u32 = 12;

// Gauss-Legendre nodes/weights on [0, 1], n = 1..=7, exact to order 2n-1.
const GL: [&[(f64, f64)]; 7] = [
    &[(0.5, 1.0)],
    &[
        (0.211324865405187118, 0.5),
        (0.788675134594812882, 0.5),
    ],
    &[
        (0.112701665379258311, 0.277777777777777778),
        (0.5, 0.444444444444444444),
        (0.887298334620741689, 0.277777777777777778),
    ],
    &[
        (0.069431844202973712, 0.173927422568726929),
        (0.330009478207571868, 0.326072577431273071),
        (0.669990521792428132, 0.326072577431273071),
        (0.930568155797026288, 0.173927422568726929),
    ],
    &[
        (0.046910077030668004, 0.118463442528094544),
        (0.230765344947158455, 0.239314335249683234),
        (0.5, 0.284444444444444444),
        (0.769234655052841545, 0.239314335249683234),
        (0.953089922969331996, 0.118463442528094544),
    ],
    &[
        (0.033765242898423986, 0.085662246189585173),
        (0.169395306766867743, 0.180380786524069304),
        (0.380690406958401546, 0.233956967286345524),
        (0.619309593041598454, 0.233956967286345524),
        (0.830604693233132257, 0.180380786524069304),
        (0.966234757101576014, 0.085662246189585173),
    ],
    &[
        (0.025446043828620738, 0.064742483084434847),
        (0.129234407200302780, 0.139852695744638334),
        (0.297077424311301417, 0.190915025252559472),
        (0.5, 0.208979591836734694),
        (0.702922575688698583, 0.190915025252559472),
        (0.870765592799697220, 0.139852695744638334),
        (0.974553956171379262, 0.064742483084434847),
    ],
];

impl Quadrature {
    /// A rule exact for polynomials up to `order` on the reference simplex.
    pub fn new(dim: u8, order: u32) -> Result<Self> {
        if order < 1 || order > MAX_QUAD_ORDER {
            return Err(Error::UnsupportedQuadrature(order));
        }
        if dim == 1 {
            let m = (order as usize + 2) / 2; // ceil((order + 1) / 2)
            let rule = GL[m - 1];
            Ok(Quadrature {
                points: rule.iter().map(|&(x, _)| [1.0 - x, x, 0.0]).collect(),
                weights: rule.iter().map(|&(_, w)| w).collect(),
            })
        } else {
            match order {
                1 => Ok(Quadrature {
                    points: vec![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
                    weights: vec![0.5],
                }),
                2 => Ok(Quadrature {
                    points: vec![[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]],
                    weights: vec![1.0 / 6.0; 3],
                }),
                _ => {
                    // collapsed tensor rule: (x, y) = (u (1 - v), v)
                    let m = (order as usize + 3) / 2; // ceil((order + 2) / 2)
                    let rule = GL[m - 1];
                    let mut points = Vec::with_capacity(m * m);
                    let mut weights = Vec::with_capacity(m * m);
                    for &(v, wv) in rule {
                        for &(u, wu) in rule {
                            let x = u * (1.0 - v);
                            let y = v;
                            points.push([1.0 - x - y, x, y]);
                            weights.push(wu * wv * (1.0 - v));
                        }
                    }
                    Ok(Quadrature { points, weights })
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Physical point of a barycentric coordinate on an element.
pub fn lambda_to_point(dim: u8, coords: &[[f64; 2]; 3], lambda: [f64; 3]) -> [f64; 2] {
    let n = dim as usize + 1;
    let mut x = [0.0; 2];
    for i in 0..n {
        x[0] += lambda[i] * coords[i][0];
        x[1] += lambda[i] * coords[i][1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_lambda(dim: u8, seed: &mut u64) -> [f64; 3] {
        let mut next = || {
            *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (*seed >> 11) as f64 / (1u64 << 53) as f64
        };
        if dim == 1 {
            let x = next();
            [1.0 - x, x, 0.0]
        } else {
            let (mut a, mut b) = (next(), next());
            if a + b > 1.0 {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            [1.0 - a - b, a, b]
        }
    }

    #[test]
    fn nodes_give_kronecker_delta() {
        for dim in [1u8, 2] {
            for p in 1..=4 {
                let b = Basis::new(dim, p).unwrap();
                for i in 0..b.n_basis() {
                    for j in 0..b.n_basis() {
                        let v = b.eval(i, b.node_lambda(j));
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!(
                            (v - want).abs() < 1e-12,
                            "dim {dim} p {p}: basis {i} at node {j} = {v}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let mut seed = 42u64;
        for dim in [1u8, 2] {
            for p in 1..=4 {
                let b = Basis::new(dim, p).unwrap();
                for _ in 0..20 {
                    let l = rand_lambda(dim, &mut seed);
                    let sum: f64 = (0..b.n_basis()).map(|i| b.eval(i, l)).sum();
                    assert!((sum - 1.0).abs() < 1e-12, "dim {dim} p {p}: sum {sum}");
                }
            }
        }
    }

    #[test]
    fn expected_basis_counts() {
        for (dim, p, n) in [(1u8, 1u32, 2usize), (1, 3, 4), (2, 1, 3), (2, 2, 6), (2, 3, 10), (2, 4, 15)] {
            assert_eq!(Basis::new(dim, p).unwrap().n_basis(), n);
        }
        assert!(Basis::new(2, 5).is_err());
        assert!(Basis::new(2, 0).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut seed = 7u64;
        let h = 1e-6;
        for dim in [1u8, 2] {
            for p in 1..=4 {
                let b = Basis::new(dim, p).unwrap();
                for i in 0..b.n_basis() {
                    let l = rand_lambda(dim, &mut seed);
                    let g = b.grad_lambda(i, l);
                    for j in 0..dim as usize + 1 {
                        let mut lp = l;
                        lp[j] += h;
                        let mut lm = l;
                        lm[j] -= h;
                        let fd = (b.eval(i, lp) - b.eval(i, lm)) / (2.0 * h);
                        assert!(
                            (g[j] - fd).abs() < 1e-5,
                            "dim {dim} p {p} basis {i} dlambda{j}: {} vs {fd}",
                            g[j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn physical_gradient_of_linear_function_is_exact() {
        // f(x, y) = 3x - 2y + 1 interpolated with p = 1 on a skewed triangle
        let coords = [[0.2, 0.1], [1.3, 0.4], [0.5, 1.2]];
        let b = Basis::new(2, 1).unwrap();
        let bg = barycentric_gradients(2, &coords);
        let f = |x: [f64; 2]| 3.0 * x[0] - 2.0 * x[1] + 1.0;
        let c: Vec<f64> = (0..3).map(|i| f(coords[i])).collect();
        let l = [0.3, 0.3, 0.4];
        let mut g = [0.0, 0.0];
        for i in 0..3 {
            let gi = phys_gradient(&b, i, l, &bg);
            g[0] += c[i] * gi[0];
            g[1] += c[i] * gi[1];
        }
        assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 2.0).abs() < 1e-12);
    }

    fn fact(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product::<f64>().max(1.0)
    }

    #[test]
    fn interval_rules_integrate_monomials() {
        for order in 1..=12u32 {
            let q = Quadrature::new(1, order).unwrap();
            for j in 0..=order {
                let got: f64 = q
                    .points
                    .iter()
                    .zip(&q.weights)
                    .map(|(l, w)| w * l[1].powi(j as i32))
                    .sum();
                let want = 1.0 / (j as f64 + 1.0);
                assert!((got - want).abs() < 1e-13, "order {order} monomial {j}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn triangle_rules_integrate_monomials() {
        // reference integral of x^a y^b over the unit triangle
        let exact = |a: u32, b: u32| fact(a) * fact(b) / fact(a + b + 2);
        for order in 1..=12u32 {
            let q = Quadrature::new(2, order).unwrap();
            for a in 0..=order {
                for b in 0..=(order - a) {
                    let got: f64 = q
                        .points
                        .iter()
                        .zip(&q.weights)
                        .map(|(l, w)| w * l[1].powi(a as i32) * l[2].powi(b as i32))
                        .sum();
                    let want = exact(a, b);
                    assert!(
                        (got - want).abs() < 1e-13 * want.max(1.0),
                        "order {order} x^{a} y^{b}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn quadrature_order_bounds() {
        assert!(Quadrature::new(2, 0).is_err());
        assert!(Quadrature::new(2, 13).is_err());
        assert!(Quadrature::new(1, 12).is_ok());
    }
}
