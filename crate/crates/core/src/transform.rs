//! Basis transformation matrices between an element and its descendants.
//!
//! Because the children produced by bisection are affine images of the parent,
//! a parent basis function restricted to a descendant is again a polynomial of
//! the same degree there and can be written exactly in the descendant's basis.
//! The matrix `C(s)` for a bisection path `s` holds those expansion
//! coefficients: column `j` of `C(s)` contains the values of all parent basis
//! functions at node `j` of the descendant, so that
//! `phi_i^parent = sum_j C(s)[i][j] phi_j^child` on the descendant, and a
//! coefficient vector restricts via `c_child = C(s)^T c_parent`.
//!
//! One-step matrices exist only for "left" and "right"; longer paths are
//! products, memoized process-wide keyed by (path, dimension, degree).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::basis::Basis;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::traverse::{RefinementSequence, Side};

/// Embeds child barycentric coordinates into the parent's.
pub fn child_to_parent_lambda(dim: u8, side: Side, mu: [f64; 3]) -> [f64; 3] {
    if dim == 1 {
        match side {
            Side::Left => [mu[0] + 0.5 * mu[1], 0.5 * mu[1], 0.0],
            Side::Right => [0.5 * mu[0], 0.5 * mu[0] + mu[1], 0.0],
        }
    } else {
        match side {
            Side::Left => [mu[0] + 0.5 * mu[2], 0.5 * mu[2], mu[1]],
            Side::Right => [0.5 * mu[2], mu[0] + 0.5 * mu[2], mu[1]],
        }
    }
}

/// Pushes a parent barycentric point one level down: which child contains it
/// (ties prefer the left) and its coordinates there.
pub fn parent_to_child_lambda(dim: u8, lambda: [f64; 3]) -> (Side, [f64; 3]) {
    if lambda[0] >= lambda[1] {
        let mu = if dim == 1 {
            [lambda[0] - lambda[1], 2.0 * lambda[1], 0.0]
        } else {
            [lambda[0] - lambda[1], lambda[2], 2.0 * lambda[1]]
        };
        (Side::Left, mu)
    } else {
        let mu = if dim == 1 {
            [2.0 * lambda[0], lambda[1] - lambda[0], 0.0]
        } else {
            [lambda[1] - lambda[0], lambda[2], 2.0 * lambda[0]]
        };
        (Side::Right, mu)
    }
}

#[derive(PartialEq, Eq, Hash, Clone, Copy)]
struct Key {
    bits: u64,
    len: u8,
    dim: u8,
    degree: u32,
}

struct Cache {
    map: Mutex<HashMap<Key, Arc<Matrix>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Soft bound on distinct cached paths; the cache resets when it is reached.
const CACHE_CAPACITY: usize = 100_000;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Cache {
        map: Mutex::new(HashMap::new()),
        hits: AtomicU64::new(0),
        misses: AtomicU64::new(0),
    })
}

/// Cache counters, for diagnostics output.
#[derive(Debug, Clone, Copy, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
}

pub fn cache_stats() -> CacheStats {
    let c = cache();
    CacheStats {
        hits: c.hits.load(Ordering::Relaxed),
        misses: c.misses.load(Ordering::Relaxed),
        entries: c.map.lock().unwrap().len(),
    }
}

pub fn reset_cache() {
    let c = cache();
    c.map.lock().unwrap().clear();
    c.hits.store(0, Ordering::Relaxed);
    c.misses.store(0, Ordering::Relaxed);
}

fn one_step(basis: &Basis, side: Side) -> Matrix {
    let n = basis.n_basis();
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        let lambda = child_to_parent_lambda(basis.dim(), side, basis.node_lambda(j));
        for i in 0..n {
            m.set(i, j, basis.eval(i, lambda));
        }
    }
    m
}

/// The transformation matrix for a bisection path, memoized.
pub fn transform_matrix(dim: u8, degree: u32, seq: &RefinementSequence) -> Result<Arc<Matrix>> {
    let c = cache();
    let (bits, len) = seq.key();
    let key = Key { bits, len, dim, degree };
    if let Some(m) = c.map.lock().unwrap().get(&key) {
        c.hits.fetch_add(1, Ordering::Relaxed);
        return Ok(Arc::clone(m));
    }
    c.misses.fetch_add(1, Ordering::Relaxed);
    let basis = Basis::new(dim, degree)?;
    let m = match seq.split_first() {
        None => Matrix::identity(basis.n_basis()),
        Some((side, rest)) => {
            let tail = transform_matrix(dim, degree, &rest)?;
            one_step(&basis, side).matmul(&tail)
        }
    };
    let arc = Arc::new(m);
    let mut map = c.map.lock().unwrap();
    if map.len() >= CACHE_CAPACITY {
        map.clear();
    }
    map.insert(key, Arc::clone(&arc));
    Ok(arc)
}

/// The matrix relating basis gradients across the same path. The bisection
/// children are affine images of the parent, so gradients combine with the
/// very same coefficients as values; the distinct entry point exists because
/// callers assembling gradient terms must not rely on that silently.
pub fn gradient_matrix(dim: u8, degree: u32, seq: &RefinementSequence) -> Result<Arc<Matrix>> {
    transform_matrix(dim, degree, seq)
}

/// Restricts a coefficient vector from an element to a descendant.
pub fn restrict_coefficients(c: &Arc<Matrix>, parent: &[f64]) -> Vec<f64> {
    let n = c.cols();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..c.rows() {
            s += c.get(i, j) * parent[i];
        }
        out[j] = s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{barycentric_gradients, phys_gradient};

    fn seq(steps: &[Side]) -> RefinementSequence {
        RefinementSequence::from_steps(steps).unwrap()
    }

    #[test]
    fn interval_linear_one_step_values() {
        let l = transform_matrix(1, 1, &seq(&[Side::Left])).unwrap();
        let r = transform_matrix(1, 1, &seq(&[Side::Right])).unwrap();
        let want_l = Matrix::from_rows(&[&[1.0, 0.5], &[0.0, 0.5]]);
        let want_r = Matrix::from_rows(&[&[0.5, 0.0], &[0.5, 1.0]]);
        assert!(l.max_abs_diff(&want_l) < 1e-15);
        assert!(r.max_abs_diff(&want_r) < 1e-15);
    }

    #[test]
    fn triangle_linear_one_step_values() {
        let l = transform_matrix(2, 1, &seq(&[Side::Left])).unwrap();
        let r = transform_matrix(2, 1, &seq(&[Side::Right])).unwrap();
        let want_l = Matrix::from_rows(&[&[1.0, 0.0, 0.5], &[0.0, 0.0, 0.5], &[0.0, 1.0, 0.0]]);
        let want_r = Matrix::from_rows(&[&[0.0, 0.0, 0.5], &[1.0, 0.0, 0.5], &[0.0, 1.0, 0.0]]);
        assert!(l.max_abs_diff(&want_l) < 1e-15);
        assert!(r.max_abs_diff(&want_r) < 1e-15);
    }

    #[test]
    fn empty_path_is_identity() {
        for dim in [1u8, 2] {
            for p in 1..=4 {
                let m = transform_matrix(dim, p, &RefinementSequence::empty()).unwrap();
                let n = Basis::new(dim, p).unwrap().n_basis();
                assert!(m.max_abs_diff(&Matrix::identity(n)) < 1e-15);
            }
        }
    }

    #[test]
    fn columns_sum_to_one() {
        for dim in [1u8, 2] {
            for p in 1..=4u32 {
                for s in [seq(&[Side::Left]), seq(&[Side::Right]), seq(&[Side::Left, Side::Right, Side::Right])] {
                    let m = transform_matrix(dim, p, &s).unwrap();
                    for j in 0..m.cols() {
                        let sum: f64 = (0..m.rows()).map(|i| m.get(i, j)).sum();
                        assert!((sum - 1.0).abs() < 1e-12, "dim {dim} p {p} col {j}: {sum}");
                    }
                }
            }
        }
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    fn rand_mu(dim: u8, s: &mut u64) -> [f64; 3] {
        if dim == 1 {
            let x = lcg(s);
            [1.0 - x, x, 0.0]
        } else {
            let (mut a, mut b) = (lcg(s), lcg(s));
            if a + b > 1.0 {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            [1.0 - a - b, a, b]
        }
    }

    #[test]
    fn restriction_reproduces_parent_function() {
        // coefficients restricted along a path reproduce the parent function
        // pointwise on the descendant
        let mut s = 12345u64;
        for dim in [1u8, 2] {
            for p in 1..=4u32 {
                let basis = Basis::new(dim, p).unwrap();
                let n = basis.n_basis();
                let coeffs: Vec<f64> = (0..n).map(|_| lcg(&mut s) * 2.0 - 1.0).collect();
                for path in [
                    seq(&[Side::Left]),
                    seq(&[Side::Right, Side::Left]),
                    seq(&[Side::Left, Side::Right, Side::Right, Side::Left]),
                ] {
                    let c = transform_matrix(dim, p, &path).unwrap();
                    let child_coeffs = restrict_coefficients(&c, &coeffs);
                    for _ in 0..5 {
                        let mu = rand_mu(dim, &mut s);
                        // map child point up through the whole path
                        let mut lambda = mu;
                        let steps: Vec<Side> = path.iter().collect();
                        for &side in steps.iter().rev() {
                            lambda = child_to_parent_lambda(dim, side, lambda);
                        }
                        let parent_val: f64 =
                            (0..n).map(|i| coeffs[i] * basis.eval(i, lambda)).sum();
                        let child_val: f64 =
                            (0..n).map(|j| child_coeffs[j] * basis.eval(j, mu)).sum();
                        assert!(
                            (parent_val - child_val).abs() < 1e-12,
                            "dim {dim} p {p} path {path}: {parent_val} vs {child_val}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn descent_inverts_embedding() {
        let mut s = 777u64;
        for dim in [1u8, 2] {
            for _ in 0..50 {
                let mu = rand_mu(dim, &mut s);
                for side in [Side::Left, Side::Right] {
                    let lambda = child_to_parent_lambda(dim, side, mu);
                    let (found, back) = parent_to_child_lambda(dim, lambda);
                    // interior points (no tie) must come back on the same side
                    if (lambda[0] - lambda[1]).abs() > 1e-12 {
                        assert_eq!(found, side);
                        for k in 0..3 {
                            assert!((back[k] - mu[k]).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matrix_is_consistent_with_geometry() {
        // restrict coefficients with the gradient matrix and compare physical
        // gradients computed on parent and child geometry at the same point
        let mut s = 31u64;
        let parent_coords = [[0.1, 0.2], [1.4, 0.3], [0.6, 1.1]];
        for p in 1..=4u32 {
            let basis = Basis::new(2, p).unwrap();
            let n = basis.n_basis();
            let coeffs: Vec<f64> = (0..n).map(|_| lcg(&mut s) * 2.0 - 1.0).collect();
            for side in [Side::Left, Side::Right] {
                let path = seq(&[side]);
                let c = gradient_matrix(2, p, &path).unwrap();
                let child_coeffs = restrict_coefficients(&c, &coeffs);
                let m = [
                    0.5 * (parent_coords[0][0] + parent_coords[1][0]),
                    0.5 * (parent_coords[0][1] + parent_coords[1][1]),
                ];
                let child_coords = match side {
                    Side::Left => [parent_coords[0], parent_coords[2], m],
                    Side::Right => [parent_coords[1], parent_coords[2], m],
                };
                let bg_parent = barycentric_gradients(2, &parent_coords);
                let bg_child = barycentric_gradients(2, &child_coords);
                for _ in 0..5 {
                    let mu = rand_mu(2, &mut s);
                    let lambda = child_to_parent_lambda(2, side, mu);
                    let mut gp = [0.0, 0.0];
                    let mut gc = [0.0, 0.0];
                    for i in 0..n {
                        let gi = phys_gradient(&basis, i, lambda, &bg_parent);
                        gp[0] += coeffs[i] * gi[0];
                        gp[1] += coeffs[i] * gi[1];
                        let ci = phys_gradient(&basis, i, mu, &bg_child);
                        gc[0] += child_coeffs[i] * ci[0];
                        gc[1] += child_coeffs[i] * ci[1];
                    }
                    assert!(
                        (gp[0] - gc[0]).abs() < 1e-10 && (gp[1] - gc[1]).abs() < 1e-10,
                        "p {p} side {side:?}: {gp:?} vs {gc:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn cache_reuses_entries() {
        // other tests share the process-wide cache, so only monotone
        // statements are safe here
        let path = seq(&[Side::Left, Side::Right, Side::Left]);
        let a = transform_matrix(2, 2, &path).unwrap();
        let before = cache_stats();
        let b = transform_matrix(2, 2, &path).unwrap();
        let after = cache_stats();
        assert!(Arc::ptr_eq(&a, &b));
        assert!(after.hits > before.hits);
        assert!(after.entries >= 1);
    }
}
