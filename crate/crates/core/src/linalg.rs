//! Dense and sparse linear algebra used by the assembly and solver layers.
//!
//! Dense matrices stay tiny here (transformation matrices, element matrices,
//! small direct solves), so a straightforward row-major implementation with
//! partial-pivoting LU is all that is needed. Large systems live in CSR form
//! and are solved iteratively with BiCGStab(l), optionally preconditioned by
//! Jacobi or ILU(0).

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// In-place LU factorization with partial pivoting; returns the row
    /// permutation.
    pub fn lu_factor(&mut self) -> Result<Vec<usize>> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..n {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < 1e-300 {
                return Err(Error::SingularMatrix(k));
            }
            if p != k {
                for j in 0..n {
                    self.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = self.get(k, k);
            for i in k + 1..n {
                let f = self.get(i, k) / pivot;
                self.set(i, k, f);
                for j in k + 1..n {
                    let v = self.get(i, j) - f * self.get(k, j);
                    self.set(i, j, v);
                }
            }
        }
        Ok(perm)
    }

    /// Solves `self * x = b` by LU factorization of a copy.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut lu = self.clone();
        let perm = lu.lu_factor()?;
        Ok(lu_solve_factored(&lu, &perm, b))
    }
}

pub fn lu_solve_factored(lu: &Matrix, perm: &[usize], b: &[f64]) -> Vec<f64> {
    let n = lu.rows();
    let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    for i in 1..n {
        for j in 0..i {
            x[i] -= lu.get(i, j) * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= lu.get(i, j) * x[j];
        }
        x[i] /= lu.get(i, i);
    }
    x
}

/// Triplet accumulator for sparse assembly.
#[derive(Debug, Clone)]
pub struct CooMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl CooMatrix {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        CooMatrix { n_rows, n_cols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, v: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        if v != 0.0 {
            self.entries.push((row as u32, col as u32, v));
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut entries = self.entries.clone();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut i = 0;
        while i < entries.len() {
            let (r, c, mut v) = entries[i];
            i += 1;
            while i < entries.len() && entries[i].0 == r && entries[i].1 == c {
                v += entries[i].2;
                i += 1;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r as usize + 1] = col_idx.len();
        }
        for r in 1..=self.n_rows {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        CsrMatrix { n_rows: self.n_rows, n_cols: self.n_cols, row_ptr, col_idx, values }
    }
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mat_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&(j as u32)) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, i)).collect()
    }

    pub fn residual_norm(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n_rows];
        self.mat_vec(x, &mut y);
        y.iter().zip(b).map(|(yi, bi)| (bi - yi) * (bi - yi)).sum::<f64>().sqrt()
    }
}

/// Symmetric diagonal equilibration: rewrites `A <- S A S` and `b <- S b` with
/// `s_i = 1 / sqrt(|a_ii|)` (rows whose diagonal is absent or zero keep
/// `s_i = 1`) and returns `s`. Solve the scaled system for `y`; then
/// `x_i = s_i * y_i` solves the original one. Coupled multi-field systems can
/// mix entry magnitudes across many orders — a short time step puts `1/tau` on
/// one diagonal block while fine elements put `1/h^2` on another — which
/// starves an incomplete factorization of usable pivots. Leveling every
/// diagonal to unit magnitude restores its effectiveness without changing the
/// solution.
pub fn equilibrate_symmetric(a: &mut CsrMatrix, b: &mut [f64]) -> Vec<f64> {
    debug_assert_eq!(a.n_rows, a.n_cols);
    let n = a.n_rows;
    let mut s = vec![1.0f64; n];
    for i in 0..n {
        let d = a.get(i, i).abs();
        if d > 0.0 {
            s[i] = 1.0 / d.sqrt();
        }
    }
    for i in 0..n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            a.values[k] *= s[i] * s[a.col_idx[k] as usize];
        }
        b[i] *= s[i];
    }
    s
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Preconditioner choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondKind {
    None,
    Diagonal,
    Ilu0,
}

impl std::str::FromStr for PrecondKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PrecondKind::None),
            "diagonal" | "jacobi" => Ok(PrecondKind::Diagonal),
            "ilu0" | "ilu" => Ok(PrecondKind::Ilu0),
            other => Err(Error::Config { line: 0, msg: format!("unknown preconditioner `{other}`") }),
        }
    }
}

/// A built preconditioner; `apply` computes an approximation of `A^-1 r`.
pub enum Precond {
    None,
    Diagonal(Vec<f64>),
    Ilu0 { lu: CsrMatrix, shifted_pivots: usize },
}

impl Precond {
    pub fn build(kind: PrecondKind, a: &CsrMatrix) -> Result<Precond> {
        match kind {
            PrecondKind::None => Ok(Precond::None),
            PrecondKind::Diagonal => {
                let d = a.diagonal();
                if let Some(i) = d.iter().position(|&x| x == 0.0) {
                    return Err(Error::SingularDiagonal(i));
                }
                Ok(Precond::Diagonal(d.into_iter().map(|x| 1.0 / x).collect()))
            }
            PrecondKind::Ilu0 => {
                let (lu, shifted_pivots) = ilu0_factor(a);
                Ok(Precond::Ilu0 { lu, shifted_pivots })
            }
        }
    }

    /// Number of diagonal entries that had to be shifted during ILU(0)
    /// factorization (0 for the other kinds).
    pub fn shifted_pivots(&self) -> usize {
        match self {
            Precond::Ilu0 { shifted_pivots, .. } => *shifted_pivots,
            _ => 0,
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut Vec<f64>) {
        match self {
            Precond::None => {
                z.clear();
                z.extend_from_slice(r);
            }
            Precond::Diagonal(dinv) => {
                z.clear();
                z.extend(r.iter().zip(dinv).map(|(ri, di)| ri * di));
            }
            Precond::Ilu0 { lu, .. } => {
                z.clear();
                z.extend_from_slice(r);
                // forward solve with unit-diagonal L
                for i in 0..lu.n_rows {
                    let mut s = z[i];
                    for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                        let j = lu.col_idx[k] as usize;
                        if j >= i {
                            break;
                        }
                        s -= lu.values[k] * z[j];
                    }
                    z[i] = s;
                }
                // backward solve with U
                for i in (0..lu.n_rows).rev() {
                    let mut s = z[i];
                    let mut diag = 1.0;
                    for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                        let j = lu.col_idx[k] as usize;
                        if j < i {
                            continue;
                        }
                        if j == i {
                            diag = lu.values[k];
                        } else {
                            s -= lu.values[k] * z[j];
                        }
                    }
                    z[i] = s / diag;
                }
            }
        }
    }
}

/// ILU(0): incomplete LU on the sparsity pattern of `a`. Zero or missing
/// pivots are replaced by a small shift and counted.
fn ilu0_factor(a: &CsrMatrix) -> (CsrMatrix, usize) {
    let mut lu = a.clone();
    let n = lu.n_rows;
    let mut shifted = 0usize;
    let scale = lu.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let shift = 1e-8 * scale;
    // ensure every row has a usable diagonal value
    let mut diag_pos = vec![usize::MAX; n];
    for i in 0..n {
        for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
            if lu.col_idx[k] as usize == i {
                diag_pos[i] = k;
            }
        }
    }
    for i in 0..n {
        let (row_lo, row_hi) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
        for kk in row_lo..row_hi {
            let k = lu.col_idx[kk] as usize;
            if k >= i {
                break;
            }
            let dk = diag_pos[k];
            let dval = if dk == usize::MAX { 0.0 } else { lu.values[dk] };
            let dval = if dval.abs() < shift {
                shifted += 1;
                if dval >= 0.0 {
                    shift
                } else {
                    -shift
                }
            } else {
                dval
            };
            let f = lu.values[kk] / dval;
            lu.values[kk] = f;
            // subtract f * row(k) on the existing pattern of row(i)
            let (k_lo, k_hi) = (lu.row_ptr[k], lu.row_ptr[k + 1]);
            for kj in k_lo..k_hi {
                let j = lu.col_idx[kj];
                if (j as usize) <= k {
                    continue;
                }
                if let Ok(pos) = lu.col_idx[row_lo..row_hi].binary_search(&j) {
                    lu.values[row_lo + pos] -= f * lu.values[kj];
                }
            }
        }
        // guard the diagonal of row i for later rows
        let di = diag_pos[i];
        if di != usize::MAX && lu.values[di].abs() < shift {
            lu.values[di] = if lu.values[di] >= 0.0 { shift } else { -shift };
            shifted += 1;
        }
    }
    (lu, shifted)
}

/// Iterative solver options.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative tolerance on the preconditioned residual.
    pub tol: f64,
    pub max_iter: usize,
    /// The `l` in BiCGStab(l).
    pub ell: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: 10_000, ell: 2 }
    }
}

/// Solver outcome; `residual` is the true unpreconditioned relative residual
/// at exit.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// BiCGStab(l) with optional left preconditioning. `x` holds the initial
/// guess on entry and the solution on success.
pub fn bicgstab_l(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    pre: &Precond,
    opt: &SolveOptions,
) -> Result<SolveStats> {
    let n = a.n_rows;
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let ell = opt.ell.max(1);
    let mut tmp = vec![0.0; n];
    let mut z = Vec::with_capacity(n);

    let apply = |v: &[f64], tmp: &mut Vec<f64>, z: &mut Vec<f64>| {
        a.mat_vec(v, tmp);
        pre.apply(tmp, z);
    };

    pre.apply(b, &mut z);
    let bnorm = norm2(&z);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let tol_abs = opt.tol * bnorm;

    a.mat_vec(x, &mut tmp);
    for i in 0..n {
        tmp[i] = b[i] - tmp[i];
    }
    pre.apply(&tmp, &mut z);
    let mut r: Vec<Vec<f64>> = vec![vec![0.0; n]; ell + 1];
    let mut u: Vec<Vec<f64>> = vec![vec![0.0; n]; ell + 1];
    r[0].copy_from_slice(&z);
    let mut rtilde = z.clone();

    let mut rho0 = 1.0f64;
    let mut alpha = 0.0f64;
    let mut omega = 1.0f64;
    let mut iters = 0usize;

    let finish = |x: &[f64], iters: usize| -> SolveStats {
        let bn = norm2(b).max(1e-300);
        SolveStats { iterations: iters, residual: a.residual_norm(x, b) / bn }
    };

    if norm2(&r[0]) <= tol_abs {
        return Ok(finish(x, 0));
    }

    // Reliable updates. The recurrences below track the residual only
    // approximately; on tough systems the tracked vector drifts from the
    // truth or grows without bound, and a recurrence scalar can degenerate.
    // In each of those cases — and before accepting convergence — recompute
    // the true preconditioned residual from `x`, restart the recurrences with
    // a fresh shadow vector, and carry on. A run of restarts that stops
    // making headway ends the solve instead of cycling forever.
    let mut best = norm2(&r[0]);
    let mut restart_floor = f64::INFINITY;
    let mut stalls = 0usize;
    let mut x_best = x.to_vec();
    let mut x_best_norm = f64::INFINITY;
    macro_rules! recheck_and_restart {
        () => {{
            a.mat_vec(x, &mut tmp);
            for i in 0..n {
                tmp[i] = b[i] - tmp[i];
            }
            pre.apply(&tmp, &mut z);
            let mut true_norm = norm2(&z);
            if true_norm <= tol_abs {
                return Ok(finish(x, iters));
            }
            if true_norm.is_finite() && true_norm < x_best_norm {
                x_best.copy_from_slice(x);
                x_best_norm = true_norm;
            } else {
                // the recurrences ran away; resume from the best iterate
                x.copy_from_slice(&x_best);
                a.mat_vec(x, &mut tmp);
                for i in 0..n {
                    tmp[i] = b[i] - tmp[i];
                }
                pre.apply(&tmp, &mut z);
                true_norm = norm2(&z);
            }
            if true_norm > 0.5 * restart_floor {
                stalls += 1;
            } else {
                stalls = 0;
            }
            restart_floor = restart_floor.min(true_norm);
            if stalls >= 12 {
                return Err(Error::SolverBreakdown {
                    iterations: iters,
                    residual: finish(x, iters).residual,
                });
            }
            for v in u.iter_mut() {
                v.iter_mut().for_each(|e| *e = 0.0);
            }
            r[0].copy_from_slice(&z);
            rtilde.copy_from_slice(&z);
            rho0 = 1.0;
            alpha = 0.0;
            omega = 1.0;
            best = true_norm;
        }};
    }

    'outer: while iters < opt.max_iter {
        rho0 = -omega * rho0;
        // BiCG part
        for j in 0..ell {
            let rho1 = dot(&r[j], &rtilde);
            if rho0 == 0.0 || !rho0.is_finite() {
                recheck_and_restart!();
                continue 'outer;
            }
            let beta = alpha * rho1 / rho0;
            rho0 = rho1;
            for i in 0..=j {
                for k in 0..n {
                    u[i][k] = r[i][k] - beta * u[i][k];
                }
            }
            apply(&u[j], &mut tmp, &mut z);
            u[j + 1].copy_from_slice(&z);
            let gamma = dot(&u[j + 1], &rtilde);
            if gamma == 0.0 || !gamma.is_finite() {
                recheck_and_restart!();
                continue 'outer;
            }
            alpha = rho0 / gamma;
            for i in 0..=j {
                let (ui1, ri) = (u[i + 1].clone(), &mut r[i]);
                axpy(-alpha, &ui1, ri);
            }
            apply(&r[j], &mut tmp, &mut z);
            r[j + 1].copy_from_slice(&z);
            axpy(alpha, &u[0], x);
            iters += 1;
            let cur = norm2(&r[0]);
            if cur <= tol_abs || !cur.is_finite() || cur > 1e3 * best.max(tol_abs) {
                recheck_and_restart!();
                continue 'outer;
            }
            best = best.min(cur);
            if iters >= opt.max_iter {
                break 'outer;
            }
        }
        // minimal-residual part (modified Gram-Schmidt)
        let mut tau = vec![vec![0.0f64; ell + 1]; ell + 1];
        let mut sigma = vec![0.0f64; ell + 1];
        let mut gamma_p = vec![0.0f64; ell + 1];
        for j in 1..=ell {
            for i in 1..j {
                let t = dot(&r[j], &r[i]) / sigma[i];
                tau[i][j] = t;
                let ri = r[i].clone();
                axpy(-t, &ri, &mut r[j]);
            }
            sigma[j] = dot(&r[j], &r[j]);
            if sigma[j] == 0.0 || !sigma[j].is_finite() {
                recheck_and_restart!();
                continue 'outer;
            }
            gamma_p[j] = dot(&r[0], &r[j]) / sigma[j];
        }
        let mut gamma = vec![0.0f64; ell + 1];
        let mut gamma_pp = vec![0.0f64; ell + 1];
        gamma[ell] = gamma_p[ell];
        omega = gamma[ell];
        for j in (1..ell).rev() {
            let mut s = gamma_p[j];
            for i in j + 1..=ell {
                s -= tau[j][i] * gamma[i];
            }
            gamma[j] = s;
        }
        for j in 1..ell {
            let mut s = gamma[j + 1];
            for i in j + 1..ell {
                s += tau[j][i] * gamma[i + 1];
            }
            gamma_pp[j] = s;
        }
        {
            let r0 = r[0].clone();
            axpy(gamma[1], &r0, x);
        }
        {
            let rl = r[ell].clone();
            axpy(-gamma_p[ell], &rl, &mut r[0]);
        }
        {
            let ul = u[ell].clone();
            axpy(-gamma[ell], &ul, &mut u[0]);
        }
        for j in 1..ell {
            let uj = u[j].clone();
            axpy(-gamma[j], &uj, &mut u[0]);
            let rj = r[j].clone();
            axpy(gamma_pp[j], &rj, x);
            axpy(-gamma_p[j], &rj, &mut r[0]);
        }
        let cur = norm2(&r[0]);
        if cur <= tol_abs || !cur.is_finite() || cur > 1e3 * best.max(tol_abs) {
            recheck_and_restart!();
            continue 'outer;
        }
        best = best.min(cur);
    }
    a.mat_vec(x, &mut tmp);
    for i in 0..n {
        tmp[i] = b[i] - tmp[i];
    }
    pre.apply(&tmp, &mut z);
    if !(norm2(&z) <= x_best_norm) {
        x.copy_from_slice(&x_best);
    }
    Err(Error::MaxIterations { iterations: iters, residual: finish(x, iters).residual })
}

/// Maximum system size accepted by `direct_lu`.
pub const DIRECT_MAX: usize = 2000;

/// Dense LU solve of a sparse system; only sensible for small systems and
/// guarded accordingly.
pub fn direct_lu(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.n_rows > DIRECT_MAX {
        return Err(Error::DirectTooLarge(a.n_rows, DIRECT_MAX));
    }
    let mut dense = Matrix::zeros(a.n_rows, a.n_cols);
    for i in 0..a.n_rows {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            dense.set(i, a.col_idx[k] as usize, a.values[k]);
        }
    }
    dense.solve(b)
}

/// Reverse Cuthill-McKee ordering of the symmetrized nonzero pattern.
/// Returns `perm` with `perm[new] = old`; relabeling rows and columns by it
/// concentrates the nonzeros near the diagonal, which is what makes the
/// banded factorization below affordable.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<u32> {
    let n = a.n_rows;
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.col_idx[k] as usize;
            if i != j {
                adj[i].push(j as u32);
                adj[j].push(i as u32);
            }
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let degree = |v: u32| adj[v as usize].len();

    // BFS from `start`, appending visited nodes to `order`, neighbors taken
    // in increasing-degree order. Returns the last node reached.
    let bfs = |start: u32, visited: &mut [bool], order: &mut Vec<u32>| -> u32 {
        let mut head = order.len();
        visited[start as usize] = true;
        order.push(start);
        let mut last = start;
        while head < order.len() {
            let v = order[head];
            head += 1;
            last = v;
            let mut next: Vec<u32> =
                adj[v as usize].iter().copied().filter(|&w| !visited[w as usize]).collect();
            next.sort_unstable_by_key(|&w| (degree(w), w));
            for w in next {
                if !visited[w as usize] {
                    visited[w as usize] = true;
                    order.push(w);
                }
            }
        }
        last
    };

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for s in 0..n as u32 {
        if visited[s as usize] {
            continue;
        }
        // two BFS sweeps approximate a pseudo-peripheral start for the component
        let mut probe_visited = visited.clone();
        let mut probe = Vec::new();
        let far = bfs(s, &mut probe_visited, &mut probe);
        bfs(far, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Banded LU with partial pivoting after a bandwidth-reducing reordering.
/// Exact to rounding, deterministic, and — for meshes whose reordered
/// bandwidth grows like the square root of the unknown count — far cheaper
/// than a dense factorization. Intended for coupled systems whose mixed
/// block scales defeat incomplete-factorization preconditioning at tight
/// tolerances.
pub fn solve_direct_banded(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(a.n_rows, a.n_cols);
    assert_eq!(b.len(), a.n_rows);
    let n = a.n_rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let perm = rcm_ordering(a);
    let mut inv = vec![0u32; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old as usize] = new as u32;
    }

    let mut kl = 0usize;
    let mut ku = 0usize;
    for i in 0..n {
        let pi = inv[i] as usize;
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let pj = inv[a.col_idx[k] as usize] as usize;
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
    }
    // column-major band storage with `kl` extra superdiagonals for pivoting
    // fill: entry (r, c) lives at ab[ldab*c + kl + ku + r - c]
    let ldab = 2 * kl + ku + 1;
    const BAND_BUDGET: usize = 200_000_000;
    if ldab.saturating_mul(n) > BAND_BUDGET {
        return Err(Error::DirectTooLarge(ldab.saturating_mul(n), BAND_BUDGET));
    }
    let mut ab = vec![0.0f64; ldab * n];
    for i in 0..n {
        let pi = inv[i] as usize;
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let pj = inv[a.col_idx[k] as usize] as usize;
            ab[ldab * pj + kl + ku + pi - pj] = a.values[k];
        }
    }

    let idx = |r: usize, c: usize| ldab * c + kl + ku + r - c;
    let mut ipiv = vec![0u32; n];
    for k in 0..n {
        let rmax = (k + kl).min(n - 1);
        let mut piv = k;
        let mut pmag = ab[idx(k, k)].abs();
        for r in k + 1..=rmax {
            let m = ab[idx(r, k)].abs();
            if m > pmag {
                pmag = m;
                piv = r;
            }
        }
        if pmag == 0.0 || !pmag.is_finite() {
            return Err(Error::SingularMatrix(k));
        }
        ipiv[k] = piv as u32;
        let cmax = (k + kl + ku).min(n - 1);
        if piv != k {
            // both rows lie inside the widened band for every column in range
            for c in k..=cmax {
                ab.swap(idx(k, c), idx(piv, c));
            }
        }
        let pivot = ab[idx(k, k)];
        for r in k + 1..=rmax {
            let l = ab[idx(r, k)] / pivot;
            ab[idx(r, k)] = l;
            if l != 0.0 {
                for c in k + 1..=cmax {
                    ab[idx(r, c)] -= l * ab[idx(k, c)];
                }
            }
        }
    }

    let mut y: Vec<f64> = (0..n).map(|i| b[perm[i] as usize]).collect();
    for k in 0..n {
        let piv = ipiv[k] as usize;
        if piv != k {
            y.swap(k, piv);
        }
        let rmax = (k + kl).min(n - 1);
        let yk = y[k];
        if yk != 0.0 {
            for r in k + 1..=rmax {
                y[r] -= ab[idx(r, k)] * yk;
            }
        }
    }
    for k in (0..n).rev() {
        let cmax = (k + kl + ku).min(n - 1);
        let mut s = y[k];
        for c in k + 1..=cmax {
            s -= ab[idx(k, c)] * y[c];
        }
        y[k] = s / ab[idx(k, k)];
    }

    let mut x = vec![0.0f64; n];
    for (new, &old) in perm.iter().enumerate() {
        x[old as usize] = y[new];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_lu_solves_and_detects_singularity() {
        let a = Matrix::from_rows(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 2.0]]);
        let xs = vec![1.0, -2.0, 0.5];
        let b = a.mat_vec(&xs);
        let x = a.solve(&b).unwrap();
        for (xi, si) in x.iter().zip(&xs) {
            assert!((xi - si).abs() < 1e-12);
        }
        let s = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(s.solve(&[1.0, 1.0]), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let c = a.matmul(&b);
        assert_eq!(c, Matrix::from_rows(&[&[2.0, 1.0], &[4.0, 3.0]]));
        assert_eq!(a.transpose(), Matrix::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]));
    }

    #[test]
    fn coo_merges_duplicates() {
        let mut coo = CooMatrix::new(3, 3);
        coo.push(0, 0, 1.0);
        coo.push(2, 1, 4.0);
        coo.push(0, 0, 2.0);
        coo.push(1, 2, 3.0);
        let csr = coo.to_csr();
        assert_eq!(csr.nnz(), 3);
        assert_eq!(csr.get(0, 0), 3.0);
        assert_eq!(csr.get(1, 2), 3.0);
        assert_eq!(csr.get(2, 1), 4.0);
        assert_eq!(csr.get(2, 2), 0.0);
    }

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 2.0);
            if i > 0 {
                coo.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                coo.push(i, i + 1, -1.0);
            }
        }
        coo.to_csr()
    }

    #[test]
    fn identity_converges_immediately() {
        let mut coo = CooMatrix::new(4, 4);
        for i in 0..4 {
            coo.push(i, i, 1.0);
        }
        let a = coo.to_csr();
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let mut x = vec![0.0; 4];
        let stats = bicgstab_l(&a, &b, &mut x, &Precond::None, &SolveOptions::default()).unwrap();
        assert!(stats.iterations <= 1, "took {} iterations", stats.iterations);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-10);
        }
    }

    #[test]
    fn bicgstab_solves_spd_system_with_each_preconditioner() {
        let n = 60;
        let a = laplace_1d(n);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        a.mat_vec(&xs, &mut b);
        for kind in [PrecondKind::None, PrecondKind::Diagonal, PrecondKind::Ilu0] {
            let pre = Precond::build(kind, &a).unwrap();
            let mut x = vec![0.0; n];
            let stats = bicgstab_l(&a, &b, &mut x, &pre, &SolveOptions { tol: 1e-12, ..Default::default() }).unwrap();
            assert!(stats.residual < 1e-9, "{kind:?}: residual {}", stats.residual);
            for (xi, si) in x.iter().zip(&xs) {
                assert!((xi - si).abs() < 1e-7, "{kind:?}");
            }
        }
    }

    #[test]
    fn ilu0_is_exact_on_tridiagonal() {
        // the tridiagonal pattern has no fill-in, so ILU(0) equals full LU
        let n = 25;
        let a = laplace_1d(n);
        let pre = Precond::build(PrecondKind::Ilu0, &a).unwrap();
        assert_eq!(pre.shifted_pivots(), 0);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut z = Vec::new();
        pre.apply(&b, &mut z);
        let direct = direct_lu(&a, &b).unwrap();
        for (zi, di) in z.iter().zip(&direct) {
            assert!((zi - di).abs() < 1e-10);
        }
    }

    #[test]
    fn nonsymmetric_system_converges() {
        // upwinded convection-diffusion
        let n = 80;
        let mut coo = CooMatrix::new(n, n);
        let peclet = 5.0;
        for i in 0..n {
            coo.push(i, i, 2.0 + peclet);
            if i > 0 {
                coo.push(i, i - 1, -1.0 - peclet);
            }
            if i + 1 < n {
                coo.push(i, i + 1, -1.0);
            }
        }
        let a = coo.to_csr();
        let xs: Vec<f64> = (0..n).map(|i| ((i * i) as f64 * 0.013).cos()).collect();
        let mut b = vec![0.0; n];
        a.mat_vec(&xs, &mut b);
        let pre = Precond::build(PrecondKind::Ilu0, &a).unwrap();
        let mut x = vec![0.0; n];
        let stats = bicgstab_l(&a, &b, &mut x, &pre, &SolveOptions { tol: 1e-12, ..Default::default() }).unwrap();
        assert!(stats.residual < 1e-9);
        for (xi, si) in x.iter().zip(&xs) {
            assert!((xi - si).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_diagonal_is_reported() {
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 1, 1.0);
        coo.push(1, 0, 1.0);
        let a = coo.to_csr();
        assert!(matches!(
            Precond::build(PrecondKind::Diagonal, &a),
            Err(Error::SingularDiagonal(_))
        ));
    }

    #[test]
    fn max_iterations_error_carries_residual() {
        let a = laplace_1d(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let err = bicgstab_l(
            &a,
            &b,
            &mut x,
            &Precond::None,
            &SolveOptions { tol: 1e-14, max_iter: 3, ell: 2 },
        )
        .unwrap_err();
        match err {
            Error::MaxIterations { iterations, residual } => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn direct_lu_respects_size_cap() {
        let a = laplace_1d(DIRECT_MAX + 1);
        let b = vec![1.0; DIRECT_MAX + 1];
        assert!(matches!(direct_lu(&a, &b), Err(Error::DirectTooLarge(_, _))));
    }

    #[test]
    fn warm_start_reduces_iterations() {
        let n = 120;
        let a = laplace_1d(n);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).sin()).collect();
        let mut b = vec![0.0; n];
        a.mat_vec(&xs, &mut b);
        let pre = Precond::build(PrecondKind::Diagonal, &a).unwrap();
        let opt = SolveOptions { tol: 1e-11, ..Default::default() };
        let mut cold = vec![0.0; n];
        let cold_stats = bicgstab_l(&a, &b, &mut cold, &pre, &opt).unwrap();
        let mut warm = xs.clone();
        for w in warm.iter_mut() {
            *w += 1e-8;
        }
        let warm_stats = bicgstab_l(&a, &b, &mut warm, &pre, &opt).unwrap();
        assert!(warm_stats.iterations < cold_stats.iterations);
    }
}
