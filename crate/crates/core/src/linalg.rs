//! Dense complex linear algebra: LU, Householder QR, Cholesky, one-sided
//! Jacobi SVD and the block orthonormalization used as a local preconditioner.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use thiserror::Error;

type C64 = Complex64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Condition numbers above this are reported as saturated.
pub const COND_SATURATION: f64 = 1e15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("exactly singular pivot at index {0}")]
    SingularPivot(usize),
    #[error("matrix is not positive definite (failed at index {0})")]
    NotPositiveDefinite(usize),
    #[error("least squares needs at least as many rows as columns, got {0}x{1}")]
    Underdetermined(usize, usize),
    #[error("rank-deficient least-squares problem at column {0}")]
    RankDeficient(usize),
    #[error("truncation threshold must lie in [0, 1), got {0}")]
    Threshold(f64),
}

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.concat() }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a == ZERO {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(l)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, x.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `x^H A y`.
    pub fn sesquilinear(&self, x: &[C64], y: &[C64]) -> C64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Copy of the block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `||A x - b|| / ||b||` (absolute when `b = 0`).
pub fn relative_residual(a: &CMatrix, x: &[C64], b: &[C64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<C64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm2(b);
    if nb > 0.0 {
        norm2(&r) / nb
    } else {
        norm2(&r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<C64>,
    /// Relative residual `||A x - b|| / ||b||`.
    pub residual_norm: f64,
    /// Spectral condition number, when the solver computed singular values.
    pub cond2: Option<f64>,
    pub rank_used: usize,
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &CMatrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::NotSquare(a.rows, a.cols));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[(i, k)].norm().total_cmp(&lu[(j, k)].norm()))
                .expect("non-empty range");
            if lu[(p, k)] == ZERO {
                return Err(LinalgError::SingularPivot(k));
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(p * n + j, k * n + j);
                }
                perm.swap(p, k);
            }
            let pivot = lu[(k, k)];
            let (upper, lower) = lu.data.split_at_mut((k + 1) * n);
            let row_k = &upper[k * n..(k + 1) * n];
            for row_i in lower.chunks_mut(n) {
                let f = row_i[k] / pivot;
                row_i[k] = f;
                if f == ZERO {
                    continue;
                }
                for j in k + 1..n {
                    row_i[j] -= f * row_k[j];
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.lu.rows;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: C64 = row[..i].iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: C64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }
}

pub fn lu_solve(a: &CMatrix, b: &[C64]) -> Result<SolveReport, LinalgError> {
    if b.len() != a.rows {
        return Err(LinalgError::Dimension(format!("rhs has {} entries for {} rows", b.len(), a.rows)));
    }
    let lu = Lu::factor(a)?;
    let solution = lu.solve(b);
    let residual_norm = relative_residual(a, &solution, b);
    Ok(SolveReport { solution, residual_norm, cond2: None, rank_used: a.rows })
}

/// Thin SVD `A = U diag(sigma) V^H`, singular values descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl Svd {
    /// sigma_max / sigma_min; `+inf` when sigma_min is zero.
    pub fn cond2(&self) -> f64 {
        match (self.sigma.first(), self.sigma.last()) {
            (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
            (Some(_), Some(_)) => f64::INFINITY,
            _ => 1.0,
        }
    }

    pub fn reconstruct(&self) -> CMatrix {
        let us = CMatrix::from_fn(self.u.rows, self.sigma.len(), |i, j| self.u[(i, j)] * self.sigma[j]);
        us.matmul(&self.v.adjoint())
    }
}

/// One-sided (Hestenes) Jacobi SVD on the columns of an `m x n` matrix, `m >= n`.
fn jacobi_tall(a: &CMatrix) -> Svd {
    let (m, n) = (a.rows, a.cols);
    // work column-major: cols[j] is column j
    let mut cols: Vec<Vec<C64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<C64>> = (0..n)
        .map(|j| {
            let mut e = vec![ZERO; n];
            e[j] = C64::new(1.0, 0.0);
            e
        })
        .collect();
    let eps = f64::EPSILON;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x.norm_sqr()).sum();
                let beta: f64 = cols[q].iter().map(|x| x.norm_sqr()).sum();
                let gamma: C64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if g == 0.0 || g <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // rotate (a_p, conj(phase) a_q) as a real pair
                let pc = phase.conj();
                for vecs in [&mut cols, &mut v] {
                    let (lo, hi) = vecs.split_at_mut(q);
                    let (xp, xq) = (&mut lo[p], &mut hi[0]);
                    for (x, y) in xp.iter_mut().zip(xq.iter_mut()) {
                        let yq = pc * *y;
                        let nx = c * *x - s * yq;
                        let ny = s * *x + c * yq;
                        *x = nx;
                        *y = ny;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let sigma: Vec<f64> = order.iter().map(|&(s, _)| s).collect();
    let u = CMatrix::from_fn(m, n, |i, jj| {
        let (s, j) = order[jj];
        if s > 0.0 {
            cols[j][i] / s
        } else {
            ZERO
        }
    });
    let vm = CMatrix::from_fn(n, n, |i, jj| v[order[jj].1][i]);
    Svd { u, sigma, v: vm }
}

/// Singular value decomposition of any matrix.
pub fn svd(a: &CMatrix) -> Svd {
    if a.rows >= a.cols {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.adjoint());
        Svd { u: t.v, sigma: t.sigma, v: t.u }
    }
}

/// Condition number and singular values.
#[derive(Clone, Debug, PartialEq)]
pub struct CondReport {
    pub cond2: f64,
    pub singular_values: Vec<f64>,
    /// `cond2 > COND_SATURATION` (or infinite).
    pub saturated: bool,
}

pub fn svd_cond(a: &CMatrix) -> CondReport {
    let s = svd(a);
    let cond2 = s.cond2();
    CondReport { cond2, saturated: !(cond2 <= COND_SATURATION), singular_values: s.sigma }
}

/// Minimum-norm least-squares solve dropping `sigma < rel_threshold * sigma_max`.
pub fn truncated_svd_solve(a: &CMatrix, b: &[C64], rel_threshold: f64) -> Result<SolveReport, LinalgError> {
    if !(0.0..1.0).contains(&rel_threshold) {
        return Err(LinalgError::Threshold(rel_threshold));
    }
    if b.len() != a.rows {
        return Err(LinalgError::Dimension(format!("rhs has {} entries for {} rows", b.len(), a.rows)));
    }
    let s = svd(a);
    let smax = s.sigma.first().copied().unwrap_or(0.0);
    let mut x = vec![ZERO; a.cols];
    let mut rank = 0;
    for (j, &sj) in s.sigma.iter().enumerate() {
        if sj <= 0.0 || sj < rel_threshold * smax {
            continue;
        }
        rank += 1;
        let coef: C64 = (0..a.rows).map(|i| s.u[(i, j)].conj() * b[i]).sum::<C64>() / sj;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += s.v[(i, j)] * coef;
        }
    }
    let residual_norm = relative_residual(a, &x, b);
    Ok(SolveReport { solution: x, residual_norm, cond2: Some(s.cond2()), rank_used: rank })
}

/// Householder QR least squares `min ||A x - b||` for full-column-rank `A`, `m >= n`.
pub fn qr_least_squares(a: &CMatrix, b: &[C64]) -> Result<SolveReport, LinalgError> {
    let (m, n) = (a.rows, a.cols);
    if m < n {
        return Err(LinalgError::Underdetermined(m, n));
    }
    if b.len() != m {
        return Err(LinalgError::Dimension(format!("rhs has {} entries for {m} rows", b.len())));
    }
    let mut r = a.clone();
    let mut y = b.to_vec();
    for k in 0..n {
        let norm: f64 = (k..m).map(|i| r[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(LinalgError::RankDeficient(k));
        }
        let x0 = r[(k, k)];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { C64::new(1.0, 0.0) };
        let alpha = -phase * norm;
        // v = x - alpha e_1, H = I - 2 v v^H / (v^H v)
        let mut v: Vec<C64> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: C64 = v.iter().enumerate().map(|(l, vl)| vl.conj() * r[(k + l, j)]).sum();
            let f = dot * (2.0 / vnorm2);
            for (l, vl) in v.iter().enumerate() {
                r[(k + l, j)] -= f * vl;
            }
        }
        let dot: C64 = v.iter().enumerate().map(|(l, vl)| vl.conj() * y[k + l]).sum();
        let f = dot * (2.0 / vnorm2);
        for (l, vl) in v.iter().enumerate() {
            y[k + l] -= f * vl;
        }
    }
    let mut x = vec![ZERO; n];
    for i in (0..n).rev() {
        let s: C64 = (i + 1..n).map(|j| r[(i, j)] * x[j]).sum();
        if r[(i, i)] == ZERO {
            return Err(LinalgError::RankDeficient(i));
        }
        x[i] = (y[i] - s) / r[(i, i)];
    }
    let residual_norm = relative_residual(a, &x, b);
    Ok(SolveReport { solution: x, residual_norm, cond2: None, rank_used: n })
}

/// Lower-triangular `L` with `A = L L^H` for Hermitian positive definite `A`.
pub fn cholesky(a: &CMatrix) -> Result<CMatrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.rows, a.cols));
    }
    let n = a.rows;
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)].re - (0..j).map(|p| l[(j, p)].norm_sqr()).sum::<f64>();
        if !(d > 0.0) {
            return Err(LinalgError::NotPositiveDefinite(j));
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in j + 1..n {
            let s: C64 = (0..j).map(|p| l[(i, p)] * l[(j, p)].conj()).sum();
            l[(i, j)] = (a[(i, j)] - s) / djj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix.
fn lower_inverse(l: &CMatrix) -> CMatrix {
    let n = l.rows;
    let mut inv = CMatrix::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = C64::new(1.0, 0.0) / l[(j, j)];
        for i in j + 1..n {
            let s: C64 = (j..i).map(|p| l[(i, p)] * inv[(p, j)]).sum();
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

/// Block-diagonal congruence `A' = T^H A T`, `b' = T^H b`, with
/// `T = blockdiag(L_e^{-H})` from the Cholesky factors `G_e = L_e L_e^H`.
#[derive(Clone, Debug)]
pub struct Orthonormalized {
    pub matrix: CMatrix,
    pub rhs: Vec<C64>,
    /// `(offset, T_e)` per block.
    pub blocks: Vec<(usize, CMatrix)>,
}

impl Orthonormalized {
    /// Maps coefficients of the transformed system back: `c = T c'`.
    pub fn map_back(&self, transformed: &[C64]) -> Vec<C64> {
        let mut c = vec![ZERO; transformed.len()];
        for (off, t) in &self.blocks {
            let n = t.rows;
            let local = t.mul_vec(&transformed[*off..off + n]);
            c[*off..off + n].copy_from_slice(&local);
        }
        c
    }
}

/// Applies the local orthonormalization; `grams[e]` is the Gram matrix of the
/// dofs `offsets[e] .. offsets[e] + grams[e].rows()`. Blocks must tile the system.
pub fn local_orthonormalize(
    matrix: &CMatrix,
    rhs: &[C64],
    offsets: &[usize],
    grams: &[CMatrix],
) -> Result<Orthonormalized, LinalgError> {
    let n = matrix.rows;
    if !matrix.is_square() || rhs.len() != n || offsets.len() != grams.len() {
        return Err(LinalgError::Dimension("system, offsets and Gram blocks disagree".into()));
    }
    let total: usize = grams.iter().map(|g| g.rows).sum();
    if total != n {
        return Err(LinalgError::Dimension(format!("Gram blocks cover {total} of {n} dofs")));
    }
    let mut blocks = Vec::with_capacity(grams.len());
    for (&off, g) in offsets.iter().zip(grams) {
        let l = cholesky(g).map_err(|e| match e {
            LinalgError::NotPositiveDefinite(i) => LinalgError::NotPositiveDefinite(off + i),
            other => other,
        })?;
        blocks.push((off, lower_inverse(&l).adjoint()));
    }
    // dense T is cheap at desk scale and keeps the congruence obviously right
    let mut t = CMatrix::zeros(n, n);
    for (off, te) in &blocks {
        for i in 0..te.rows {
            for j in 0..te.cols {
                t[(off + i, off + j)] = te[(i, j)];
            }
        }
    }
    let th = t.adjoint();
    let a2 = th.matmul(matrix).matmul(&t);
    let b2 = th.mul_vec(rhs);
    Ok(Orthonormalized { matrix: a2, rhs: b2, blocks })
}
