//! Small dense helpers on top of nalgebra. Hot-loop products go through the
//! slice-based `matvec*` functions so the integrator never allocates matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `out = m * x`
pub fn matvec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.ncols(), x.len());
    debug_assert_eq!(m.nrows(), out.len());
    out.iter_mut().for_each(|o| *o = 0.0);
    matvec_add(m, x, out);
}

/// `out += m * x`
pub fn matvec_add(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = &m.as_slice()[j * rows..(j + 1) * rows];
        for (o, &mij) in out.iter_mut().zip(col) {
            *o += mij * xj;
        }
    }
}

/// `out += m^T * x`
pub fn matvec_t_add(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.nrows(), x.len());
    debug_assert_eq!(m.ncols(), out.len());
    let rows = m.nrows();
    for (j, o) in out.iter_mut().enumerate() {
        let col = &m.as_slice()[j * rows..(j + 1) * rows];
        *o += col.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Numerical rank with a relative singular-value cutoff `rel_tol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .collect()
}

/// Induced 2-norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}

/// Eigenvalues of a general real square matrix as `(re, im)` pairs.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect())
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Solves `A^T P + P A = -Q` through the vectorized (Kronecker) linear system
/// `(I (x) A^T + A^T (x) I) vec(P) = -vec(Q)`.
pub fn solve_continuous_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::dims("Lyapunov equation", n, q.nrows()));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let lhs = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Dense matrix exponential (Pade scaling and squaring, via nalgebra).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.exp()
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Builds a matrix from row vectors, checking they are rectangular.
pub fn from_rows(rows: &[Vec<f64>], context: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if let Some(bad) = rows.iter().find(|r| r.len() != nc) {
        return Err(Error::dims(context, nc, bad.len()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
