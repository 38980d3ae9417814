//! Small dense linear algebra: a row-major matrix, a cyclic Jacobi
//! eigenvalue solver for symmetric matrices and a Cholesky solver.
//!
//! Sizes here are desk scale (agents and dimensions in the tens to low
//! hundreds), so straightforward O(n^3) kernels are adequate.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally long rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * rhs`
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        self.matmul_into(rhs, &mut out);
        out
    }

    /// Writes `self * rhs` into `out`, overwriting it. Entries are
    /// accumulated in increasing column order of `self`, so the result does
    /// not depend on how rows are scheduled.
    pub fn matmul_into(&self, rhs: &Self, out: &mut Self) {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        assert_eq!((out.rows, out.cols), (self.rows, rhs.cols), "matmul output shape");
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            let mut first = true;
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == S::zero() {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                if first {
                    // seeding with the first product keeps `1.0 * v` bit-exact, signed zeros included
                    for (o, &r) in orow.iter_mut().zip(rrow) {
                        *o = a * r;
                    }
                    first = false;
                } else {
                    for (o, &r) in orow.iter_mut().zip(rrow) {
                        *o += a * r;
                    }
                }
            }
            if first {
                orow.iter_mut().for_each(|v| *v = S::zero());
            }
        }
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        self.row_iter().map(|r| crate::scalar::dot(r, v)).collect()
    }

    /// Column means, i.e. the network average `x̄` of a stacked state.
    pub fn column_means(&self) -> Vec<S> {
        let mut mean = vec![S::zero(); self.cols];
        for r in self.row_iter() {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = S::from_usize_lossy(self.rows);
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn frobenius_sq(&self) -> S {
        crate::scalar::norm_sq(&self.data)
    }

    /// `‖X − 1 x̄ᵀ‖_F²`
    pub fn deviation_from_mean_sq(&self) -> S {
        let mean = self.column_means();
        self.row_iter().map(|r| crate::scalar::dist_sq(r, &mean)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;

    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, sorted
/// ascending.
///
/// Sweeps stop once the off-diagonal mass is below `eps^2` times the
/// Frobenius norm, which gives eigenvalues to a few ulps of `‖A‖`.
pub fn symmetric_eigenvalues<S: Scalar>(a: &Matrix<S>) -> Result<Vec<S>> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension(format!("eigenvalues need a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    let n = a.rows();
    let mut m = a.clone();
    let scale = m.frobenius_sq();
    let tol = S::epsilon() * S::epsilon() * scale;
    for _sweep in 0..100 {
        let mut off = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off <= tol || off == S::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == S::zero() {
                    continue;
                }
                let two = S::lit(2.0);
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = {
                    let denom = theta.abs() + (theta * theta + S::one()).sqrt();
                    if theta < S::zero() { -S::one() / denom } else { S::one() / denom }
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                let tau = s / (S::one() + c);
                m[(p, p)] -= t * apq;
                m[(q, q)] += t * apq;
                m[(p, q)] = S::zero();
                m[(q, p)] = S::zero();
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[(r, p)];
                    let arq = m[(r, q)];
                    let new_rp = arp - s * (arq + tau * arp);
                    let new_rq = arq + s * (arp - tau * arq);
                    m[(r, p)] = new_rp;
                    m[(p, r)] = new_rp;
                    m[(r, q)] = new_rq;
                    m[(q, r)] = new_rq;
                }
            }
        }
    }
    let mut eig: Vec<S> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(eig)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<S: Scalar>(a: &Matrix<S>) -> Result<Matrix<S>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::Dimension("cholesky needs a square matrix".into()));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > S::zero()) {
            return Err(Error::Invalid("matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn spd_solve<S: Scalar>(a: &Matrix<S>, b: &[S]) -> Result<Vec<S>> {
    let l = cholesky(a)?;
    let n = b.len();
    if n != l.rows() {
        return Err(Error::Dimension(format!("rhs has {n} entries, matrix is {}x{}", l.rows(), l.cols())));
    }
    let mut y = vec![S::zero(); n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[(i, k)] * y[k];
        }
        y[i] = v / l[(i, i)];
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in (i + 1)..n {
            v -= l[(k, i)] * x[k];
        }
        x[i] = v / l[(i, i)];
    }
    Ok(x)
}
