//! Mixing matrices and their contraction factor.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::scalar::Scalar;

/// Symmetric, nonnegative, doubly stochastic gossip matrix together with
/// `rho_w = ‖W − (1/n) 1 1ᵀ‖₂`.
#[derive(Clone, Debug, Serialize)]
pub struct MixingMatrix<S> {
    w: Matrix<S>,
    rho_w: S,
}

impl<S: Scalar> MixingMatrix<S> {
    /// Validates an explicit matrix and computes its contraction factor.
    pub fn from_dense(w: Matrix<S>) -> Result<Self> {
        let n = w.rows();
        if n == 0 || w.cols() != n {
            return Err(Error::Dimension(format!("mixing matrix must be square, got {}x{}", w.rows(), w.cols())));
        }
        if !w.is_symmetric() {
            return Err(Error::Invalid("mixing matrix is not symmetric".into()));
        }
        let tol = S::lit(1e-12);
        for i in 0..n {
            let row = w.row(i);
            if row.iter().any(|&v| v < S::zero() || !v.is_finite()) {
                return Err(Error::Invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: S = row.iter().copied().sum();
            if (sum - S::one()).abs() > tol {
                return Err(Error::Invalid(format!("row {i} sums to {sum}, not 1")));
            }
        }
        let rho_w = spectral_gap(&w)?;
        Ok(Self { w, rho_w })
    }

    /// Single-agent identity mixing.
    pub fn identity(n: usize) -> Self {
        Self { w: Matrix::identity(n), rho_w: if n == 1 { S::zero() } else { S::one() } }
    }

    /// Exact averaging `(1/n) 1 1ᵀ`.
    pub fn averaging(n: usize) -> Self {
        let v = S::one() / S::from_usize_lossy(n);
        Self { w: Matrix::from_fn(n, n, |_, _| v), rho_w: S::zero() }
    }

    pub fn n(&self) -> usize {
        self.w.rows()
    }

    pub fn matrix(&self) -> &Matrix<S> {
        &self.w
    }

    pub fn rho_w(&self) -> S {
        self.rho_w
    }

    /// `out = W x` for a stacked `n×p` state.
    pub fn mix_into(&self, x: &Matrix<S>, out: &mut Matrix<S>) {
        self.w.matmul_into(x, out);
    }

    pub fn mix(&self, x: &Matrix<S>) -> Matrix<S> {
        self.w.matmul(x)
    }
}

/// Metropolis–Hastings weights: `w_ij = 1 / (1 + max(deg i, deg j))` on edges,
/// self-weight absorbing the remainder of each row.
pub fn metropolis_weights<S: Scalar>(g: &Graph) -> Result<MixingMatrix<S>> {
    if !g.is_connected() {
        return Err(Error::Disconnected(String::new()));
    }
    let n = g.n();
    let deg = g.degrees();
    let mut w = Matrix::zeros(n, n);
    for (i, j) in g.edges() {
        let v = S::one() / S::from_usize_lossy(1 + deg[i].max(deg[j]));
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: S = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = S::one() - off;
    }
    MixingMatrix::from_dense(w)
}

/// `‖W − (1/n) 1 1ᵀ‖₂` via a full symmetric eigendecomposition.
pub fn spectral_gap<S: Scalar>(w: &Matrix<S>) -> Result<S> {
    let n = w.rows();
    let inv_n = S::one() / S::from_usize_lossy(n);
    let centered = Matrix::from_fn(n, n, |i, j| w[(i, j)] - inv_n);
    let eig = symmetric_eigenvalues(&centered)?;
    Ok(eig.iter().fold(S::zero(), |m, v| m.max(v.abs())))
}
