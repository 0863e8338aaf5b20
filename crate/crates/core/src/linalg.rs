//! Small dense linear-algebra helpers shared by the estimator and the bounds.

use nalgebra::DVector;

use crate::{CMatrix, Error, RMatrix, Result, C64};

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order and eigenvectors permuted to match.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(matrix: &CMatrix) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.nrows() != matrix.ncols() {
            return Err(Error::invalid(format!(
                "eigen-decomposition needs a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let eig = matrix.clone().symmetric_eigen();
        let n = matrix.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvectors belonging to the `dim - signal_dim` smallest eigenvalues.
    pub fn noise_subspace(&self, signal_dim: usize) -> Result<CMatrix> {
        let n = self.dim();
        if signal_dim >= n {
            return Err(Error::invalid(format!(
                "signal dimension {signal_dim} leaves no noise subspace in dimension {n}"
            )));
        }
        Ok(self.vectors.columns(signal_dim, n - signal_dim).into_owned())
    }
}

/// Number of singular values above `rel_tol` times the largest one.
pub fn numerical_rank(matrix: &CMatrix, rel_tol: f64) -> Result<usize> {
    if matrix.is_empty() {
        return Err(Error::invalid("rank of an empty matrix"));
    }
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::invalid(format!("rank tolerance {rel_tol} not in (0, 1)")));
    }
    let sv = matrix.clone().singular_values();
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * largest).count())
}

/// Residual of the columns of `x` after projecting off the column space of
/// `matrix`, i.e. `(I - M M†) x`, with the pseudo-inverse truncated at `rel_tol`
/// of the leading singular value. Also returns the numerical rank of `matrix`.
///
/// The projection is applied twice against an orthonormal basis, which keeps
/// small residuals accurate when `x` lies close to the column space.
pub fn project_off(matrix: &CMatrix, x: &CMatrix, rel_tol: f64) -> (CMatrix, usize) {
    if matrix.ncols() == 0 {
        return (x.clone(), 0);
    }
    let svd = matrix.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let largest = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| largest > 0.0 && svd.singular_values[i] > rel_tol * largest)
        .collect();
    let basis = u.select_columns(keep.iter());
    let mut r = x - &basis * (basis.adjoint() * x);
    r -= &basis * (basis.adjoint() * &r);
    (r, keep.len())
}

/// `a ⊗ b` for column vectors; entry `m * len(b) + p` is `a[m] * b[p]`.
pub fn kron_vec(a: &[C64], b: &[C64]) -> DVector<C64> {
    DVector::from_iterator(
        a.len() * b.len(),
        a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)),
    )
}

/// Inverse of a symmetric positive-definite matrix, `None` when the Cholesky
/// factorisation fails or the reciprocal condition estimate drops below `rcond_min`.
pub fn invert_spd(matrix: &RMatrix, rcond_min: f64) -> Option<RMatrix> {
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(max > 0.0) || min <= rcond_min * max {
        return None;
    }
    let inv = sym.cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// Largest absolute entry of a real matrix.
pub fn max_abs(matrix: &RMatrix) -> f64 {
    matrix.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Largest entry modulus of a complex matrix.
pub fn max_modulus(matrix: &CMatrix) -> f64 {
    matrix.iter().fold(0.0, |acc, v| acc.max(v.norm()))
}
