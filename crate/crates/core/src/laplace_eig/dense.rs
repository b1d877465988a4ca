use nalgebra::{DMatrix, DVector};

use super::Eigenpairs;
use crate::error::{Error, Result};
use crate::fem::FemMatrices;

/// All eigenpairs via Cholesky reduction `L⁻¹ S L⁻ᵀ y = λ y`, `v = L⁻ᵀ y`.
pub(super) fn solve_all(fem: &FemMatrices) -> Result<Eigenpairs> {
    let m = fem.mass.to_dense();
    let s = fem.stiffness.to_dense();
    let chol = m.cholesky().ok_or_else(|| Error::InvalidMesh("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let half = l.solve_lower_triangular(&s).expect("nonsingular Cholesky factor");
    let c = l.solve_lower_triangular(&half.transpose()).expect("nonsingular Cholesky factor");
    let c = (&c + c.transpose()) * 0.5;
    let dim = c.nrows();
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let y = DMatrix::from_fn(dim, order.len(), |r, k| eig.eigenvectors[(r, order[k])]);
    let vectors = l.transpose().solve_upper_triangular(&y).expect("nonsingular Cholesky factor");
    Ok(Eigenpairs { values, vectors })
}
