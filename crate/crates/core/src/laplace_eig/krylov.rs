use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Eigenpairs;
use crate::error::{Error, Result};
use crate::fem::FemMatrices;
use crate::sparse::{rcm_ordering, ProfileLdl};

const MAX_RESTARTS: usize = 60;
const DEPTH: usize = 3;

/// Lowest `n` eigenpairs by shift-invert block Krylov iteration.
///
/// Each cycle builds the M-orthonormal space `[X, A X, A² X, ...]` with
/// `A = (S + σM)⁻¹ M`, extracts Ritz pairs of the pencil `(S, M)` from it and
/// restarts from the lowest Ritz vectors. The block is wider than `n`, so
/// repeated eigenvalues up to that multiplicity are resolved.
pub(super) fn solve(fem: &FemMatrices, n: usize, start: Option<&DMatrix<f64>>, tol: f64) -> Result<Eigenpairs> {
    let v = fem.n();
    let block = (n + (n / 2).max(6)).min(v);
    let tr_s: f64 = (0..v).map(|i| fem.stiffness.get(i, i)).sum();
    let tr_m: f64 = (0..v).map(|i| fem.mass.get(i, i)).sum();
    let sigma = 1e-4 * tr_s / tr_m;
    let perm = rcm_ordering(fem.pattern());
    let factor = ProfileLdl::<f64>::factor(&[(1.0, &fem.stiffness), (sigma, &fem.mass)], &perm)?;

    let mut x = DMatrix::zeros(v, block);
    let mut filled = 0;
    if let Some(s) = start {
        for c in 0..s.ncols().min(block) {
            x.set_column(c, &s.column(c));
            filled += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for c in filled..block {
        for r in 0..v {
            x[(r, c)] = rng.gen::<f64>() - 0.5;
        }
    }

    let mut worst = f64::INFINITY;
    for iter in 0..MAX_RESTARTS {
        let mut basis = MBasis::new(fem, v, (block * (DEPTH + 1)).min(v));
        let mut frontier = Vec::new();
        for c in 0..x.ncols() {
            if let Some(k) = basis.push(x.column(c).into_owned()) {
                frontier.push(k);
            }
        }
        for _ in 0..DEPTH {
            if basis.len() >= v {
                break;
            }
            let mut next = Vec::new();
            for &k in &frontier {
                if basis.len() >= v {
                    break;
                }
                let mq = basis.mq.column(k).iter().copied().collect::<Vec<_>>();
                let y = DVector::from_vec(factor.solve(&mq));
                if let Some(j) = basis.push(y) {
                    next.push(j);
                }
            }
            frontier = next;
        }
        let k = basis.len();
        let q = basis.q.columns(0, k);
        let mq = basis.mq.columns(0, k);
        let sq = fem.stiffness.mul_dense(&q.into_owned());
        let h = q.transpose() * &sq;
        let h = (&h + h.transpose()) * 0.5;
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let keep = block.min(k);
        if keep < n {
            return Err(Error::EigenNonConvergence { max_residual: f64::INFINITY, iterations: iter });
        }
        let w = DMatrix::from_fn(k, keep, |r, c| eig.eigenvectors[(r, order[c])]);
        let theta: Vec<f64> = order.iter().take(keep).map(|&i| eig.eigenvalues[i]).collect();
        let u = q * &w;
        let su = &sq * &w;
        let mu = mq * &w;
        worst = 0.0;
        for i in 0..n {
            let r = su.column(i) - mu.column(i) * theta[i];
            worst = worst.max(r.norm() / u.column(i).norm());
        }
        if worst < tol {
            let values = DVector::from_iterator(n, theta.into_iter().take(n));
            return Ok(Eigenpairs { values, vectors: u.columns(0, n).into_owned() });
        }
        x = u;
    }
    Err(Error::EigenNonConvergence { max_residual: worst, iterations: MAX_RESTARTS })
}

/// Growing M-orthonormal basis with cached `M q` columns.
struct MBasis<'a> {
    fem: &'a FemMatrices,
    q: DMatrix<f64>,
    mq: DMatrix<f64>,
    len: usize,
}

impl<'a> MBasis<'a> {
    fn new(fem: &'a FemMatrices, rows: usize, cap: usize) -> Self {
        MBasis { fem, q: DMatrix::zeros(rows, cap), mq: DMatrix::zeros(rows, cap), len: 0 }
    }

    fn len(&self) -> usize {
        self.len
    }

    /// Orthogonalizes `y` against the basis (two passes) and appends it unless
    /// it is numerically dependent. Returns the new column index.
    fn push(&mut self, mut y: DVector<f64>) -> Option<usize> {
        if self.len == self.q.ncols() {
            return None;
        }
        let my0 = DVector::from_vec(self.fem.mass.mul_vec(y.as_slice()));
        let norm0 = y.dot(&my0).max(0.0).sqrt();
        if !(norm0 > 0.0) || !norm0.is_finite() {
            return None;
        }
        for _ in 0..2 {
            if self.len > 0 {
                let coeffs = self.mq.columns(0, self.len).transpose() * &y;
                y -= self.q.columns(0, self.len) * coeffs;
            }
        }
        let my = DVector::from_vec(self.fem.mass.mul_vec(y.as_slice()));
        let norm = y.dot(&my).max(0.0).sqrt();
        if norm < 1e-10 * norm0 {
            return None;
        }
        let k = self.len;
        self.q.set_column(k, &(y / norm));
        self.mq.set_column(k, &(my / norm));
        self.len += 1;
        Some(k)
    }
}
