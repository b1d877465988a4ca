//! Truncated Laplace eigenbasis of the FEM discretization and the Bloch–Torrey
//! operators projected onto it.
//!
//! Solves `S v = λ M v` for the smallest eigenvalues. Eigenvectors are
//! M-orthonormal, sorted by ascending eigenvalue, and signed so that their
//! largest-magnitude entry is positive.

mod cache;
mod dense;
mod krylov;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FemMatrices, PhysicsParams};
use crate::mesh::TetMesh;
use crate::sparse::{rcm_ordering, ProfileLdl};

pub use cache::{basis_cache_key, decode_basis, encode_basis, BasisCache};

/// Residual bound `‖S v − λ M v‖ / ‖v‖` every returned pair must satisfy.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Above this many vertices `EigenSolver::Auto` uses the sparse solver.
pub const DENSE_LIMIT: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSolver {
    Auto,
    Dense,
    /// Shift-invert block Krylov with Rayleigh–Ritz restarts on a profile LDLᵀ.
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum Truncation {
    Count { n: usize },
    /// Keep eigenvalues `λ ≤ D0 (π / ℓ)²`.
    LengthScale { ell: f64 },
    /// Length scale of half the smallest bounding-box extent.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisOptions {
    pub truncation: Truncation,
    pub solver: EigenSolver,
    pub max_modes: usize,
    /// Grow the count until it no longer splits a cluster of (near) repeated
    /// eigenvalues.
    pub keep_clusters: bool,
}

impl Default for BasisOptions {
    fn default() -> Self {
        BasisOptions { truncation: Truncation::Geometric, solver: EigenSolver::Auto, max_modes: 200, keep_clusters: false }
    }
}

impl BasisOptions {
    pub fn count(n: usize) -> Self {
        BasisOptions { truncation: Truncation::Count { n }, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: DVector<f64>,
    /// V × n, M-orthonormal columns.
    pub vectors: DMatrix<f64>,
}

impl Eigenpairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn truncated(&self, n: usize) -> Eigenpairs {
        Eigenpairs { values: self.values.rows(0, n).into_owned(), vectors: self.vectors.columns(0, n).into_owned() }
    }
}

#[derive(Debug, Clone)]
pub struct LaplaceBasis {
    pub eigen: Eigenpairs,
    /// `Pᵀ J_d P`
    pub coord: [DMatrix<f64>; 3],
    /// `Pᵀ R P`
    pub relaxation: DMatrix<f64>,
    /// `∫ φ_n dΩ = Pᵀ w`
    pub moments: DVector<f64>,
}

impl LaplaceBasis {
    pub fn n_eig(&self) -> usize {
        self.eigen.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigen.values
    }

    pub fn coord_along(&self, dir: &nalgebra::Vector3<f64>) -> DMatrix<f64> {
        &self.coord[0] * dir.x + &self.coord[1] * dir.y + &self.coord[2] * dir.z
    }

    /// Same basis restricted to the first `n` modes.
    pub fn truncated(&self, n: usize) -> LaplaceBasis {
        LaplaceBasis {
            eigen: self.eigen.truncated(n),
            coord: self.coord.clone().map(|a| a.view((0, 0), (n, n)).into_owned()),
            relaxation: self.relaxation.view((0, 0), (n, n)).into_owned(),
            moments: self.moments.rows(0, n).into_owned(),
        }
    }
}

pub fn eigenvalue_cutoff(mesh: &TetMesh, params: &PhysicsParams, t: Truncation) -> Option<f64> {
    let ell = match t {
        Truncation::Count { .. } => return None,
        Truncation::LengthScale { ell } => ell,
        Truncation::Geometric => {
            let (lo, hi) = mesh.bounding_box();
            (hi - lo).min() / 2.0
        }
    };
    let k = std::f64::consts::PI / ell;
    Some(params.diffusivity.max() * k * k)
}

/// Smallest eigenpairs of `S v = λ M v`.
pub fn solve_eigenpairs(
    fem: &FemMatrices,
    wanted: Wanted,
    solver: EigenSolver,
    max_modes: usize,
    keep_clusters: bool,
) -> Result<Eigenpairs> {
    let v = fem.n();
    let solver = match solver {
        EigenSolver::Auto if v <= DENSE_LIMIT => EigenSolver::Dense,
        EigenSolver::Auto => EigenSolver::Krylov,
        s => s,
    };
    if let Wanted::Count(n) = wanted {
        if n > v {
            return Err(Error::InvalidParam(format!("n_eig = {n} exceeds {v} vertices")));
        }
        if n == 0 {
            return Err(Error::InvalidParam("n_eig must be at least 1".into()));
        }
    }
    let mut pairs = match solver {
        EigenSolver::Dense => {
            let all = dense::solve_all(fem)?;
            let n = match wanted {
                Wanted::Count(n) => n,
                Wanted::Below(c) => all.values.iter().filter(|&&l| l <= c).count().max(1),
            };
            let n = if keep_clusters { extend_over_cluster(&all.values, n) } else { n };
            all.truncated(n.min(max_modes.max(1)).min(v))
        }
        EigenSolver::Krylov | EigenSolver::Auto => {
            let n = match wanted {
                Wanted::Count(n) => n,
                Wanted::Below(c) => count_below(fem, c)?.max(1),
            };
            let n = n.min(max_modes.max(1)).min(v);
            let extra = if keep_clusters { 4 } else { 0 };
            let found = krylov::solve(fem, (n + extra).min(v), None, RESIDUAL_TOL)?;
            let n = if keep_clusters { extend_over_cluster(&found.values, n).min(found.len()) } else { n };
            found.truncated(n)
        }
    };
    normalize_signs(&mut pairs.vectors);
    Ok(pairs)
}

/// Krylov solve warm-started from an approximate basis, e.g. the eigenvectors
/// of a nearby mesh.
pub fn solve_eigenpairs_from(fem: &FemMatrices, start: &DMatrix<f64>, n: usize) -> Result<Eigenpairs> {
    if start.nrows() != fem.n() {
        return Err(Error::Mismatch("warm start has wrong number of rows".into()));
    }
    let mut pairs = krylov::solve(fem, n, Some(start), RESIDUAL_TOL)?;
    normalize_signs(&mut pairs.vectors);
    Ok(pairs)
}

#[derive(Debug, Clone, Copy)]
pub enum Wanted {
    Count(usize),
    Below(f64),
}

pub fn solve_basis(fem: &FemMatrices, mesh: &TetMesh, params: &PhysicsParams, opts: &BasisOptions) -> Result<LaplaceBasis> {
    let wanted = match opts.truncation {
        Truncation::Count { n } => Wanted::Count(n),
        t => Wanted::Below(eigenvalue_cutoff(mesh, params, t).expect("length-scale truncation")),
    };
    let pairs = solve_eigenpairs(fem, wanted, opts.solver, opts.max_modes, opts.keep_clusters)?;
    Ok(project_operators(fem, pairs))
}

/// `solve_basis` through an optional on-disk cache of eigenpairs.
pub fn solve_basis_cached(
    fem: &FemMatrices,
    mesh: &TetMesh,
    params: &PhysicsParams,
    opts: &BasisOptions,
    cache: Option<&BasisCache>,
) -> Result<LaplaceBasis> {
    let Some(cache) = cache else {
        return solve_basis(fem, mesh, params, opts);
    };
    let key = basis_cache_key(mesh, params, opts);
    if let Some(pairs) = cache.load(&key).filter(|p| p.vectors.nrows() == fem.n()) {
        return Ok(project_operators(fem, pairs));
    }
    let basis = solve_basis(fem, mesh, params, opts)?;
    cache.store(&key, &basis.eigen)?;
    Ok(basis)
}

/// Completes a basis by congruence with the sparse FEM matrices.
pub fn project_operators(fem: &FemMatrices, eigen: Eigenpairs) -> LaplaceBasis {
    let p = &eigen.vectors;
    let coord = [fem.coord[0].congruence(p), fem.coord[1].congruence(p), fem.coord[2].congruence(p)];
    let relaxation = if fem.relaxation.values().iter().all(|&v| v == 0.0) {
        DMatrix::zeros(p.ncols(), p.ncols())
    } else {
        fem.relaxation.congruence(p)
    };
    let w = DVector::from_vec(fem.mass.row_sums());
    let moments = p.transpose() * w;
    LaplaceBasis { eigen, coord, relaxation, moments }
}

/// `max_i ‖S v_i − λ_i M v_i‖ / ‖v_i‖`
pub fn max_residual(fem: &FemMatrices, pairs: &Eigenpairs) -> f64 {
    residuals(fem, pairs).into_iter().fold(0.0, f64::max)
}

pub fn residuals(fem: &FemMatrices, pairs: &Eigenpairs) -> Vec<f64> {
    let sv = fem.stiffness.mul_dense(&pairs.vectors);
    let mv = fem.mass.mul_dense(&pairs.vectors);
    (0..pairs.len())
        .map(|i| {
            let r = sv.column(i) - mv.column(i) * pairs.values[i];
            r.norm() / pairs.vectors.column(i).norm()
        })
        .collect()
}

/// Number of generalized eigenvalues strictly below `c`, from the inertia of
/// `S − c M`.
pub fn count_below(fem: &FemMatrices, c: f64) -> Result<usize> {
    let perm = rcm_ordering(fem.pattern());
    let f = ProfileLdl::<f64>::factor(&[(1.0, &fem.stiffness), (-c, &fem.mass)], &perm)?;
    Ok(f.negative_pivots())
}

fn extend_over_cluster(values: &DVector<f64>, mut n: usize) -> usize {
    let scale = values[values.len() - 1].abs().max(1e-300);
    while n < values.len() && (values[n] - values[n - 1]).abs() <= 1e-6 * scale.max(values[n - 1].abs()) {
        n += 1;
    }
    n
}

pub(crate) fn normalize_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0usize;
        for (i, x) in col.iter().enumerate() {
            // a small relative margin keeps the choice stable under roundoff
            if x.abs() > col[best].abs() * (1.0 + 1e-9) {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}
