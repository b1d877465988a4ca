//! P1 finite-element matrices of the discretized Bloch–Torrey system
//!
//! ```text
//! M dξ/dt = -(S + Q + R + iγ (g·J)) ξ
//! ```
//!
//! over linear tetrahedra. Element integrals are exact for P1. With barycentric
//! exponents, `∫ λ1^a λ2^b λ3^c λ4^d = 6 V a!b!c!d! / (a+b+c+d+3)!`, so the mass
//! matrix is `V (1 + δ_ij) / 20` and the coordinate-weighted triple products are
//! `V/20`, `V/60` and `V/120` for the three index-coincidence cases.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TetMesh;
use crate::sparse::{CsrMatrix, Pattern};

/// Gyromagnetic ratio of water protons, 2.675e8 rad s⁻¹ T⁻¹.
pub const GAMMA_SI: f64 = 2.675e8;
/// The same in rad ms⁻¹ mT⁻¹, so that γ·g·x with g in mT/µm and x in µm is in rad/ms.
pub const GAMMA: f64 = GAMMA_SI * 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diffusivity {
    Isotropic(f64),
    Tensor([[f64; 3]; 3]),
}

impl Diffusivity {
    pub fn tensor(&self) -> Matrix3<f64> {
        match self {
            Diffusivity::Isotropic(d) => Matrix3::identity() * *d,
            Diffusivity::Tensor(t) => Matrix3::from_fn(|i, j| t[i][j]),
        }
    }

    /// Largest principal diffusivity.
    pub fn max(&self) -> f64 {
        match self {
            Diffusivity::Isotropic(d) => *d,
            Diffusivity::Tensor(_) => self.tensor().symmetric_eigen().eigenvalues.max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// µm²/ms
    pub diffusivity: Diffusivity,
    /// ms; `None` means no relaxation.
    pub t2: Option<f64>,
    /// µm/ms; only the impermeable case is supported.
    pub permeability: f64,
    pub spin_density: f64,
    /// rad ms⁻¹ mT⁻¹
    pub gamma: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            diffusivity: Diffusivity::Isotropic(2.0),
            t2: None,
            permeability: 0.0,
            spin_density: 1.0,
            gamma: GAMMA,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let d = self.diffusivity.tensor();
        if (d - d.transpose()).abs().max() > 1e-12 * d.abs().max() {
            return Err(Error::InvalidParam("diffusion tensor must be symmetric".into()));
        }
        if !(d.symmetric_eigen().eigenvalues.min() > 0.0) {
            return Err(Error::InvalidParam("diffusivity must be positive definite".into()));
        }
        if let Some(t2) = self.t2 {
            if !(t2 > 0.0) {
                return Err(Error::InvalidParam(format!("T2 = {t2} must be positive")));
            }
        }
        if self.permeability != 0.0 {
            return Err(Error::InvalidParam("only impermeable boundaries (permeability 0) are supported".into()));
        }
        if !(self.spin_density > 0.0) {
            return Err(Error::InvalidParam("spin density must be positive".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParam("gyromagnetic ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn relaxation_rate(&self) -> f64 {
        self.t2.map_or(0.0, |t| 1.0 / t)
    }
}

#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub flux: CsrMatrix,
    pub relaxation: CsrMatrix,
    /// Coordinate-weighted mass matrices `∫ x_d φ_i φ_j`.
    pub coord: [CsrMatrix; 3],
}

impl FemMatrices {
    pub fn n(&self) -> usize {
        self.mass.n()
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        self.mass.pattern()
    }

    /// `Σ_d dir_d J_d`
    pub fn coord_along(&self, dir: &Vector3<f64>) -> CsrMatrix {
        CsrMatrix::linear_combination(&[(dir.x, &self.coord[0]), (dir.y, &self.coord[1]), (dir.z, &self.coord[2])])
    }

    /// Dumps each matrix as `<dir>/<name>.mtx`.
    pub fn dump_matrix_market(&self, dir: &Path) -> Result<()> {
        let named = [
            ("M", &self.mass),
            ("S", &self.stiffness),
            ("Q", &self.flux),
            ("R", &self.relaxation),
            ("Jx", &self.coord[0]),
            ("Jy", &self.coord[1]),
            ("Jz", &self.coord[2]),
        ];
        for (name, m) in named {
            let p = dir.join(format!("{name}.mtx"));
            std::fs::write(&p, m.to_matrix_market()).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Gradients of the four barycentric coordinates (columns) and the signed volume.
pub(crate) fn p1_gradients(p: [&Vector3<f64>; 4]) -> Option<(Matrix3x4<f64>, f64)> {
    let jac = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let vol = jac.determinant() / 6.0;
    let inv = jac.try_inverse()?;
    // rows of inv are ∇λ1..∇λ3
    let mut g = Matrix3x4::zeros();
    for k in 0..3 {
        let row = inv.row(k).transpose();
        g.set_column(k + 1, &row);
    }
    let g0 = -(g.column(1) + g.column(2) + g.column(3));
    g.set_column(0, &g0);
    Some((g, vol))
}

pub fn assemble(mesh: &TetMesh, params: &PhysicsParams) -> Result<FemMatrices> {
    params.validate()?;
    let pattern = Arc::new(Pattern::from_edges(mesh.n_vertices(), &mesh.topology().edges()));
    let dt = params.diffusivity.tensor();
    let mut mass = CsrMatrix::zeros(Arc::clone(&pattern));
    let mut stiffness = CsrMatrix::zeros(Arc::clone(&pattern));
    let mut coord = [
        CsrMatrix::zeros(Arc::clone(&pattern)),
        CsrMatrix::zeros(Arc::clone(&pattern)),
        CsrMatrix::zeros(Arc::clone(&pattern)),
    ];
    for (k, t) in mesh.tets().iter().enumerate() {
        let pts = mesh.tet_vertices(k);
        let (grad, vol) = p1_gradients(pts).ok_or(Error::DegenerateTet { tet: k, volume: 0.0 })?;
        if !(vol > 0.0) {
            return Err(Error::DegenerateTet { tet: k, volume: vol });
        }
        let dg = dt * grad;
        for a in 0..4 {
            for b in 0..4 {
                let (i, j) = (t[a], t[b]);
                let m = if a == b { vol / 10.0 } else { vol / 20.0 };
                mass.add(i, j, m);
                stiffness.add(i, j, vol * grad.column(a).dot(&dg.column(b)));
                for (d, cm) in coord.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for c in 0..4 {
                        let w = match (a == b, a == c, b == c) {
                            (true, true, _) => 1.0 / 20.0,
                            (true, false, _) | (false, true, _) | (false, _, true) => 1.0 / 60.0,
                            _ => 1.0 / 120.0,
                        };
                        s += w * pts[c][d];
                    }
                    cm.add(i, j, vol * s);
                }
            }
        }
    }
    let flux = CsrMatrix::zeros(Arc::clone(&pattern));
    let relaxation = mass.scaled(params.relaxation_rate());
    Ok(FemMatrices { mass, stiffness, flux, relaxation, coord })
}

/// `w_k = ∫ φ_k dΩ`, the row sums of the mass matrix.
pub fn signal_weights(mesh: &TetMesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.n_vertices()];
    for (k, t) in mesh.tets().iter().enumerate() {
        let q = mesh.tet_volume(k) / 4.0;
        for &i in t {
            w[i] += q;
        }
    }
    w
}
