//! Graph-Laplacian spectral codec for vertex positions.
//!
//! Coordinates are expanded in the eigenvectors of the combinatorial Laplacian
//! `L = D − A` of the tet-edge graph. A latent vector is a selection of those
//! coefficients; everything not selected stays frozen at a base value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace_eig::normalize_signs;
use crate::mesh::{TetMesh, Topology, Vec3};

pub const DEFAULT_N_COEFF: usize = 300;
pub const DEFAULT_LATENT_DIM: usize = 16;

/// `(eigenvalues, eigenvectors)` of the graph Laplacian, ascending.
pub fn graph_laplacian_spectrum(n: usize, edges: &[(usize, usize)]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut l = DMatrix::<f64>::zeros(n, n);
    for &(a, b) in edges {
        if a >= n || b >= n || a == b {
            return Err(Error::InvalidMesh(format!("bad edge ({a}, {b})")));
        }
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
    }
    let eig = l.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    normalize_signs(&mut vectors);
    let scale = values[n - 1].abs().max(1.0);
    let zeros = values.iter().filter(|v| v.abs() < 1e-9 * scale).count();
    if zeros > 1 {
        return Err(Error::Disconnected { components: zeros });
    }
    Ok((values, vectors))
}

/// Which coefficients `(mode, axis)` form the latent vector, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum LatentLayout {
    /// Modes 2, 3, … with x, y, z interleaved per mode, truncated to `dim`.
    Interleaved { dim: usize },
    /// Modes 2..=k+1 on every axis, axis-major: `3k` entries.
    PerAxis { k: usize },
    /// Explicit zero-based `(mode, axis)` list.
    Explicit { entries: Vec<(usize, usize)> },
}

impl Default for LatentLayout {
    fn default() -> Self {
        LatentLayout::Interleaved { dim: DEFAULT_LATENT_DIM }
    }
}

impl LatentLayout {
    pub fn entries(&self) -> Vec<(usize, usize)> {
        match self {
            LatentLayout::Interleaved { dim } => (0..*dim).map(|i| (1 + i / 3, i % 3)).collect(),
            LatentLayout::PerAxis { k } => (0..3).flat_map(|a| (1..=*k).map(move |m| (m, a))).collect(),
            LatentLayout::Explicit { entries } => entries.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralCodec {
    topology: Arc<Topology>,
    eigenvalues: DVector<f64>,
    /// V × V, orthonormal columns.
    phi: DMatrix<f64>,
    n_coeff: usize,
    latent: Vec<(usize, usize)>,
}

/// Result of decoding, with the inverted-tet count.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub mesh: TetMesh,
    pub inverted: usize,
}

impl Decoded {
    pub fn is_valid(&self) -> bool {
        self.inverted == 0
    }
}

impl SpectralCodec {
    pub fn build(mesh: &TetMesh, n_coeff: usize, layout: &LatentLayout) -> Result<Self> {
        let (eigenvalues, phi) = graph_laplacian_spectrum(mesh.n_vertices(), &mesh.topology().edges())?;
        Self::from_parts(Arc::clone(mesh.topology()), eigenvalues, phi, n_coeff, layout)
    }

    /// Builds from a precomputed spectrum, e.g. one read from the codec cache.
    pub fn from_parts(
        topology: Arc<Topology>,
        eigenvalues: DVector<f64>,
        phi: DMatrix<f64>,
        n_coeff: usize,
        layout: &LatentLayout,
    ) -> Result<Self> {
        let v = topology.n_vertices();
        if phi.shape() != (v, v) || eigenvalues.len() != v {
            return Err(Error::Mismatch("spectrum size does not match the connectivity".into()));
        }
        if n_coeff == 0 || n_coeff > v {
            return Err(Error::InvalidParam(format!("n_coeff = {n_coeff} must be in 1..={v}")));
        }
        let latent = layout.entries();
        if latent.len() > 3 * n_coeff {
            return Err(Error::InvalidParam(format!("latent dimension {} exceeds 3·n_coeff", latent.len())));
        }
        if let Some(&(m, a)) = latent.iter().find(|&&(m, a)| m >= n_coeff || a >= 3) {
            return Err(Error::InvalidParam(format!("latent entry (mode {}, axis {a}) is out of range", m + 1)));
        }
        let mut seen = latent.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != latent.len() {
            return Err(Error::InvalidParam("latent entries repeat".into()));
        }
        Ok(SpectralCodec { topology, eigenvalues, phi, n_coeff, latent })
    }

    pub fn n_coeff(&self) -> usize {
        self.n_coeff
    }

    pub fn latent_dim(&self) -> usize {
        self.latent.len()
    }

    pub fn latent_entries(&self) -> &[(usize, usize)] {
        &self.latent
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    /// Same spectrum with different truncation and latent selection.
    pub fn reconfigured(&self, n_coeff: usize, layout: &LatentLayout) -> Result<Self> {
        Self::from_parts(Arc::clone(&self.topology), self.eigenvalues.clone(), self.phi.clone(), n_coeff, layout)
    }

    fn check(&self, mesh: &TetMesh) -> Result<()> {
        if !Arc::ptr_eq(mesh.topology(), &self.topology) && **mesh.topology() != *self.topology {
            return Err(Error::Mismatch("mesh connectivity differs from the codec's".into()));
        }
        Ok(())
    }

    /// `n_coeff × 3` coefficients `Φ_nᵀ P`.
    pub fn encode(&self, mesh: &TetMesh) -> Result<DMatrix<f64>> {
        self.check(mesh)?;
        let p = DMatrix::from_fn(mesh.n_vertices(), 3, |i, a| mesh.vertices()[i][a]);
        Ok(self.phi.columns(0, self.n_coeff).transpose() * p)
    }

    /// `P = Φ_n C`; inverted tets are counted, not rejected.
    pub fn decode(&self, c: &DMatrix<f64>) -> Result<Decoded> {
        if c.shape() != (self.n_coeff, 3) {
            return Err(Error::Mismatch(format!("coefficients are {:?}, expected ({}, 3)", c.shape(), self.n_coeff)));
        }
        let p = self.phi.columns(0, self.n_coeff) * c;
        let vertices = (0..p.nrows()).map(|i| Vec3::new(p[(i, 0)], p[(i, 1)], p[(i, 2)])).collect();
        let mesh = TetMesh::from_topology(Arc::clone(&self.topology), vertices)?;
        let inverted = mesh.inverted_count();
        Ok(Decoded { mesh, inverted })
    }

    pub fn to_latent(&self, c: &DMatrix<f64>) -> Result<DVector<f64>> {
        if c.shape() != (self.n_coeff, 3) {
            return Err(Error::Mismatch("coefficient block has the wrong shape".into()));
        }
        Ok(DVector::from_iterator(self.latent.len(), self.latent.iter().map(|&(m, a)| c[(m, a)])))
    }

    pub fn from_latent(&self, z: &DVector<f64>, base: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.len() != self.latent.len() || base.shape() != (self.n_coeff, 3) {
            return Err(Error::Mismatch(format!("latent has {} entries, codec expects {}", z.len(), self.latent.len())));
        }
        let mut c = base.clone();
        for (&(m, a), &v) in self.latent.iter().zip(z.iter()) {
            c[(m, a)] = v;
        }
        Ok(c)
    }
}

/// Coefficients as CSV rows `mode,cx,cy,cz` with one-based modes.
pub fn coefficients_to_csv(c: &DMatrix<f64>) -> String {
    let mut out = String::from("mode,cx,cy,cz\n");
    for i in 0..c.nrows() {
        writeln!(out, "{},{:.16e},{:.16e},{:.16e}", i + 1, c[(i, 0)], c[(i, 1)], c[(i, 2)]).unwrap();
    }
    out
}

pub fn coefficients_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let name = "coefficient csv";
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "mode,cx,cy,cz" => {}
        _ => return Err(Error::parse(name, 1, "expected header mode,cx,cy,cz")),
    }
    let mut rows = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 {
            return Err(Error::parse(name, ln + 1, "expected 4 columns"));
        }
        let mode: usize = f[0].parse().map_err(|_| Error::parse(name, ln + 1, "bad mode"))?;
        if mode != rows.len() + 1 {
            return Err(Error::parse(name, ln + 1, "modes must be consecutive from 1"));
        }
        let mut r = [0.0f64; 3];
        for k in 0..3 {
            r[k] = f[k + 1].parse().map_err(|_| Error::parse(name, ln + 1, "bad number"))?;
            if !r[k].is_finite() {
                return Err(Error::parse(name, ln + 1, "non-finite coefficient"));
            }
        }
        rows.push(r);
    }
    if rows.is_empty() {
        return Err(Error::parse(name, 2, "no rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), 3, |i, a| rows[i][a]))
}

const CODEC_MAGIC: &[u8; 4] = b"DMRC";
const CODEC_FORMAT: u32 = 1;
const CODEC_HEADER: usize = 4 + 4 + 32 + 8;

pub fn encode_spectrum(key: &[u8; 32], values: &DVector<f64>, phi: &DMatrix<f64>) -> Vec<u8> {
    let v = values.len();
    let mut out = Vec::with_capacity(CODEC_HEADER + 8 * v * (v + 1));
    out.extend_from_slice(CODEC_MAGIC);
    out.extend_from_slice(&CODEC_FORMAT.to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&(v as u64).to_le_bytes());
    for x in values.iter().chain(phi.iter()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_spectrum(bytes: &[u8]) -> Result<([u8; 32], DVector<f64>, DMatrix<f64>)> {
    let bad = |msg: &str| Error::parse("codec cache", 0, msg);
    if bytes.len() < CODEC_HEADER {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != CODEC_MAGIC {
        return Err(bad("bad magic"));
    }
    if u32::from_le_bytes(bytes[4..8].try_into().unwrap()) != CODEC_FORMAT {
        return Err(bad("unsupported format version"));
    }
    let key: [u8; 32] = bytes[8..40].try_into().unwrap();
    let v = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
    let want = v.checked_add(1).and_then(|r| r.checked_mul(v)).and_then(|c| c.checked_mul(8));
    if want != Some((bytes.len() - CODEC_HEADER) as u64) {
        return Err(bad("payload size does not match header"));
    }
    let v = v as usize;
    let mut it = bytes[CODEC_HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let values = DVector::from_iterator(v, it.by_ref().take(v));
    let phi = DMatrix::from_iterator(v, v, it);
    if values.iter().chain(phi.iter()).any(|x| !x.is_finite()) {
        return Err(bad("non-finite entry"));
    }
    Ok((key, values, phi))
}

/// Spectra stored as `<hex connectivity hash>.codec`.
#[derive(Debug, Clone)]
pub struct CodecCache {
    dir: PathBuf,
}

impl CodecCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CodecCache { dir: dir.into() }
    }

    fn path(&self, key: &[u8; 32]) -> PathBuf {
        let hex: String = key.iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{hex}.codec"))
    }

    /// Codec for `mesh`, computing and storing the spectrum on a miss.
    pub fn codec(&self, mesh: &TetMesh, n_coeff: usize, layout: &LatentLayout) -> Result<SpectralCodec> {
        let key = mesh.topology().content_hash();
        let path = self.path(&key);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok((k, values, phi)) = decode_spectrum(&bytes) {
                if k == key && values.len() == mesh.n_vertices() {
                    return SpectralCodec::from_parts(Arc::clone(mesh.topology()), values, phi, n_coeff, layout);
                }
            }
        }
        let codec = SpectralCodec::build(mesh, n_coeff, layout)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        std::fs::write(&path, encode_spectrum(&key, &codec.eigenvalues, &codec.phi)).map_err(|e| Error::io(&path, e))?;
        Ok(codec)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
