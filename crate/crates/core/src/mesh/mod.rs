//! Single-compartment tetrahedral meshes.
//!
//! Coordinates are in micrometers. Every mesh built through [`TetMesh::new`]
//! is validated: indices in range, no degenerate elements, positive orientation
//! and a single connected component. Meshes derived by moving vertices
//! ([`TetMesh::with_vertices`]) keep the connectivity and may contain inverted
//! elements, which callers detect with [`TetMesh::inverted_count`].

mod tetgen;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use tetgen::{load_mesh, parse_ele, parse_node, save_mesh, write_ele, write_node};

pub type Vec3 = Vector3<f64>;

/// Elements with |signed volume| at or below this (µm³) are degenerate.
pub const VOLUME_EPS: f64 = 1e-12;

/// Connectivity shared between meshes that differ only in vertex positions.
#[derive(Debug, PartialEq, Eq)]
pub struct Topology {
    tets: Vec<[usize; 4]>,
    boundary_faces: Vec<[usize; 3]>,
    n_vertices: usize,
}

impl Topology {
    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn boundary_faces(&self) -> &[[usize; 3]] {
        &self.boundary_faces
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::with_capacity(self.tets.len() * 6);
        for t in &self.tets {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let (i, j) = (t[a].min(t[b]), t[a].max(t[b]));
                    edges.push((i, j));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n_vertices as u64).to_le_bytes());
        for t in &self.tets {
            for &i in t {
                h.update((i as u64).to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone)]
pub struct TetMesh {
    vertices: Vec<Vec3>,
    topology: Arc<Topology>,
}

pub fn signed_volume(p: [&Vec3; 4]) -> f64 {
    let a = p[1] - p[0];
    let b = p[2] - p[0];
    let c = p[3] - p[0];
    a.dot(&b.cross(&c)) / 6.0
}

impl TetMesh {
    /// Validates and canonicalizes a mesh: element orientation is flipped where
    /// needed so that all signed volumes are positive.
    pub fn new(vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>) -> Result<Self> {
        let n = vertices.len();
        if n < 4 {
            return Err(Error::InvalidMesh(format!("need at least 4 vertices, got {n}")));
        }
        if tets.is_empty() {
            return Err(Error::InvalidMesh("no tetrahedra".into()));
        }
        for (k, t) in tets.iter_mut().enumerate() {
            if let Some(&bad) = t.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidMesh(format!(
                    "tet {k} references vertex {bad}, only {n} vertices"
                )));
            }
            let mut s = *t;
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::DegenerateTet { tet: k, volume: 0.0 });
            }
            let vol = signed_volume([&vertices[t[0]], &vertices[t[1]], &vertices[t[2]], &vertices[t[3]]]);
            if vol.abs() <= VOLUME_EPS || !vol.is_finite() {
                return Err(Error::DegenerateTet { tet: k, volume: vol });
            }
            if vol < 0.0 {
                t.swap(2, 3);
            }
        }
        let components = count_components(n, &tets);
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        let boundary_faces = extract_boundary(&tets)?;
        Ok(TetMesh {
            vertices,
            topology: Arc::new(Topology { tets, boundary_faces, n_vertices: n }),
        })
    }

    /// Same connectivity, new vertex positions. No validity check is made.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Mismatch(format!(
                "{} vertices for a mesh with {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(TetMesh { vertices, topology: Arc::clone(&self.topology) })
    }

    /// Vertices placed on an existing connectivity. No validity check is made.
    pub fn from_topology(topology: Arc<Topology>, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != topology.n_vertices {
            return Err(Error::Mismatch(format!(
                "{} vertices for a connectivity with {}",
                vertices.len(),
                topology.n_vertices
            )));
        }
        Ok(TetMesh { vertices, topology })
    }

    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        TetMesh {
            vertices: self.vertices.iter().map(f).collect(),
            topology: Arc::clone(&self.topology),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.topology.tets
    }

    pub fn boundary_faces(&self) -> &[[usize; 3]] {
        &self.topology.boundary_faces
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.topology.tets.len()
    }

    pub fn same_connectivity(&self, other: &TetMesh) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology) || *self.topology == *other.topology
    }

    pub fn tet_vertices(&self, k: usize) -> [&Vec3; 4] {
        let t = &self.topology.tets[k];
        [&self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]], &self.vertices[t[3]]]
    }

    pub fn tet_volume(&self, k: usize) -> f64 {
        signed_volume(self.tet_vertices(k))
    }

    pub fn signed_volumes(&self) -> Vec<f64> {
        (0..self.n_tets()).map(|k| self.tet_volume(k)).collect()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_tets()).map(|k| self.tet_volume(k)).sum()
    }

    /// Number of elements whose signed volume is not above [`VOLUME_EPS`].
    pub fn inverted_count(&self) -> usize {
        (0..self.n_tets()).filter(|&k| !(self.tet_volume(k) > VOLUME_EPS)).count()
    }

    pub fn is_valid(&self) -> bool {
        self.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) && self.inverted_count() == 0
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bounding_box_center(&self) -> Vec3 {
        let (lo, hi) = self.bounding_box();
        (lo + hi) * 0.5
    }

    pub fn centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    /// Hash of vertex bit patterns plus connectivity.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.topology.content_hash());
        for v in &self.vertices {
            for c in v.iter() {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

fn count_components(n: usize, tets: &[[usize; 4]]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for t in tets {
        let r0 = find(&mut parent, t[0]);
        for &v in &t[1..] {
            let r = find(&mut parent, v);
            if r != r0 {
                parent[r] = r0;
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Faces of a positively oriented tet `[a, b, c, d]`, each wound so that its
/// normal points away from the opposite vertex.
pub(crate) fn tet_faces(t: &[usize; 4]) -> [[usize; 3]; 4] {
    let [a, b, c, d] = *t;
    [[b, c, d], [a, d, c], [a, b, d], [a, c, b]]
}

fn extract_boundary(tets: &[[usize; 4]]) -> Result<Vec<[usize; 3]>> {
    let mut seen: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::with_capacity(tets.len() * 2);
    for t in tets {
        for f in tet_faces(t) {
            let mut key = f;
            key.sort_unstable();
            let e = seen.entry(key).or_insert((0, f));
            e.0 += 1;
        }
    }
    let mut faces = Vec::new();
    for (key, (count, f)) in seen {
        match count {
            1 => faces.push((key, f)),
            2 => {}
            _ => {
                return Err(Error::InvalidMesh(format!(
                    "face {key:?} shared by {count} tetrahedra"
                )))
            }
        }
    }
    faces.sort_unstable_by_key(|(k, _)| *k);
    Ok(faces.into_iter().map(|(_, f)| f).collect())
}
