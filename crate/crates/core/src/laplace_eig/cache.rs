//! On-disk cache of eigenpairs keyed by mesh content and physics parameters.
//!
//! Layout (little endian): magic `DMRB`, format `u32`, 32-byte key,
//! `u64` rows, `u64` modes, `modes` eigenvalues, then column-major vectors.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use super::{BasisOptions, Eigenpairs};
use crate::error::{Error, Result};
use crate::fem::PhysicsParams;
use crate::mesh::TetMesh;

const MAGIC: &[u8; 4] = b"DMRB";
const FORMAT: u32 = 1;
const HEADER: usize = 4 + 4 + 32 + 8 + 8;

pub fn basis_cache_key(mesh: &TetMesh, params: &PhysicsParams, opts: &BasisOptions) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(mesh.content_hash());
    h.update(serde_json::to_vec(params).expect("params serialize"));
    h.update(serde_json::to_vec(opts).expect("options serialize"));
    h.finalize().into()
}

pub fn encode_basis(key: &[u8; 32], pairs: &Eigenpairs) -> Vec<u8> {
    let (rows, modes) = pairs.vectors.shape();
    let mut out = Vec::with_capacity(HEADER + 8 * modes * (rows + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT.to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(modes as u64).to_le_bytes());
    for v in pairs.values.iter().chain(pairs.vectors.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a cache blob, returning its key and eigenpairs.
pub fn decode_basis(bytes: &[u8]) -> Result<([u8; 32], Eigenpairs)> {
    let bad = |msg: &str| Error::parse("basis cache", 0, msg);
    if bytes.len() < HEADER {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let format = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if format != FORMAT {
        return Err(bad("unsupported format version"));
    }
    let key: [u8; 32] = bytes[8..40].try_into().unwrap();
    let rows = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
    let modes = u64::from_le_bytes(bytes[48..56].try_into().unwrap());
    let count = rows
        .checked_add(1)
        .and_then(|r| r.checked_mul(modes))
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| bad("size overflow"))?;
    if (bytes.len() - HEADER) as u64 != count || modes > rows {
        return Err(bad("payload size does not match header"));
    }
    let (rows, modes) = (rows as usize, modes as usize);
    let mut vals = bytes[HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let values = DVector::from_iterator(modes, vals.by_ref().take(modes));
    let vectors = DMatrix::from_iterator(rows, modes, vals);
    if values.iter().chain(vectors.iter()).any(|v| !v.is_finite()) {
        return Err(bad("non-finite entry"));
    }
    Ok((key, Eigenpairs { values, vectors }))
}

/// Directory of `<hex key>.basis` files.
#[derive(Debug, Clone)]
pub struct BasisCache {
    dir: PathBuf,
}

impl BasisCache {
    /// Environment variable naming the cache directory.
    pub const ENV: &'static str = "DMRIRECON_CACHE_DIR";

    pub fn new(dir: impl Into<PathBuf>) -> Self {
        BasisCache { dir: dir.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(Self::ENV).map(|d| BasisCache::new(PathBuf::from(d)))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &[u8; 32]) -> PathBuf {
        let hex: String = key.iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{hex}.basis"))
    }

    /// Cached pairs, or `None` if absent or unreadable.
    pub fn load(&self, key: &[u8; 32]) -> Option<Eigenpairs> {
        let bytes = std::fs::read(self.path(key)).ok()?;
        match decode_basis(&bytes) {
            Ok((k, pairs)) if &k == key => Some(pairs),
            _ => None,
        }
    }

    pub fn store(&self, key: &[u8; 32], pairs: &Eigenpairs) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let p = self.path(key);
        std::fs::write(&p, encode_basis(key, pairs)).map_err(|e| Error::io(&p, e))
    }
}
