//! Matrix-formalism dMRI signal and the signal CSV format.
//!
//! In the truncated eigenbasis the magnetization coefficients obey
//! `dν/dt = −K ν` with `K = L + T + iγ f(t) g (d·A)`. Each constant piece of
//! the PGSE profile is propagated with one matrix exponential and the signal is
//! `ν(T_echo)ᵀ moments`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::{expm, CMatrix, CVector};
use crate::fem::{assemble, PhysicsParams};
use crate::laplace_eig::{solve_basis, BasisOptions, LaplaceBasis};
use crate::mesh::{TetMesh, Vec3};
use crate::sequence::{GradientScheme, Measurement, PgseSequence};

pub use crate::expm::exp_propagate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Mf,
    Btpde,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Mf => "mf",
            Solver::Btpde => "btpde",
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Solver::Mf),
            "btpde" => Ok(Solver::Btpde),
            _ => Err(Error::InvalidParam(format!("unknown solver '{s}', expected mf or btpde"))),
        }
    }
}

/// Complex signal for every measurement of a scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSet {
    pub scheme: GradientScheme,
    pub values: Vec<Complex64>,
    /// b-value of each measurement (ms/µm²).
    pub b: Vec<f64>,
    pub solver: Solver,
}

impl SignalSet {
    pub fn new(scheme: GradientScheme, values: Vec<Complex64>, gamma: f64, solver: Solver) -> Self {
        assert_eq!(scheme.len(), values.len());
        let b = scheme.b_values(gamma);
        SignalSet { scheme, values, b, solver }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    /// Reference value of each sequence.
    pub fn references(&self) -> Vec<Complex64> {
        self.scheme.reference_indices().into_iter().map(|i| self.values[i]).collect()
    }

    /// `|S| / |S_ref|` with the reference of the measurement's own sequence.
    pub fn normalized(&self) -> Vec<f64> {
        let refs: Vec<f64> = self.references().iter().map(|r| r.norm()).collect();
        self.scheme.measurements.iter().zip(&self.values).map(|(m, v)| v.norm() / refs[m.seq]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let norm = self.normalized();
        for (i, m) in self.scheme.measurements.iter().enumerate() {
            let s = self.scheme.sequences[m.seq];
            let v = self.values[i];
            let cols = [
                s.delta,
                s.big_delta,
                m.g,
                self.b[i],
                m.direction.x,
                m.direction.y,
                m.direction.z,
                v.re,
                v.im,
                v.norm(),
                norm[i],
            ];
            write!(out, "{}", m.seq).unwrap();
            for c in cols {
                write!(out, ",{c:.16e}").unwrap();
            }
            writeln!(out, ",{}", self.solver.as_str()).unwrap();
        }
        out
    }

    /// Parses the CSV written by `to_csv`. The `solver` column may be absent
    /// (treated as `mf`). Echo times are taken as `Δ + δ`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let name = "signal csv";
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(name, 1, "empty file"))?;
        let header = header.trim();
        let with_solver = if header == CSV_HEADER {
            true
        } else if header == &CSV_HEADER[..CSV_HEADER.len() - ",solver".len()] {
            false
        } else {
            return Err(Error::parse(name, 1, "unexpected header"));
        };
        let ncols = if with_solver { 13 } else { 12 };
        let mut sequences: Vec<PgseSequence> = Vec::new();
        let mut ms = Vec::new();
        let mut values = Vec::new();
        let mut b = Vec::new();
        let mut solver = None;
        for (ln, line) in lines {
            let ln = ln + 1;
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != ncols {
                return Err(Error::parse(name, ln, format!("expected {ncols} columns, found {}", fields.len())));
            }
            let seq: usize = fields[0].parse().map_err(|_| Error::parse(name, ln, "bad seq_id"))?;
            let mut num = [0.0f64; 11];
            for (k, f) in fields[1..12].iter().enumerate() {
                num[k] = f.parse().map_err(|_| Error::parse(name, ln, format!("bad number '{f}'")))?;
                if !num[k].is_finite() {
                    return Err(Error::parse(name, ln, "non-finite value"));
                }
            }
            let row_solver = if with_solver { fields[12].parse::<Solver>()? } else { Solver::Mf };
            match solver {
                None => solver = Some(row_solver),
                Some(s) if s != row_solver => return Err(Error::parse(name, ln, "mixed solvers")),
                _ => {}
            }
            let [delta, big_delta, g, bv, dx, dy, dz, re, im, ..] = num;
            let sq = PgseSequence::new(delta, big_delta).map_err(|e| Error::parse(name, ln, e.to_string()))?;
            match seq.cmp(&sequences.len()) {
                std::cmp::Ordering::Less if sequences[seq] != sq => {
                    return Err(Error::parse(name, ln, "seq_id timing differs from earlier rows"));
                }
                std::cmp::Ordering::Less => {}
                std::cmp::Ordering::Equal => sequences.push(sq),
                std::cmp::Ordering::Greater => return Err(Error::parse(name, ln, "seq_id out of order")),
            }
            ms.push(Measurement { seq, direction: Vec3::new(dx, dy, dz), g });
            values.push(Complex64::new(re, im));
            b.push(bv);
        }
        if ms.is_empty() {
            return Err(Error::parse(name, 2, "no rows"));
        }
        let n = ms.len();
        let scheme = GradientScheme::new(sequences, ms)?;
        if scheme.len() != n {
            return Err(Error::InvalidParam("signal file lacks a g = 0 reference for some sequence".into()));
        }
        Ok(SignalSet { scheme, values, b, solver: solver.unwrap_or(Solver::Mf) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub const CSV_HEADER: &str = "seq_id,delta,Delta,g,b,dir_x,dir_y,dir_z,re,im,magnitude,normalized,solver";

/// Free-evolution operator `exp(−(L + T) t)`: elementwise when `T` is
/// diagonal, a real matrix exponential otherwise.
enum Free {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Free {
    fn apply(&self, nu: &CVector, t: f64) -> Result<CVector> {
        match self {
            Free::Diagonal(rate) => Ok(CVector::from_iterator(
                nu.len(),
                nu.iter().zip(rate.iter()).map(|(x, r)| x * (-r * t).exp()),
            )),
            Free::Full(k) => {
                let kc = k.map(|x| Complex64::new(x, 0.0));
                exp_propagate(&kc, t, nu)
            }
        }
    }
}

fn free_operator(basis: &LaplaceBasis) -> Free {
    let t = &basis.relaxation;
    let n = basis.n_eig();
    // uniform relaxation projects to a multiple of the identity up to roundoff
    let scale = t.diagonal().amax();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || t[(i, j)].abs() <= 1e-12 * scale));
    if diagonal {
        Free::Diagonal(DVector::from_fn(n, |i, _| basis.eigen.values[i] + t[(i, i)]))
    } else {
        let mut k = t.clone();
        for i in 0..n {
            k[(i, i)] += basis.eigen.values[i];
        }
        Free::Full(k)
    }
}

type PulseKey = (u64, u64, [u64; 3]);

fn pulse_key(delta: f64, g: f64, d: &Vec3) -> PulseKey {
    (delta.to_bits(), g.to_bits(), [d.x.to_bits(), d.y.to_bits(), d.z.to_bits()])
}

/// `exp(−(L + T + iγ g (d·A)) δ)`.
fn pulse_propagator(basis: &LaplaceBasis, params: &PhysicsParams, delta: f64, g: f64, d: &Vec3) -> Result<CMatrix> {
    let a = basis.coord_along(d);
    let n = basis.n_eig();
    let phase = params.gamma * g;
    let k = CMatrix::from_fn(n, n, |i, j| {
        let mut re = basis.relaxation[(i, j)];
        if i == j {
            re += basis.eigen.values[i];
        }
        Complex64::new(-re * delta, -phase * a[(i, j)] * delta)
    });
    expm(&k)
}

/// Matrix-formalism signal of every measurement.
pub fn simulate(basis: &LaplaceBasis, params: &PhysicsParams, scheme: &GradientScheme) -> Result<SignalSet> {
    params.validate()?;
    let n = basis.n_eig();
    if basis.moments.len() != n || basis.coord.iter().any(|a| a.shape() != (n, n)) {
        return Err(Error::Mismatch("basis operators do not match its eigenpairs".into()));
    }
    let free = free_operator(basis);
    let mut keys: Vec<(PulseKey, f64, f64, Vec3)> = Vec::new();
    for m in scheme.measurements.iter().filter(|m| !m.is_reference()) {
        let delta = scheme.sequences[m.seq].delta;
        let key = pulse_key(delta, m.g, &m.direction);
        if !keys.iter().any(|k| k.0 == key) {
            keys.push((key, delta, m.g, m.direction));
        }
    }
    let pulses: HashMap<PulseKey, CMatrix> = keys
        .par_iter()
        .map(|(key, delta, g, d)| pulse_propagator(basis, params, *delta, *g, d).map(|e| (*key, e)))
        .collect::<Result<_>>()?;
    let nu0 = basis.moments.map(|w| Complex64::new(params.spin_density * w, 0.0));
    let values = scheme
        .measurements
        .par_iter()
        .map(|m| {
            let seq = scheme.sequences[m.seq];
            let pulse = (!m.is_reference()).then(|| &pulses[&pulse_key(seq.delta, m.g, &m.direction)]);
            let mut nu = nu0.clone();
            for (len, f) in seq.intervals() {
                nu = match (f, pulse) {
                    (0, _) | (_, None) => free.apply(&nu, len)?,
                    (1, Some(e)) => e * &nu,
                    // the L, T and A blocks are real, so flipping the sign of
                    // the gradient conjugates the propagator
                    (_, Some(e)) => conj_mul(e, &nu),
                };
            }
            let s: Complex64 = nu.iter().zip(basis.moments.iter()).map(|(x, w)| x * w).sum();
            if !s.re.is_finite() || !s.im.is_finite() {
                return Err(Error::NonFinite(format!("signal for g = {} is not finite", m.g)));
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignalSet::new(scheme.clone(), values, params.gamma, Solver::Mf))
}

/// `conj(E) ν` without forming the conjugate matrix.
fn conj_mul(e: &CMatrix, nu: &CVector) -> CVector {
    let n = nu.len();
    let mut out = CVector::zeros(n);
    for (j, x) in nu.iter().enumerate() {
        for i in 0..n {
            out[i] += e[(i, j)].conj() * x;
        }
    }
    out
}

/// Assembles, solves the eigenproblem and simulates in one call.
pub fn simulate_mesh(
    mesh: &TetMesh,
    params: &PhysicsParams,
    opts: &BasisOptions,
    scheme: &GradientScheme,
) -> Result<(SignalSet, LaplaceBasis)> {
    let fem = assemble(mesh, params)?;
    let basis = solve_basis(&fem, mesh, params, opts)?;
    let signal = simulate(&basis, params, scheme)?;
    Ok((signal, basis))
}
