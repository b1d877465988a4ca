//! PGSE gradient sequences, direction sets and measurement schemes.

use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Diffusion times used by the ablation presets (ms).
pub const PRESET_DIFFUSION_TIMES: [f64; 4] = [5.0, 20.0, 45.0, 95.0];
/// Diffusion times of the default three-sequence protocol (ms).
pub const DEFAULT_DIFFUSION_TIMES: [f64; 3] = [5.0, 20.0, 45.0];
pub const DEFAULT_PULSE: f64 = 1.0;
/// Default b-values (ms/µm²).
pub const DEFAULT_BVALUES: [f64; 1] = [1.0];

const UNIT_TOL: f64 = 1e-12;
/// Directions read from files are renormalized if within this of unit length.
const UNIT_READ_TOL: f64 = 1e-9;

/// Pulsed-gradient spin echo: `f = +1` on `[0, δ]`, `−1` on `[Δ, Δ+δ]`, zero
/// elsewhere up to the echo time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgseSequence {
    pub delta: f64,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    #[serde(rename = "T_echo")]
    pub t_echo: f64,
}

impl PgseSequence {
    /// Sequence with its echo at the end of the second pulse.
    pub fn new(delta: f64, big_delta: f64) -> Result<Self> {
        Self::with_echo(delta, big_delta, big_delta + delta)
    }

    pub fn with_echo(delta: f64, big_delta: f64, t_echo: f64) -> Result<Self> {
        let s = PgseSequence { delta, big_delta, t_echo };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let PgseSequence { delta, big_delta, t_echo } = *self;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParam(format!("pulse duration must be positive, got {delta}")));
        }
        if !(big_delta >= delta && big_delta.is_finite()) {
            return Err(Error::InvalidParam(format!("need δ ≤ Δ, got δ = {delta}, Δ = {big_delta}")));
        }
        if !(t_echo >= big_delta + delta && t_echo.is_finite()) {
            return Err(Error::InvalidParam(format!("echo time {t_echo} is before the end of the second pulse")));
        }
        Ok(())
    }

    /// Constant pieces `(duration, f)` of the profile, zero-length ones dropped.
    pub fn intervals(&self) -> Vec<(f64, i8)> {
        let d = self.delta;
        let pieces = [
            (d, 1),
            (self.big_delta - d, 0),
            (d, -1),
            (self.t_echo - self.big_delta - d, 0),
        ];
        pieces.into_iter().filter(|&(len, _)| len > 0.0).collect()
    }

    pub fn breakpoints(&self) -> [f64; 5] {
        [0.0, self.delta, self.big_delta, self.big_delta + self.delta, self.t_echo]
    }

    pub fn profile(&self, t: f64) -> i8 {
        if (0.0..self.delta).contains(&t) {
            1
        } else if (self.big_delta..self.big_delta + self.delta).contains(&t) {
            -1
        } else {
            0
        }
    }

    /// `γ² g² δ² (Δ − δ/3)`.
    pub fn b_value(&self, g: f64, gamma: f64) -> f64 {
        let q = gamma * g * self.delta;
        q * q * (self.big_delta - self.delta / 3.0)
    }

    /// Amplitude giving b-value `b`.
    pub fn amplitude_for_b(&self, b: f64, gamma: f64) -> f64 {
        (b / (self.big_delta - self.delta / 3.0)).sqrt() / (gamma * self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Index into `GradientScheme::sequences`.
    pub seq: usize,
    pub direction: Vec3,
    pub g: f64,
}

impl Measurement {
    pub fn is_reference(&self) -> bool {
        self.g == 0.0
    }
}

/// Flat list of measurements over a set of sequences. Every sequence has a
/// `g = 0` reference measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientScheme {
    pub sequences: Vec<PgseSequence>,
    pub measurements: Vec<Measurement>,
}

impl GradientScheme {
    /// Validates and appends a reference for each sequence that lacks one.
    pub fn new(sequences: Vec<PgseSequence>, measurements: Vec<Measurement>) -> Result<Self> {
        let mut s = GradientScheme { sequences, measurements };
        for (k, seq) in s.sequences.iter().enumerate() {
            seq.validate().map_err(|e| Error::InvalidParam(format!("sequence {k}: {e}")))?;
        }
        for (i, m) in s.measurements.iter().enumerate() {
            if m.seq >= s.sequences.len() {
                return Err(Error::InvalidParam(format!("measurement {i} refers to missing sequence {}", m.seq)));
            }
            if !(m.g >= 0.0 && m.g.is_finite()) {
                return Err(Error::InvalidParam(format!("measurement {i}: amplitude must be ≥ 0, got {}", m.g)));
            }
            if !m.direction.iter().all(|c| c.is_finite()) || (m.direction.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidParam(format!("measurement {i}: direction is not a unit vector")));
            }
        }
        for k in 0..s.sequences.len() {
            if !s.measurements.iter().any(|m| m.seq == k && m.is_reference()) {
                s.measurements.push(Measurement { seq: k, direction: Vec3::x(), g: 0.0 });
            }
        }
        Ok(s)
    }

    /// All combinations of sequences, directions and amplitudes, sequence-major,
    /// each sequence led by its reference.
    pub fn product(sequences: &[PgseSequence], directions: &[Vec3], amplitudes: &[f64]) -> Result<Self> {
        Self::build(sequences, directions, |_| amplitudes.to_vec())
    }

    /// Like `product`, with the amplitude for each sequence chosen to hit the
    /// given b-values.
    pub fn from_bvalues(sequences: &[PgseSequence], directions: &[Vec3], bvalues: &[f64], gamma: f64) -> Result<Self> {
        if let Some(b) = bvalues.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidParam(format!("b-value must be ≥ 0, got {b}")));
        }
        Self::build(sequences, directions, |s| bvalues.iter().map(|&b| s.amplitude_for_b(b, gamma)).collect())
    }

    fn build(sequences: &[PgseSequence], directions: &[Vec3], amps: impl Fn(&PgseSequence) -> Vec<f64>) -> Result<Self> {
        let mut ms = Vec::new();
        for (k, s) in sequences.iter().enumerate() {
            ms.push(Measurement { seq: k, direction: Vec3::x(), g: 0.0 });
            for g in amps(s).into_iter().filter(|&g| g != 0.0) {
                for d in directions {
                    ms.push(Measurement { seq: k, direction: *d, g });
                }
            }
        }
        Self::new(sequences.to_vec(), ms)
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Index of the reference measurement of each sequence.
    pub fn reference_indices(&self) -> Vec<usize> {
        (0..self.sequences.len())
            .map(|k| self.measurements.iter().position(|m| m.seq == k && m.is_reference()).expect("reference exists"))
            .collect()
    }

    pub fn b_values(&self, gamma: f64) -> Vec<f64> {
        self.measurements.iter().map(|m| self.sequences[m.seq].b_value(m.g, gamma)).collect()
    }

    /// Same scheme with every direction mapped through `r`.
    pub fn rotated(&self, r: &Matrix3<f64>) -> GradientScheme {
        let mut s = self.clone();
        for m in &mut s.measurements {
            m.direction = (r * m.direction).normalize();
        }
        s
    }

    pub fn to_json(&self) -> String {
        let file = SchemeFile {
            measurements: self
                .measurements
                .iter()
                .map(|m| {
                    let s = self.sequences[m.seq];
                    SchemeEntry {
                        direction: [m.direction.x, m.direction.y, m.direction.z],
                        g: m.g,
                        delta: s.delta,
                        big_delta: s.big_delta,
                        t_echo: Some(s.t_echo),
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("scheme serializes")
    }

    /// Parses a scheme; sequences are numbered in order of first appearance.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(text)?;
        let mut sequences: Vec<PgseSequence> = Vec::new();
        let mut ms = Vec::with_capacity(file.measurements.len());
        for (i, e) in file.measurements.iter().enumerate() {
            let t_echo = e.t_echo.unwrap_or(e.big_delta + e.delta);
            let seq = PgseSequence::with_echo(e.delta, e.big_delta, t_echo)
                .map_err(|err| Error::InvalidParam(format!("measurement {i}: {err}")))?;
            let k = match sequences.iter().position(|s| *s == seq) {
                Some(k) => k,
                None => {
                    sequences.push(seq);
                    sequences.len() - 1
                }
            };
            let d = Vec3::from(e.direction);
            let n = d.norm();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_READ_TOL {
                return Err(Error::InvalidParam(format!("measurement {i}: direction is not a unit vector")));
            }
            let direction = if (n - 1.0).abs() <= UNIT_TOL { d } else { d / n };
            ms.push(Measurement { seq: k, direction, g: e.g });
        }
        if ms.is_empty() {
            return Err(Error::InvalidParam("scheme has no measurements".into()));
        }
        Self::new(sequences, ms)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeFile {
    measurements: Vec<SchemeEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeEntry {
    direction: [f64; 3],
    g: f64,
    delta: f64,
    #[serde(rename = "Delta")]
    big_delta: f64,
    #[serde(rename = "T_echo", default, skip_serializing_if = "Option::is_none")]
    t_echo: Option<f64>,
}

/// `n` evenly spread directions. Three gives the coordinate axes; otherwise
/// antipodally symmetric electrostatic repulsion from a golden-spiral start.
/// Each vector is signed so that it lies in the upper hemisphere.
pub fn direction_set(n: usize) -> Result<Vec<Vec3>> {
    match n {
        0 => Err(Error::InvalidParam("need at least one direction".into())),
        1 => Ok(vec![Vec3::z()]),
        3 => Ok(vec![Vec3::x(), Vec3::y(), Vec3::z()]),
        _ => Ok(repulsion(n)),
    }
}

fn repulsion(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut p: Vec<Vec3> = (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect();
    let mut step = 0.1 / n as f64;
    let mut energy = antipodal_energy(&p);
    for _ in 0..2000 {
        let forces: Vec<Vec3> = (0..n)
            .map(|i| {
                let mut f = Vec3::zeros();
                for j in (0..n).filter(|&j| j != i) {
                    let a = p[i] - p[j];
                    let b = p[i] + p[j];
                    f += a / a.norm().powi(3) + b / b.norm().powi(3);
                }
                f - p[i] * f.dot(&p[i])
            })
            .collect();
        let trial: Vec<Vec3> = p.iter().zip(&forces).map(|(x, f)| (x + f * step).normalize()).collect();
        let e = antipodal_energy(&trial);
        if e < energy {
            p = trial;
            energy = e;
            step *= 1.1;
        } else {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
    }
    p.into_iter().map(upper_hemisphere).collect()
}

fn antipodal_energy(p: &[Vec3]) -> f64 {
    let mut e = 0.0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            e += 1.0 / (p[i] - p[j]).norm() + 1.0 / (p[i] + p[j]).norm();
        }
    }
    e
}

fn upper_hemisphere(v: Vec3) -> Vec3 {
    let key = if v.z != 0.0 {
        v.z
    } else if v.y != 0.0 {
        v.y
    } else {
        v.x
    };
    if key < 0.0 {
        -v
    } else {
        v
    }
}

/// Uniformly random rotation, reproducible from `seed`.
pub fn random_rotation(seed: u64) -> Matrix3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let q = Vector4::from_fn(|_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let n = q.norm();
        if n > 1e-3 && n <= 1.0 {
            let q = nalgebra::Quaternion::from(q / n);
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        }
    }
}

pub fn mean_abs_dot(dirs: &[Vec3]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            sum += dirs[i].dot(&dirs[j]).abs();
            count += 1;
        }
    }
    sum / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::GAMMA;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn b_value_examples() {
        let s = PgseSequence::new(1.0, 20.0).unwrap();
        assert_eq!(s.b_value(0.0, GAMMA), 0.0);
        let g = 1.0 / GAMMA;
        assert!((s.b_value(g, GAMMA) - 19.666666666666668).abs() < 1e-12);
        assert!((s.b_value(2.0 * g, GAMMA) - 4.0 * s.b_value(g, GAMMA)).abs() < 1e-12);
        let g = s.amplitude_for_b(1.0, GAMMA);
        assert!((s.b_value(g, GAMMA) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sequence_validation() {
        assert!(PgseSequence::new(0.0, 5.0).is_err());
        assert!(PgseSequence::new(2.0, 1.0).is_err());
        assert!(PgseSequence::with_echo(1.0, 5.0, 5.5).is_err());
        assert!(PgseSequence::new(f64::NAN, 5.0).is_err());
        let s = PgseSequence::with_echo(1.0, 5.0, 8.0).unwrap();
        assert_eq!(s.intervals(), vec![(1.0, 1), (4.0, 0), (1.0, -1), (2.0, 0)]);
        assert_eq!(PgseSequence::new(2.0, 2.0).unwrap().intervals(), vec![(2.0, 1), (2.0, -1)]);
    }

    #[test]
    fn direction_sets() {
        assert_eq!(direction_set(3).unwrap(), vec![Vec3::x(), Vec3::y(), Vec3::z()]);
        assert!(direction_set(0).is_err());
        for n in [1, 2, 6, 15, 30, 60] {
            let d = direction_set(n).unwrap();
            assert_eq!(d.len(), n);
            assert!(d.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        }
        assert_eq!(direction_set(30).unwrap(), direction_set(30).unwrap());
        // six antipodal directions are the icosahedron axes: all |dot| = 1/√5
        let d = direction_set(6).unwrap();
        for i in 0..6 {
            for j in i + 1..6 {
                assert!((d[i].dot(&d[j]).abs() - 1.0 / 5f64.sqrt()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn spread_beats_random() {
        let ours = mean_abs_dot(&direction_set(30).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut total = 0.0;
        for _ in 0..100 {
            let dirs: Vec<Vec3> = (0..30)
                .map(|_| loop {
                    let v = Vec3::from_fn(|_, _| rng.gen::<f64>() * 2.0 - 1.0);
                    if v.norm() > 1e-3 && v.norm() <= 1.0 {
                        break v.normalize();
                    }
                })
                .collect();
            total += mean_abs_dot(&dirs);
        }
        assert!(ours < total / 100.0, "{ours} vs {}", total / 100.0);
    }

    #[test]
    fn scheme_construction() {
        let seqs = [PgseSequence::new(1.0, 5.0).unwrap(), PgseSequence::new(1.0, 20.0).unwrap()];
        let dirs = direction_set(30).unwrap();
        let s = GradientScheme::from_bvalues(&seqs, &dirs, &[1.0, 2.0], GAMMA).unwrap();
        assert_eq!(s.len(), 2 * (1 + 60));
        assert_eq!(s.reference_indices(), vec![0, 61]);
        let b = s.b_values(GAMMA);
        assert!((b[1] - 1.0).abs() < 1e-12 && (b[31] - 2.0).abs() < 1e-12 && (b[62] - 1.0).abs() < 1e-12);

        let bad = Measurement { seq: 0, direction: Vec3::new(1.0, 1.0, 0.0), g: 0.1 };
        assert!(GradientScheme::new(seqs.to_vec(), vec![bad]).is_err());
        let neg = Measurement { seq: 0, direction: Vec3::x(), g: -0.1 };
        assert!(GradientScheme::new(seqs.to_vec(), vec![neg]).is_err());
        let orphan = Measurement { seq: 5, direction: Vec3::x(), g: 0.1 };
        assert!(GradientScheme::new(seqs.to_vec(), vec![orphan]).is_err());
        let only = Measurement { seq: 1, direction: Vec3::y(), g: 0.1 };
        let s = GradientScheme::new(seqs.to_vec(), vec![only]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.reference_indices(), vec![1, 2]);
    }

    #[test]
    fn scheme_json_round_trip() {
        let seqs = [PgseSequence::new(1.0, 5.0).unwrap(), PgseSequence::with_echo(2.0, 20.0, 30.0).unwrap()];
        let s = GradientScheme::product(&seqs, &direction_set(7).unwrap(), &[0.003, 0.01]).unwrap();
        let back = GradientScheme::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let text = r#"{"measurements":[{"direction":[0,0,1],"g":0.01,"delta":1,"Delta":10}]}"#;
        let p = GradientScheme::from_json(text).unwrap();
        assert_eq!(p.sequences[0].t_echo, 11.0);
        assert_eq!(p.len(), 2);
        assert!(GradientScheme::from_json(r#"{"measurements":[]}"#).is_err());
        assert!(GradientScheme::from_json(r#"{"measurements":[{"direction":[0,0,2],"g":0,"delta":1,"Delta":10}]}"#).is_err());
        assert!(GradientScheme::from_json(r#"{"measurements":[{"direction":[0,0,1],"g":0,"delta":1,"Delta":10,"x":1}]}"#).is_err());
        assert!(GradientScheme::from_json("[").is_err());
    }

    #[test]
    fn random_rotation_is_proper() {
        for seed in 0..10 {
            let r = random_rotation(seed);
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
        assert_ne!(random_rotation(1), random_rotation(2));
    }

    proptest! {
        #[test]
        fn refocused_and_sign_free(delta in 0.1f64..10.0, gap in 0.0f64..50.0, tail in 0.0f64..20.0, g in 0.0f64..0.1) {
            let s = PgseSequence::with_echo(delta, delta + gap, 2.0 * delta + gap + tail).unwrap();
            let area: f64 = s.intervals().iter().map(|&(len, f)| len * f as f64).sum();
            prop_assert!(area.abs() <= 1e-12 * s.t_echo);
            let total: f64 = s.intervals().iter().map(|&(len, _)| len).sum();
            prop_assert!((total - s.t_echo).abs() <= 1e-12 * s.t_echo);
            let b = s.b_value(g, GAMMA);
            prop_assert!(b >= 0.0);
            prop_assert_eq!(b, s.b_value(-g, GAMMA));
            prop_assert_eq!(b == 0.0, g == 0.0);
        }
    }
}
