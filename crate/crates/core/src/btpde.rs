//! Crank–Nicolson time stepping of the full FEM Bloch–Torrey system
//! `M dξ/dt = −(S + Q + R + iγ f(t) J(g)) ξ`, used as a reference solution
//! for the matrix-formalism signal.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{FemMatrices, PhysicsParams};
use crate::mesh::Vec3;
use crate::signal::{SignalSet, Solver};
use crate::sparse::{rcm_ordering, ComplexLdl, CsrMatrix};
use crate::sequence::{GradientScheme, PgseSequence};

/// Relative slack when checking that `dt` divides an interval.
const DIVIDE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct BtpdeSolution {
    pub xi: Vec<Complex64>,
    pub signal: Complex64,
}

/// Number of steps of size `dt` in each interval of `seq`, or an error if
/// `dt` does not divide them or exceeds `δ/10`.
pub fn step_counts(seq: &PgseSequence, dt: f64) -> Result<Vec<usize>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParam(format!("time step must be positive, got {dt}")));
    }
    if dt > seq.delta / 10.0 * (1.0 + DIVIDE_TOL) {
        return Err(Error::InvalidParam(format!("time step {dt} exceeds δ/10 = {}", seq.delta / 10.0)));
    }
    seq.intervals()
        .iter()
        .map(|&(len, _)| {
            let k = (len / dt).round();
            if k < 1.0 || (k * dt - len).abs() > DIVIDE_TOL * len {
                Err(Error::InvalidParam(format!("time step {dt} does not divide interval of length {len}")))
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

/// Largest step `≤ target` of the form `δ / k` that divides every interval of
/// every sequence. `None` if no `k ≤ 100000` works.
pub fn fitting_step(sequences: &[PgseSequence], target: f64) -> Option<f64> {
    let delta = sequences.first()?.delta;
    let k0 = (delta / target).ceil().max(10.0) as usize;
    (k0..=100_000).map(|k| delta / k as f64).find(|&dt| sequences.iter().all(|s| step_counts(s, dt).is_ok()))
}

/// One factored Crank–Nicolson step for a fixed gradient value.
struct Stepper {
    lhs: ComplexLdl,
    /// `S + Q + R` and `γ f g J_d` kept separately so the right-hand side is
    /// formed without complex sparse storage.
    real: CsrMatrix,
    imag: Option<CsrMatrix>,
    mass: CsrMatrix,
    half: f64,
}

impl Stepper {
    fn new(fem: &FemMatrices, params: &PhysicsParams, jd: &CsrMatrix, fg: f64, dt: f64, perm: &[usize]) -> Result<Self> {
        let real = CsrMatrix::linear_combination(&[(1.0, &fem.stiffness), (1.0, &fem.flux), (1.0, &fem.relaxation)]);
        let half = dt / 2.0;
        let phase = params.gamma * fg;
        let one = Complex64::new(1.0, 0.0);
        let lhs = if phase == 0.0 {
            ComplexLdl::factor(&[(one, &fem.mass), (one * half, &real)], perm)?
        } else {
            ComplexLdl::factor(&[(one, &fem.mass), (one * half, &real), (Complex64::new(0.0, half * phase), jd)], perm)?
        };
        let imag = (phase != 0.0).then(|| jd.scaled(phase));
        Ok(Stepper { lhs, real, imag, mass: fem.mass.clone(), half })
    }

    fn advance(&self, xi: &[Complex64], steps: usize) -> Vec<Complex64> {
        let mut x = xi.to_vec();
        for _ in 0..steps {
            let mx = self.mass.mul_vec(&x);
            let ax = self.real.mul_vec(&x);
            let mut rhs: Vec<Complex64> = mx.iter().zip(&ax).map(|(m, a)| m - a * self.half).collect();
            if let Some(j) = &self.imag {
                let jx = j.mul_vec(&x);
                for (r, v) in rhs.iter_mut().zip(&jx) {
                    *r -= Complex64::new(0.0, self.half) * v;
                }
            }
            x = self.lhs.solve(&rhs);
        }
        x
    }
}

/// Signal of one measurement by Crank–Nicolson with `ξ(0) = ρ 1`.
pub fn solve_btpde(
    fem: &FemMatrices,
    params: &PhysicsParams,
    seq: &PgseSequence,
    direction: &Vec3,
    g: f64,
    dt: f64,
) -> Result<BtpdeSolution> {
    let perm = rcm_ordering(fem.pattern());
    let free = Stepper::new(fem, params, &fem.coord[0], 0.0, dt, &perm)?;
    solve_with(fem, params, seq, direction, g, dt, &perm, &free)
}

#[allow(clippy::too_many_arguments)]
fn solve_with(
    fem: &FemMatrices,
    params: &PhysicsParams,
    seq: &PgseSequence,
    direction: &Vec3,
    g: f64,
    dt: f64,
    perm: &[usize],
    free: &Stepper,
) -> Result<BtpdeSolution> {
    params.validate()?;
    if !(g >= 0.0 && g.is_finite()) || (direction.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParam("need g ≥ 0 and a unit direction".into()));
    }
    let counts = step_counts(seq, dt)?;
    let jd = fem.coord_along(direction);
    let (plus, minus) = if g == 0.0 {
        (None, None)
    } else {
        (Some(Stepper::new(fem, params, &jd, g, dt, perm)?), Some(Stepper::new(fem, params, &jd, -g, dt, perm)?))
    };
    let mut xi = vec![Complex64::new(params.spin_density, 0.0); fem.n()];
    for ((_, f), steps) in seq.intervals().into_iter().zip(counts) {
        let stepper = match f {
            1 => plus.as_ref().unwrap_or(free),
            -1 => minus.as_ref().unwrap_or(free),
            _ => free,
        };
        xi = stepper.advance(&xi, steps);
    }
    let w = fem.mass.row_sums();
    let signal: Complex64 = xi.iter().zip(&w).map(|(x, w)| x * w).sum();
    if !signal.re.is_finite() || !signal.im.is_finite() {
        return Err(Error::NonFinite("time-stepping signal is not finite".into()));
    }
    Ok(BtpdeSolution { xi, signal })
}

/// Crank–Nicolson signal for every measurement of a scheme.
pub fn simulate_btpde(fem: &FemMatrices, params: &PhysicsParams, scheme: &GradientScheme, dt: f64) -> Result<SignalSet> {
    for s in &scheme.sequences {
        step_counts(s, dt)?;
    }
    let perm = rcm_ordering(fem.pattern());
    let free = Stepper::new(fem, params, &fem.coord[0], 0.0, dt, &perm)?;
    let values = scheme
        .measurements
        .par_iter()
        .map(|m| {
            let seq = &scheme.sequences[m.seq];
            solve_with(fem, params, seq, &m.direction, m.g, dt, &perm, &free).map(|s| s.signal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignalSet::new(scheme.clone(), values, params.gamma, Solver::Btpde))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{apply_bend_twist, canonical_cylinder};
    use crate::fem::assemble;
    use crate::laplace_eig::BasisOptions;
    use crate::sequence::{direction_set, PRESET_DIFFUSION_TIMES};
    use crate::signal::simulate_mesh;

    fn bent() -> crate::mesh::TetMesh {
        apply_bend_twist(&canonical_cylinder(1.0, 5.0, 315).unwrap(), 0.3, 0.0)
    }

    #[test]
    fn conserves_constant_mode() {
        let mesh = bent();
        let params = PhysicsParams { spin_density: 0.8, ..Default::default() };
        let fem = assemble(&mesh, &params).unwrap();
        let seq = PgseSequence::new(1.0, 5.0).unwrap();
        let s = solve_btpde(&fem, &params, &seq, &Vec3::x(), 0.0, 0.1).unwrap();
        let want = 0.8 * mesh.total_volume();
        assert!((s.signal - want).norm() / want < 1e-10);
        assert!(s.xi.iter().all(|x| (x - 0.8).norm() < 1e-10));
    }

    #[test]
    fn step_validation() {
        let seq = PgseSequence::new(1.0, 5.0).unwrap();
        assert_eq!(step_counts(&seq, 0.1).unwrap(), vec![10, 40, 10]);
        assert!(step_counts(&seq, 0.2).is_err());
        assert!(step_counts(&seq, 0.03).is_err());
        assert!(step_counts(&seq, 0.0).is_err());
        let odd = PgseSequence::new(1.0, 5.05).unwrap();
        let dt = fitting_step(&[seq, odd], 0.1).unwrap();
        assert!((dt - 0.05).abs() < 1e-15);
    }

    #[test]
    fn second_order_in_time() {
        let mesh = bent();
        let params = PhysicsParams::default();
        let fem = assemble(&mesh, &params).unwrap();
        let seq = PgseSequence::new(1.0, 5.0).unwrap();
        let d = Vec3::new(1.0, 1.0, 1.0).normalize();
        let g = seq.amplitude_for_b(1.0, params.gamma);
        let s: Vec<Complex64> =
            [0.1, 0.05, 0.025].iter().map(|&dt| solve_btpde(&fem, &params, &seq, &d, g, dt).unwrap().signal).collect();
        let order = ((s[0] - s[1]).norm() / (s[1] - s[2]).norm()).log2();
        assert!(order >= 1.8, "observed order {order}");
    }

    #[test]
    fn agrees_with_matrix_formalism() {
        let mesh = bent();
        let params = PhysicsParams::default();
        let fem = assemble(&mesh, &params).unwrap();
        let seqs = [PgseSequence::new(1.0, 5.0).unwrap(), PgseSequence::new(1.0, 20.0).unwrap()];
        let scheme = GradientScheme::from_bvalues(&seqs, &direction_set(3).unwrap(), &[1.0], params.gamma).unwrap();
        let cn = simulate_btpde(&fem, &params, &scheme, 0.05).unwrap();
        let (mf, _) = simulate_mesh(&mesh, &params, &BasisOptions::count(60), &scheme).unwrap();
        for (a, b) in mf.values.iter().zip(&cn.values) {
            assert!((a - b).norm() / b.norm() < 0.02, "{a} vs {b}");
        }
        assert_eq!(cn.solver, Solver::Btpde);
    }

    #[test]
    fn longer_diffusion_time_attenuates_more_along_axis() {
        let mesh = bent();
        let params = PhysicsParams::default();
        let fem = assemble(&mesh, &params).unwrap();
        let seqs: Vec<_> = PRESET_DIFFUSION_TIMES.iter().map(|&t| PgseSequence::new(1.0, t).unwrap()).collect();
        let scheme = GradientScheme::product(&seqs, &[Vec3::z()], &[0.002]).unwrap();
        let s = simulate_btpde(&fem, &params, &scheme, 0.1).unwrap();
        let norm = s.normalized();
        let axial: Vec<f64> = (0..4).map(|k| norm[2 * k + 1]).collect();
        assert!(axial.windows(2).all(|w| w[1] < w[0]), "{axial:?}");
    }

    #[test]
    fn relaxation_decays_during_free_intervals() {
        let mesh = canonical_cylinder(1.0, 3.0, 120).unwrap();
        let params = PhysicsParams { t2: Some(20.0), ..Default::default() };
        let fem = assemble(&mesh, &params).unwrap();
        let w = fem.mass.row_sums();
        let mass = |x: &[Complex64]| x.iter().zip(&w).map(|(x, w)| x.norm() * w).sum::<f64>();
        let mut prev = f64::INFINITY;
        for big in [2.0, 4.0, 6.0, 8.0] {
            let seq = PgseSequence::new(1.0, big).unwrap();
            let s = solve_btpde(&fem, &params, &seq, &Vec3::x(), 0.0, 0.1).unwrap();
            let m = mass(&s.xi);
            assert!(m < prev);
            prev = m;
        }
    }
}
