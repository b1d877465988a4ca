//! Dense complex matrix exponential by scaling and squaring with Padé
//! approximants (Higham's degree selection).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const THETA: [(usize, f64); 4] =
    [(3, 1.495585217958292e-2), (5, 2.539398330063230e-1), (7, 9.504178996162932e-1), (9, 2.097847961257068)];
const THETA_13: f64 = 5.371920351148152;
/// More squarings than this means the result has under- or overflowed anyway.
const MAX_SQUARINGS: i32 = 64;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm1(a: &CMatrix) -> f64 {
    a.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn scaled_identity(n: usize, s: f64) -> CMatrix {
    CMatrix::from_diagonal_element(n, n, Complex64::new(s, 0.0))
}

/// `exp(A)`.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Ok(a.clone());
    }
    let norm = norm1(a);
    if !norm.is_finite() {
        return Err(Error::ExpOverflow { norm });
    }
    if norm == 0.0 {
        return Ok(scaled_identity(n, 1.0));
    }
    let a2 = a * a;
    for (m, theta) in THETA {
        if norm <= theta {
            let ev = even_powers(&a2, m / 2);
            let b: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = low_degree(a, &ev, b);
            return pade_solve(&u, &v, norm);
        }
    }
    let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
    if s > MAX_SQUARINGS {
        return Err(Error::ExpOverflow { norm });
    }
    let scale = 0.5f64.powi(s);
    let a1 = a * Complex64::new(scale, 0.0);
    let a2 = a2 * Complex64::new(scale * scale, 0.0);
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let c = |k: usize| Complex64::new(B13[k], 0.0);
    let inner_u = &a6 * c(13) + &a4 * c(11) + &a2 * c(9);
    let u = &a1 * (&a6 * &inner_u + &a6 * c(7) + &a4 * c(5) + &a2 * c(3) + scaled_identity(n, B13[1]));
    let inner_v = &a6 * c(12) + &a4 * c(10) + &a2 * c(8);
    let v = &a6 * &inner_v + &a6 * c(6) + &a4 * c(4) + &a2 * c(2) + scaled_identity(n, B13[0]);
    let mut r = pade_solve(&u, &v, norm)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::ExpOverflow { norm });
    }
    Ok(r)
}

/// `[I, A², A⁴, ...]` up to `A^(2k)`.
fn even_powers(a2: &CMatrix, k: usize) -> Vec<CMatrix> {
    let mut out = vec![scaled_identity(a2.nrows(), 1.0), a2.clone()];
    while out.len() <= k {
        let next = out.last().unwrap() * a2;
        out.push(next);
    }
    out
}

fn low_degree(a: &CMatrix, ev: &[CMatrix], b: &[f64]) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let mut u = CMatrix::zeros(n, n);
    let mut v = CMatrix::zeros(n, n);
    for (k, p) in ev.iter().enumerate() {
        u += p * Complex64::new(b[2 * k + 1], 0.0);
        v += p * Complex64::new(b[2 * k], 0.0);
    }
    (a * u, v)
}

fn pade_solve(u: &CMatrix, v: &CMatrix, norm: f64) -> Result<CMatrix> {
    let lu = (v - u).lu();
    lu.solve(&(v + u)).ok_or(Error::ExpOverflow { norm })
}

/// `exp(−K dt) ν`.
pub fn exp_propagate(k: &CMatrix, dt: f64, nu: &CVector) -> Result<CVector> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParam(format!("time step must be positive, got {dt}")));
    }
    if k.nrows() != nu.len() {
        return Err(Error::Mismatch(format!("operator is {}×{}, vector has {}", k.nrows(), k.ncols(), nu.len())));
    }
    Ok(expm(&(k * Complex64::new(-dt, 0.0)))? * nu)
}
