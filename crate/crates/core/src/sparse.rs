//! Compressed sparse row matrices and a profile (skyline) LDLᵀ factorization.
//!
//! FEM matrices built from one mesh share a single sparsity pattern, so the
//! pattern is reference counted and assembly writes into fixed slots in a
//! deterministic order.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::ops::{AddAssign, Mul};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::{NumAssign, Zero};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl Pattern {
    /// Symmetric pattern containing the diagonal and both directions of every edge.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Pattern {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(i, j) in edges {
            rows[i].push(j);
            rows[j].push(i);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        Pattern { n, row_ptr, cols }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage slot of entry `(i, j)`, if present.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let nnz = pattern.nnz();
        CsrMatrix { pattern, values: vec![0.0; nnz] }
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `v` at `(i, j)`. Panics if the entry is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.pattern.slot(i, j).expect("entry outside sparsity pattern");
        self.values[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.slot(i, j).map_or(0.0, |s| self.values[s])
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1];
        self.pattern.cols[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        CsrMatrix { pattern: Arc::clone(&self.pattern), values: self.values.iter().map(|v| v * s).collect() }
    }

    /// `Σ_k w_k A_k` over matrices sharing one pattern.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        let pattern = Arc::clone(&terms[0].1.pattern);
        let mut values = vec![0.0; pattern.nnz()];
        for (w, m) in terms {
            assert!(Arc::ptr_eq(&m.pattern, &pattern) || *m.pattern == *pattern, "patterns differ");
            for (o, v) in values.iter_mut().zip(&m.values) {
                *o += w * v;
            }
        }
        CsrMatrix { pattern, values }
    }

    pub fn mul_vec<T>(&self, x: &[T]) -> Vec<T>
    where
        T: Copy + Zero + AddAssign + Mul<f64, Output = T>,
    {
        (0..self.n())
            .map(|i| {
                let mut acc = T::zero();
                for (j, a) in self.row_entries(i) {
                    acc += x[j] * a;
                }
                acc
            })
            .collect()
    }

    /// `A X` for a dense block `X`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            for i in 0..self.n() {
                let mut acc = 0.0;
                for (j, a) in self.row_entries(i) {
                    acc += a * xc[j];
                }
                out[(i, c)] = acc;
            }
        }
        out
    }

    /// `Xᵀ A X`, symmetrized.
    pub fn congruence(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let ax = self.mul_dense(x);
        let m = x.transpose() * ax;
        (&m + m.transpose()) * 0.5
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.row_entries(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n(), self.n());
        for i in 0..self.n() {
            for (j, v) in self.row_entries(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n() {
            for (j, v) in self.row_entries(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Matrix Market coordinate text (`general`, 1-based).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::with_capacity(self.pattern.nnz() * 48);
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.n(), self.n(), self.pattern.nnz());
        for i in 0..self.n() {
            for (j, v) in self.row_entries(i) {
                let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
            }
        }
        s
    }
}

/// Reads a square real coordinate Matrix Market file into a dense matrix.
/// `symmetric` storage is expanded. Intended for cross-checking small dumps.
pub fn parse_matrix_market(text: &str) -> Result<DMatrix<f64>> {
    let name = "matrix market";
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines.next().ok_or_else(|| Error::parse(name, 1, "empty input"))?;
    let b: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if b.len() != 5 || b[0] != "%%matrixmarket" || b[1] != "matrix" || b[2] != "coordinate" || b[3] != "real" {
        return Err(Error::parse(name, 1, "expected `%%MatrixMarket matrix coordinate real <symmetry>`"));
    }
    let symmetric = match b[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(Error::parse(name, 1, format!("unsupported symmetry `{other}`"))),
    };
    let mut data = lines.filter(|(_, l)| !l.trim_start().starts_with('%') && !l.trim().is_empty());
    let (ln, size) = data.next().ok_or_else(|| Error::parse(name, 2, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(name, ln + 1, "bad size line")))
        .collect::<Result<_>>()?;
    if dims.len() != 3 || dims[0] != dims[1] {
        return Err(Error::parse(name, ln + 1, "expected square `n n nnz`"));
    }
    let (n, nnz) = (dims[0], dims[2]);
    if n > 20_000 || nnz > n.saturating_mul(n) {
        return Err(Error::parse(name, ln + 1, "matrix too large for dense cross-check"));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut seen = 0;
    for (ln, line) in data {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(Error::parse(name, ln + 1, "expected `i j value`"));
        }
        let i: usize = t[0].parse().map_err(|_| Error::parse(name, ln + 1, "bad row index"))?;
        let j: usize = t[1].parse().map_err(|_| Error::parse(name, ln + 1, "bad column index"))?;
        let v: f64 = t[2].parse().map_err(|_| Error::parse(name, ln + 1, "bad value"))?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::parse(name, ln + 1, "index out of range"));
        }
        m[(i - 1, j - 1)] += v;
        if symmetric && i != j {
            m[(j - 1, i - 1)] += v;
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(Error::parse(name, 0, format!("declared {nnz} entries, found {seen}")));
    }
    Ok(m)
}

/// Reverse Cuthill–McKee ordering of a symmetric pattern. `perm[new] = old`.
pub fn rcm_ordering(p: &Pattern) -> Vec<usize> {
    let n = p.n;
    let degree: Vec<usize> = (0..n).map(|i| p.row(i).len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = pseudo_peripheral(p, &degree, &visited);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = p.row(v).iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(p: &Pattern, degree: &[usize], visited: &[bool]) -> usize {
    let mut start = (0..p.n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)).unwrap();
    let mut ecc = 0;
    for _ in 0..8 {
        let (far, e) = bfs_farthest(p, degree, visited, start);
        if e <= ecc {
            break;
        }
        ecc = e;
        start = far;
    }
    start
}

fn bfs_farthest(p: &Pattern, degree: &[usize], visited: &[bool], start: usize) -> (usize, usize) {
    let mut level = vec![usize::MAX; p.n];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        let better = level[v] > level[last] || (level[v] == level[last] && degree[v] < degree[last]);
        if better {
            last = v;
        }
        for &u in p.row(v) {
            if !visited[u] && level[u] == usize::MAX {
                level[u] = level[v] + 1;
                queue.push_back(u);
            }
        }
    }
    (last, level[last])
}

/// Profile LDLᵀ factorization of a symmetric (possibly complex symmetric)
/// matrix under a fill-reducing permutation. No pivoting: the caller must
/// supply matrices whose leading principal minors are nonsingular (SPD, or
/// complex symmetric with positive definite real part).
#[derive(Debug, Clone)]
pub struct ProfileLdl<T> {
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    l: Vec<T>,
    d: Vec<T>,
}

impl<T> ProfileLdl<T>
where
    T: NumAssign + Copy + Mul<f64, Output = T>,
{
    /// Factors `Σ_k w_k A_k` where the `A_k` share one pattern and `w_k`
    /// may be complex.
    pub fn factor(terms: &[(T, &CsrMatrix)], perm: &[usize]) -> Result<Self> {
        let pattern = Arc::clone(terms[0].1.pattern());
        let n = pattern.n;
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for &oj in pattern.row(old) {
                let j = inv[oj];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i]));
        }
        let mut l = vec![T::zero(); offset[n]];
        let mut d = vec![T::zero(); n];
        for old in 0..n {
            let i = inv[old];
            let start = pattern.row_ptr[old];
            for (k, &oj) in pattern.row(old).iter().enumerate() {
                let j = inv[oj];
                let mut v = T::zero();
                for (w, m) in terms {
                    v += *w * m.values[start + k];
                }
                if j < i {
                    l[offset[i] + (j - first[i])] += v;
                } else if j == i {
                    d[i] += v;
                }
            }
        }
        // Crout: row i of L uses rows j < i inside the overlap of the profiles.
        let mut scaled = vec![T::zero(); n];
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = l[offset[i] + (j - fi)];
                for k in lo..j {
                    s -= scaled[k] * l[offset[j] + (k - fj)];
                }
                scaled[j] = s;
            }
            let mut dii = d[i];
            for j in fi..i {
                let lij = scaled[j] / d[j];
                dii -= scaled[j] * lij;
                l[offset[i] + (j - fi)] = lij;
            }
            if dii == T::zero() {
                return Err(Error::Factorization { row: perm[i] });
            }
            d[i] = dii;
        }
        Ok(ProfileLdl { perm: perm.to_vec(), first, offset, l, d })
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn profile_len(&self) -> usize {
        self.l.len()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n();
        let mut y: Vec<T> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.l[self.offset[i]..self.offset[i + 1]];
            let mut s = y[i];
            for (k, &lik) in row.iter().enumerate() {
                s -= lik * y[fi + k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] = y[i] / self.d[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.l[self.offset[i]..self.offset[i + 1]];
            for (k, &lik) in row.iter().enumerate() {
                let t = y[fi + k];
                y[fi + k] = t - lik * yi;
            }
        }
        let mut x = vec![T::zero(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

impl ProfileLdl<f64> {
    pub fn solve_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col: Vec<f64> = b.column(c).iter().copied().collect();
            out.set_column(c, &nalgebra::DVector::from_vec(self.solve(&col)));
        }
        out
    }

    /// Number of negative pivots, which equals the number of negative
    /// eigenvalues of the factored symmetric matrix.
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }
}

pub type ComplexLdl = ProfileLdl<Complex64>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::canonical_cylinder;
    use proptest::prelude::*;

    fn laplacian_like(n_side: usize) -> (Arc<Pattern>, CsrMatrix) {
        let n = n_side * n_side;
        let mut edges = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                let k = i * n_side + j;
                if j + 1 < n_side {
                    edges.push((k, k + 1));
                }
                if i + 1 < n_side {
                    edges.push((k, k + n_side));
                }
            }
        }
        let p = Arc::new(Pattern::from_edges(n, &edges));
        let mut a = CsrMatrix::zeros(Arc::clone(&p));
        for &(i, j) in &edges {
            a.add(i, j, -1.0);
            a.add(j, i, -1.0);
            a.add(i, i, 1.0);
            a.add(j, j, 1.0);
        }
        for i in 0..n {
            a.add(i, i, 0.1 + (i % 7) as f64 * 0.01);
        }
        (p, a)
    }

    #[test]
    fn rcm_is_permutation_and_narrows_profile() {
        let m = canonical_cylinder(1.0, 5.0, 315).unwrap();
        let p = Pattern::from_edges(m.n_vertices(), &m.topology().edges());
        let perm = rcm_ordering(&p);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..m.n_vertices()).collect::<Vec<_>>());
        let mut a = CsrMatrix::zeros(Arc::new(p));
        for i in 0..a.n() {
            a.add(i, i, 1.0);
        }
        let ident: Vec<usize> = (0..a.n()).collect();
        let natural = ProfileLdl::<f64>::factor(&[(1.0, &a)], &ident).unwrap().profile_len();
        let reordered = ProfileLdl::<f64>::factor(&[(1.0, &a)], &perm).unwrap().profile_len();
        assert!(reordered <= natural, "{reordered} > {natural}");
    }

    #[test]
    fn real_solve_matches_dense() {
        let (p, a) = laplacian_like(6);
        let perm = rcm_ordering(&p);
        let f = ProfileLdl::<f64>::factor(&[(1.0, &a)], &perm).unwrap();
        let b: Vec<f64> = (0..a.n()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&b);
        let r = a.mul_vec(&x);
        let err = r.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert_eq!(f.negative_pivots(), 0);
    }

    #[test]
    fn complex_symmetric_solve() {
        let (p, a) = laplacian_like(5);
        let mut c = CsrMatrix::zeros(Arc::clone(&p));
        for i in 0..a.n() {
            for (j, _) in a.row_entries(i).collect::<Vec<_>>() {
                c.add(i, j, ((i + j) as f64 * 0.1).cos());
            }
        }
        let perm = rcm_ordering(&p);
        let terms = [(Complex64::new(1.0, 0.0), &a), (Complex64::new(0.0, 0.7), &c)];
        let f = ComplexLdl::factor(&terms, &perm).unwrap();
        let b: Vec<Complex64> = (0..a.n()).map(|i| Complex64::new(1.0, i as f64 * 0.01)).collect();
        let x = f.solve(&b);
        let ax = a.mul_vec(&x);
        let cx = c.mul_vec(&x);
        let err = (0..a.n())
            .map(|i| (ax[i] + Complex64::new(0.0, 0.7) * cx[i] - b[i]).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
    }

    #[test]
    fn matrix_market_round_trip() {
        let (_, a) = laplacian_like(3);
        let d = parse_matrix_market(&a.to_matrix_market()).unwrap();
        assert_eq!(d, a.to_dense());
        assert!(parse_matrix_market("%%MatrixMarket matrix array real general\n1 1\n1\n").is_err());
        let sym = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2.0\n2 1 -1.0\n";
        let s = parse_matrix_market(sym).unwrap();
        assert_eq!(s[(0, 1)], -1.0);
    }

    proptest! {
        #[test]
        fn ldl_solve_any_rhs(seed in 0u64..1000, side in 2usize..6) {
            let (p, a) = laplacian_like(side);
            let perm = rcm_ordering(&p);
            let f = ProfileLdl::<f64>::factor(&[(1.0, &a)], &perm).unwrap();
            let b: Vec<f64> = (0..a.n()).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let x = f.solve(&b);
            let r = a.mul_vec(&x);
            for (u, v) in r.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }
}
