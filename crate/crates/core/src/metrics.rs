//! Chamfer distance and its minimum over axis-aligned rotations and
//! inversions.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{TetMesh, Vec3};

/// Static 3-d tree over a point cloud.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Implicit balanced tree: the median of every range is its node.
    order: Vec<usize>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut order, &mut axes);
        KdTree { points: points.to_vec(), order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point index and its distance, or `None` for an empty tree.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.points.len(), &mut best);
        Some(best)
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d = (p - q).norm();
        if d < best.1 || (d == best.1 && idx < best.0) {
            *best = (idx, d);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        // the margin keeps pruning conservative under roundoff, so results
        // match a brute-force scan exactly
        if diff.abs() <= best.1 * (1.0 + 1e-12) {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], axes: &mut [u8]) {
    if order.is_empty() {
        return;
    }
    let (lo, hi) = order.iter().fold((Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)), |(lo, hi), &i| {
        (lo.inf(&points[i]), hi.sup(&points[i]))
    });
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (la, ra) = axes.split_at_mut(mid);
    build(points, left, la);
    build(points, &mut rest[1..], &mut ra[1..]);
}

/// Distance from every point of `from` to its nearest neighbour in `to`.
pub fn nearest_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let tree = KdTree::new(to);
    from.iter().map(|p| tree.nearest(p).map_or(f64::INFINITY, |(_, d)| d)).collect()
}

/// Same as `nearest_distances` by exhaustive scan.
pub fn nearest_distances_brute(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    from.iter().map(|p| to.iter().map(|q| (q - p).norm()).fold(f64::INFINITY, f64::min)).collect()
}

/// `(1/2n) Σ min |x − y| + (1/2m) Σ min |y − x|`.
pub fn chamfer(p1: &[Vec3], p2: &[Vec3]) -> Result<f64> {
    chamfer_with(p1, p2, nearest_distances)
}

pub fn chamfer_brute(p1: &[Vec3], p2: &[Vec3]) -> Result<f64> {
    chamfer_with(p1, p2, nearest_distances_brute)
}

fn chamfer_with(p1: &[Vec3], p2: &[Vec3], nn: fn(&[Vec3], &[Vec3]) -> Vec<f64>) -> Result<f64> {
    if p1.is_empty() || p2.is_empty() {
        return Err(Error::InvalidParam("chamfer distance of an empty point cloud".into()));
    }
    let d1: f64 = nn(p1, p2).iter().sum::<f64>() / (2 * p1.len()) as f64;
    let d2: f64 = nn(p2, p1).iter().sum::<f64>() / (2 * p2.len()) as f64;
    Ok(d1 + d2)
}

/// The 48 signed permutation matrices: the 24 axis-aligned rotations, each
/// with and without central inversion. The identity comes first.
pub fn transform_group() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(48);
    for p in PERMS {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            out.push(m);
        }
    }
    // rotations first, then their inversions, identity at the front
    out.sort_by_key(|m| (m.determinant() < 0.0, *m != Matrix3::identity()));
    out
}

/// `c + R (p − c)` for every vertex, with `c` the bounding-box center.
pub fn transform_points(mesh: &TetMesh, r: &Matrix3<f64>) -> Vec<Vec3> {
    if *r == Matrix3::identity() {
        return mesh.vertices().to_vec();
    }
    let c = mesh.bounding_box_center();
    mesh.vertices().iter().map(|p| c + r * (p - c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModifiedChamfer {
    pub distance: f64,
    /// Index into `transform_group()`.
    pub transform: usize,
}

/// Minimum Chamfer distance between the transformed vertices of `m` and the
/// vertices of `reference` over `transform_group()`, transforms taken about
/// the bounding-box center of `m`.
pub fn modified_chamfer(m: &TetMesh, reference: &TetMesh) -> Result<ModifiedChamfer> {
    let group = transform_group();
    let target = reference.vertices();
    let tree = KdTree::new(target);
    let scores: Vec<f64> = group
        .par_iter()
        .map(|r| {
            let pts = transform_points(m, r);
            let d1: f64 = pts.iter().map(|p| tree.nearest(p).unwrap().1).sum::<f64>() / (2 * pts.len()) as f64;
            let d2: f64 = nearest_distances(target, &pts).iter().sum::<f64>() / (2 * target.len()) as f64;
            d1 + d2
        })
        .collect();
    let (transform, &distance) = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::InvalidParam("empty mesh".into()))?;
    Ok(ModifiedChamfer { distance, transform })
}

pub fn mesh_chamfer(a: &TetMesh, b: &TetMesh) -> Result<f64> {
    chamfer(a.vertices(), b.vertices())
}

/// Comparison of two meshes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chamfer: f64,
    pub modified_chamfer: f64,
    pub best_transform: [[f64; 3]; 3],
    pub volume_a: f64,
    pub volume_b: f64,
    pub vertices_a: usize,
    pub vertices_b: usize,
}

pub fn evaluate(a: &TetMesh, b: &TetMesh) -> Result<EvalReport> {
    let mc = modified_chamfer(a, b)?;
    let r = transform_group()[mc.transform];
    Ok(EvalReport {
        chamfer: mesh_chamfer(a, b)?,
        modified_chamfer: mc.distance,
        best_transform: [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]],
        volume_a: a.total_volume(),
        volume_b: b.total_volume(),
        vertices_a: a.n_vertices(),
        vertices_b: b.n_vertices(),
    })
}

/// Per-vertex nearest distance from `a` to `b` as CSV `vertex,x,y,z,distance`.
pub fn vertex_distance_csv(a: &TetMesh, b: &TetMesh) -> String {
    use std::fmt::Write as _;
    let d = nearest_distances(a.vertices(), b.vertices());
    let mut out = String::from("vertex,x,y,z,distance\n");
    for (i, (p, d)) in a.vertices().iter().zip(&d).enumerate() {
        writeln!(out, "{i},{:.16e},{:.16e},{:.16e},{d:.16e}", p.x, p.y, p.z).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{apply_bend_twist, canonical_cylinder, transform_about_center};
    use proptest::prelude::*;

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::new(rng.gen(), rng.gen::<f64>() * 2.0, rng.gen::<f64>() - 3.0)).collect()
    }

    #[test]
    fn chamfer_examples() {
        let a = [Vec3::zeros()];
        let b = [Vec3::x()];
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        let p = cloud(1, 50);
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        let q = cloud(2, 70);
        assert_eq!(chamfer(&p, &q).unwrap(), chamfer(&q, &p).unwrap());
        assert!(chamfer(&[], &q).is_err());
        assert!(chamfer(&q, &[]).is_err());
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        for (s, (n, m)) in [(1, 1), (2, 7), (100, 3), (499, 500), (250, 250)].into_iter().enumerate() {
            let p = cloud(10 + s as u64, n);
            let q = cloud(20 + s as u64, m);
            assert_eq!(nearest_distances(&p, &q), nearest_distances_brute(&p, &q));
            assert_eq!(chamfer(&p, &q).unwrap(), chamfer_brute(&p, &q).unwrap());
        }
        // grid points produce many exact ties
        let grid: Vec<Vec3> =
            (0..125).map(|i| Vec3::new((i % 5) as f64, (i / 5 % 5) as f64, (i / 25) as f64)).collect();
        let probes: Vec<Vec3> = grid.iter().map(|p| p + Vec3::repeat(0.5)).collect();
        assert_eq!(nearest_distances(&probes, &grid), nearest_distances_brute(&probes, &grid));
        assert!(KdTree::new(&[]).nearest(&Vec3::zeros()).is_none());
    }

    #[test]
    fn group_structure() {
        let g = transform_group();
        assert_eq!(g.len(), 48);
        assert_eq!(g[0], Matrix3::identity());
        assert_eq!(g.iter().filter(|m| m.determinant() > 0.0).count(), 24);
        for a in &g {
            assert_eq!(a.transpose() * a, Matrix3::identity());
            for b in &g {
                assert!(g.contains(&(a * b)));
            }
        }
        assert!(g.iter().skip(24).all(|m| m.determinant() < 0.0));
    }

    #[test]
    fn modified_chamfer_is_zero_under_the_group() {
        let m = apply_bend_twist(&canonical_cylinder(1.0, 5.0, 315).unwrap(), 0.3, 0.5);
        assert_eq!(modified_chamfer(&m, &m).unwrap().distance, 0.0);
        for r in transform_group() {
            let t = transform_about_center(&m, &r);
            let d = modified_chamfer(&t, &m).unwrap().distance;
            assert!(d < 1e-10, "{r}: {d}");
        }
    }

    #[test]
    fn modified_is_below_plain_and_invariant() {
        let a = canonical_cylinder(1.0, 5.0, 200).unwrap();
        let b = apply_bend_twist(&a, 0.3, 0.0);
        let plain = mesh_chamfer(&a, &b).unwrap();
        let base = modified_chamfer(&b, &a).unwrap().distance;
        assert!(base <= plain);
        for r in transform_group() {
            let d = modified_chamfer(&transform_about_center(&b, &r), &a).unwrap().distance;
            assert!((d - base).abs() < 1e-10);
        }
        let report = evaluate(&b, &a).unwrap();
        assert_eq!(report.modified_chamfer, base);
        assert!((report.volume_a - report.volume_b).abs() / report.volume_b < 0.05);
        let csv = vertex_distance_csv(&b, &a);
        assert_eq!(csv.lines().count(), 1 + b.n_vertices());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn indexed_equals_brute(seed in 0u64..10_000, n in 1usize..200, m in 1usize..200) {
            let p = cloud(seed, n);
            let q = cloud(seed + 1, m);
            prop_assert_eq!(chamfer(&p, &q).unwrap(), chamfer_brute(&p, &q).unwrap());
            prop_assert!(chamfer(&p, &q).unwrap() >= 0.0);
        }
    }
}
