//! Canonical cylinder meshing and axon-like deformations.
//!
//! Deformations act on a mesh whose axis is parallel to +Z. The normalized
//! height of a vertex is `ĥ = (z - z_min) / (z_max - z_min)`; the base
//! (`ĥ = 0`) is always left in place. The axis passes through the centroid
//! of the base vertices.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{TetMesh, Vec3};

/// Tetrahedral cylinder of the given radius and height with its base at
/// `z = 0`, axis along +Z, and roughly `vertex_budget` vertices.
///
/// Cross-sections are concentric rings around a center point, ring `k`
/// carrying about `6k` points, stacked in layers. The ring and layer counts
/// are searched to hit the budget (exactly when some layout allows it) with
/// near-isotropic cells. Every prism between layers is split into three
/// tetrahedra by the vertex-index rule, which keeps neighbouring prisms
/// conforming.
pub fn canonical_cylinder(radius: f64, height: f64, vertex_budget: usize) -> Result<TetMesh> {
    if !(radius > 0.0 && height > 0.0) || !radius.is_finite() || !height.is_finite() {
        return Err(Error::InvalidParam(format!("cylinder radius {radius} and height {height} must be positive")));
    }
    if vertex_budget < 20 {
        return Err(Error::InvalidParam(format!("vertex budget {vertex_budget} too small, need at least 20")));
    }
    let aspect = (radius / height).max(height / radius);
    if aspect > 1000.0 {
        return Err(Error::InvalidParam(format!("aspect ratio {aspect:.1} exceeds 1000:1")));
    }
    let budget = vertex_budget as f64;
    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    for rings in 1..=64usize {
        if (1 + 3 * rings) * 2 > vertex_budget * 11 / 10 {
            break;
        }
        for layers in 2..=vertex_budget / (1 + 3 * rings) {
            let per_layer = (budget / layers as f64).round() as usize;
            let Some(counts) = ring_counts(per_layer.saturating_sub(1), rings) else { continue };
            let v = (layers * per_layer) as f64;
            let miss = (v - budget).abs() / budget;
            if miss > 0.1 {
                continue;
            }
            let dz = height / (layers - 1) as f64;
            let dr = radius / rings as f64;
            let tangential: f64 = counts
                .iter()
                .enumerate()
                .map(|(k, &n)| (2.0 * PI * dr * (k + 1) as f64 / n as f64 / dr).ln().abs())
                .sum::<f64>()
                / rings as f64;
            let cost = (dz / dr).ln().abs() + tangential + 10.0 * miss;
            if best.as_ref().map_or(true, |(c, _, _)| cost < *c) {
                best = Some((cost, counts, layers));
            }
        }
    }
    let (_, counts, layers) = best.ok_or_else(|| {
        Error::InvalidParam(format!("no ring/layer layout reaches {vertex_budget} vertices within 10%"))
    })?;
    cylinder_with_rings(radius, height, &counts, layers)
}

/// `total` points over `rings` rings in proportion to the ring index, at
/// least three on the innermost ring and non-decreasing outwards.
fn ring_counts(total: usize, rings: usize) -> Option<Vec<usize>> {
    let weight = (rings * (rings + 1) / 2) as f64;
    let mut counts: Vec<usize> = (1..=rings).map(|k| (total as f64 * k as f64 / weight).floor() as usize).collect();
    let mut left = total.checked_sub(counts.iter().sum())?;
    let mut k = rings;
    while left > 0 {
        k = if k == 0 { rings - 1 } else { k - 1 };
        counts[k] += 1;
        left -= 1;
    }
    let ok = counts[0] >= 3 && counts.windows(2).all(|w| w[0] < w[1]);
    ok.then_some(counts)
}

/// Cylinder with hexagonal rings (ring `k` carries `6k` points).
pub fn cylinder_mesh(radius: f64, height: f64, rings: usize, layers: usize) -> Result<TetMesh> {
    let counts: Vec<usize> = (1..=rings).map(|k| 6 * k).collect();
    cylinder_with_rings(radius, height, &counts, layers)
}

/// Cylinder whose cross-section has `counts[k]` points on ring `k + 1`.
pub fn cylinder_with_rings(radius: f64, height: f64, counts: &[usize], layers: usize) -> Result<TetMesh> {
    if counts.is_empty() || layers < 2 || counts[0] < 3 {
        return Err(Error::InvalidParam("need at least one ring of three points and two layers".into()));
    }
    let rings = counts.len();
    let mut ring_start = vec![1usize];
    for &n in counts {
        ring_start.push(ring_start.last().unwrap() + n);
    }
    let mut disk = vec![[0.0, 0.0]];
    for (k, &n) in counts.iter().enumerate() {
        let rk = radius * (k + 1) as f64 / rings as f64;
        for j in 0..n {
            let th = 2.0 * PI * j as f64 / n as f64;
            disk.push([rk * th.cos(), rk * th.sin()]);
        }
    }
    let mut tris = Vec::new();
    let n1 = counts[0];
    for j in 0..n1 {
        tris.push([0, 1 + j, 1 + (j + 1) % n1]);
    }
    for k in 1..rings {
        let (m, n) = (counts[k - 1], counts[k]);
        let (si, so) = (ring_start[k - 1], ring_start[k]);
        let (mut i, mut j) = (0, 0);
        while i < m || j < n {
            // advance the ring whose next point has the smaller angle
            let ai = (i + 1) as f64 / m as f64;
            let aj = (j + 1) as f64 / n as f64;
            if j < n && (i == m || aj <= ai) {
                tris.push([si + i % m, so + j, so + (j + 1) % n]);
                j += 1;
            } else {
                tris.push([si + i % m, so + j % n, si + (i + 1) % m]);
                i += 1;
            }
        }
    }
    let per_layer = disk.len();
    let mut vertices = Vec::with_capacity(per_layer * layers);
    for l in 0..layers {
        let z = height * l as f64 / (layers - 1) as f64;
        vertices.extend(disk.iter().map(|p| Vec3::new(p[0], p[1], z)));
    }
    let mut tets = Vec::with_capacity(3 * tris.len() * (layers - 1));
    for l in 0..layers - 1 {
        let off = l * per_layer;
        for t in &tris {
            let mut s = t.map(|i| i + off);
            s.sort_unstable();
            let [a, b, c] = s;
            let (a2, b2, c2) = (a + per_layer, b + per_layer, c + per_layer);
            tets.push([a, b, c, a2]);
            tets.push([b, c, a2, b2]);
            tets.push([c, a2, b2, c2]);
        }
    }
    TetMesh::new(vertices, tets)
}

/// Axis-aligned box `[0, size]` split into `cells` cubes of six tetrahedra each.
pub fn box_mesh(size: [f64; 3], cells: [usize; 3]) -> Result<TetMesh> {
    if cells.iter().any(|&c| c == 0) || size.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidParam("box needs positive size and cell counts".into()));
    }
    let [nx, ny, nz] = cells;
    let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vec3::new(
                    size[0] * i as f64 / nx as f64,
                    size[1] * j as f64 / ny as f64,
                    size[2] * k as f64 / nz as f64,
                ));
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for p in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [id(c[0], c[1], c[2]); 4];
                    for (s, &axis) in p.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    tets.push(t);
                }
            }
        }
    }
    TetMesh::new(vertices, tets)
}

struct Frame {
    axis_x: f64,
    axis_y: f64,
    z0: f64,
    height: f64,
}

impl Frame {
    fn of(mesh: &TetMesh) -> Frame {
        let (lo, hi) = mesh.bounding_box();
        let height = hi.z - lo.z;
        let base: Vec<&Vec3> = mesh.vertices().iter().filter(|p| p.z - lo.z <= 1e-9 * height.max(1e-300)).collect();
        let n = base.len() as f64;
        let axis_x = base.iter().map(|p| p.x).sum::<f64>() / n;
        let axis_y = base.iter().map(|p| p.y).sum::<f64>() / n;
        Frame { axis_x, axis_y, z0: lo.z, height }
    }

    fn h_hat(&self, p: &Vec3) -> f64 {
        if self.height > 0.0 {
            (p.z - self.z0) / self.height
        } else {
            0.0
        }
    }
}

/// Bends the mesh along +X by `beta * ĥ² * h` and then twists it about the
/// axis by `twist * ĥ` full revolutions.
pub fn apply_bend_twist(mesh: &TetMesh, beta: f64, twist: f64) -> TetMesh {
    let f = Frame::of(mesh);
    mesh.map_vertices(|p| {
        let s = f.h_hat(p);
        if twist == 0.0 {
            return Vec3::new(p.x + beta * s * s * f.height, p.y, p.z);
        }
        let x = p.x - f.axis_x + beta * s * s * f.height;
        let y = p.y - f.axis_y;
        let (sn, cs) = (2.0 * PI * twist * s).sin_cos();
        Vec3::new(f.axis_x + cs * x - sn * y, f.axis_y + sn * x + cs * y, p.z)
    })
}

/// Tilts the mesh toward +X so the axis angle from Z grows linearly in `ĥ`
/// up to `fan_angle_deg` at the top. Cross-sections are sheared, not rotated.
pub fn apply_fanning(mesh: &TetMesh, fan_angle_deg: f64) -> TetMesh {
    let f = Frame::of(mesh);
    let alpha = fan_angle_deg.to_radians();
    if alpha == 0.0 {
        return mesh.clone();
    }
    // centroid offset x(z) = ∫ tan(alpha ζ / h) dζ
    mesh.map_vertices(|p| {
        let s = f.h_hat(p);
        let dx = -(f.height / alpha) * (alpha * s).cos().ln();
        Vec3::new(p.x + dx, p.y, p.z)
    })
}

/// Scales the radial distance from the axis by `1 + amplitude * sin²(π n ĥ)`.
pub fn apply_beading(mesh: &TetMesh, bead_count: u32, amplitude: f64) -> TetMesh {
    if bead_count == 0 {
        return mesh.clone();
    }
    let f = Frame::of(mesh);
    let n = bead_count as f64;
    mesh.map_vertices(|p| {
        let s = (PI * n * f.h_hat(p)).sin();
        let k = 1.0 + amplitude * s * s;
        Vec3::new(f.axis_x + k * (p.x - f.axis_x), f.axis_y + k * (p.y - f.axis_y), p.z)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// Exact quarter-turn rotation matrix about this axis.
    pub fn quarter_turn(self) -> Matrix3<f64> {
        match self {
            Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
            Axis::Y => Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0),
            Axis::Z => Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Augment {
    Scale { axis: Axis, factor: f64 },
    /// Quarter turns about each listed axis, applied in order.
    Rotate90 { axes: Vec<Axis> },
    Rotate180 { axis: Axis },
}

impl Augment {
    /// Standard augmentation vocabulary: 0.5x/1.5x scaling per axis,
    /// quarter turns about single axes, axis pairs and all three, and half
    /// turns about single axes.
    pub fn standard_set() -> Vec<Augment> {
        use Axis::*;
        let mut v = Vec::new();
        for axis in [X, Y, Z] {
            for factor in [0.5, 1.5] {
                v.push(Augment::Scale { axis, factor });
            }
        }
        for axes in [vec![X], vec![Y], vec![Z], vec![X, Y], vec![X, Z], vec![Y, Z], vec![X, Y, Z]] {
            v.push(Augment::Rotate90 { axes });
        }
        for axis in [X, Y, Z] {
            v.push(Augment::Rotate180 { axis });
        }
        v
    }
}

/// Exact affine augmentation. Scaling is about the origin, rotations about the
/// bounding-box center.
pub fn augment(mesh: &TetMesh, op: &Augment) -> Result<TetMesh> {
    match op {
        Augment::Scale { axis, factor } => {
            if !(*factor > 0.0) || !factor.is_finite() {
                return Err(Error::InvalidParam(format!("scale factor {factor} must be positive")));
            }
            let i = axis.index();
            Ok(mesh.map_vertices(|p| {
                let mut q = *p;
                q[i] *= factor;
                q
            }))
        }
        Augment::Rotate90 { axes } => {
            let r = axes.iter().fold(Matrix3::identity(), |acc, a| a.quarter_turn() * acc);
            Ok(transform_about_center(mesh, &r))
        }
        Augment::Rotate180 { axis } => {
            let q = axis.quarter_turn();
            Ok(transform_about_center(mesh, &(q * q)))
        }
    }
}

/// Applies `p -> c + R (p - c)` with `c` the bounding-box center.
pub fn transform_about_center(mesh: &TetMesh, r: &Matrix3<f64>) -> TetMesh {
    let c = mesh.bounding_box_center();
    mesh.map_vertices(|p| c + r * (p - c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeformSpec {
    BendTwist { bend: f64, twist: f64 },
    Fanning { angle_deg: f64 },
    Beading { count: u32, amplitude: f64 },
}

impl DeformSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DeformSpec::BendTwist { bend, twist } => {
                if !(0.0..=1.0).contains(&bend) || !twist.is_finite() {
                    return Err(Error::InvalidParam(format!("bend {bend} outside [0, 1] or bad twist {twist}")));
                }
            }
            DeformSpec::Fanning { angle_deg } => {
                if !(0.0..90.0).contains(&angle_deg) {
                    return Err(Error::InvalidParam(format!("fan angle {angle_deg} outside [0, 90)")));
                }
            }
            DeformSpec::Beading { amplitude, .. } => {
                if !(0.0..=0.5).contains(&amplitude) {
                    return Err(Error::InvalidParam(format!("bead amplitude {amplitude} outside [0, 0.5]")));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, mesh: &TetMesh) -> Result<TetMesh> {
        self.validate()?;
        Ok(match *self {
            DeformSpec::BendTwist { bend, twist } => apply_bend_twist(mesh, bend, twist),
            DeformSpec::Fanning { angle_deg } => apply_fanning(mesh, angle_deg),
            DeformSpec::Beading { count, amplitude } => apply_beading(mesh, count, amplitude),
        })
    }

    pub fn label(&self) -> String {
        match *self {
            DeformSpec::BendTwist { bend, twist } => format!("bend{bend}_twist{twist}"),
            DeformSpec::Fanning { angle_deg } => format!("fan{angle_deg}"),
            DeformSpec::Beading { count, amplitude } => format!("bead{count}_amp{amplitude}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyl() -> TetMesh {
        canonical_cylinder(1.0, 5.0, 315).unwrap()
    }

    fn max_dist(a: &TetMesh, b: &TetMesh) -> f64 {
        a.vertices().iter().zip(b.vertices()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn cylinder_vertex_budget_and_volume() {
        let m = cyl();
        assert!((m.n_vertices() as f64 - 315.0).abs() <= 31.5, "V = {}", m.n_vertices());
        let exact = PI * 5.0;
        assert!((m.total_volume() - exact).abs() / exact < 0.05);
        let (lo, hi) = m.bounding_box();
        assert!(lo.z.abs() < 1e-15 && (hi.z - 5.0).abs() < 1e-12);
        assert_eq!(m.inverted_count(), 0);
    }

    #[test]
    fn fine_cylinder_volume_within_two_percent() {
        let m = canonical_cylinder(1.0, 2.0, 3000).unwrap();
        let exact = PI * 2.0;
        assert!((m.total_volume() - exact).abs() / exact < 0.02);
    }

    #[test]
    fn cylinder_is_conforming() {
        let rings = 3;
        let layers = 5;
        let m = cylinder_mesh(1.0, 2.0, rings, layers).unwrap();
        let disk_tris = 6 * rings * rings;
        let outer = 6 * rings;
        assert_eq!(m.boundary_faces().len(), 2 * disk_tris + 2 * outer * (layers - 1));
    }

    #[test]
    fn cylinder_errors() {
        assert!(canonical_cylinder(1.0, 5.0, 4).is_err());
        assert!(canonical_cylinder(0.0, 5.0, 315).is_err());
        assert!(canonical_cylinder(1.0, 5000.0, 315).is_err());
    }

    #[test]
    fn zero_deformations_are_identity() {
        let m = cyl();
        assert_eq!(max_dist(&apply_bend_twist(&m, 0.0, 0.0), &m), 0.0);
        assert_eq!(max_dist(&apply_fanning(&m, 0.0), &m), 0.0);
        assert_eq!(max_dist(&apply_beading(&m, 0, 0.3), &m), 0.0);
    }

    #[test]
    fn bend_displacement_scales_with_beta() {
        let m = cyl();
        let top = m.vertices().iter().position(|v| v.z == 5.0 && v.x == 0.0 && v.y == 0.0).unwrap();
        let d = |beta: f64| apply_bend_twist(&m, beta, 0.0).vertices()[top].x - m.vertices()[top].x;
        assert!((d(0.5) / d(0.1) - 5.0).abs() < 1e-12);
        // apex (0,0,h): independent scalar evaluation of beta * ĥ² * h
        let h = 5.0_f64;
        let expected = 0.3 * (h / h).powi(2) * h;
        assert!((d(0.3) - expected).abs() < 1e-12);
        assert!((d(0.3) - 0.3 * h).abs() < 1e-12);
    }

    #[test]
    fn bend_monotone_in_height() {
        let m = cyl();
        let b = apply_bend_twist(&m, 0.3, 0.0);
        let mut pairs: Vec<(f64, f64)> =
            m.vertices().iter().zip(b.vertices()).map(|(p, q)| (p.z, q.x - p.x)).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!(pairs.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12));
        assert_eq!(b.inverted_count(), 0);
    }

    #[test]
    fn twist_half_turn_flips_top() {
        let m = cyl();
        let top = m.vertices().iter().position(|v| v.z == 5.0 && v.x == 0.0 && v.y == 0.0).unwrap();
        let b = apply_bend_twist(&m, 0.3, 0.5);
        let p = b.vertices()[top];
        assert!((p.x + 1.5).abs() < 1e-12 && p.y.abs() < 1e-12);
        assert_eq!(b.inverted_count(), 0);
    }

    fn layer_centroids(m: &TetMesh, orig: &TetMesh) -> Vec<(f64, f64)> {
        let mut by_z: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
        for (p, q) in orig.vertices().iter().zip(m.vertices()) {
            let e = by_z.entry((p.z * 1e6).round() as i64).or_insert((0.0, 0));
            e.0 += q.x;
            e.1 += 1;
        }
        by_z.into_iter().map(|(z, (s, n))| (z as f64 * 1e-6, s / n as f64)).collect()
    }

    #[test]
    fn fanning_top_tilt() {
        let m = cyl();
        for angle in [32.0, 46.0, 60.0] {
            let f = apply_fanning(&m, angle);
            let c = layer_centroids(&f, &m);
            let n = c.len();
            // backward difference of the centroid curve at the top layer, second order
            let (z0, x0) = c[n - 3];
            let (z1, x1) = c[n - 2];
            let (z2, x2) = c[n - 1];
            let h = z2 - z1;
            assert!((z1 - z0 - h).abs() < 1e-9);
            let slope = (3.0 * x2 - 4.0 * x1 + x0) / (2.0 * h);
            let tilt = slope.atan().to_degrees();
            assert!((tilt - angle).abs() < 0.5, "angle {angle}: tilt {tilt}");
            let dv = (f.total_volume() - m.total_volume()).abs() / m.total_volume();
            assert!(dv <= 0.05, "volume change {dv}");
            assert_eq!(f.inverted_count(), 0);
        }
    }

    fn radial_maxima(m: &TetMesh, orig: &TetMesh) -> (usize, f64) {
        // outer-ring radius per layer
        let mut by_z: std::collections::BTreeMap<i64, f64> = Default::default();
        for (p, q) in orig.vertices().iter().zip(m.vertices()) {
            let r = (q.x * q.x + q.y * q.y).sqrt();
            let e = by_z.entry((p.z * 1e6).round() as i64).or_insert(0.0);
            *e = e.max(r);
        }
        let r: Vec<f64> = by_z.into_values().collect();
        let mut peaks = 0;
        for i in 0..r.len() {
            let left = if i == 0 { f64::NEG_INFINITY } else { r[i - 1] };
            let right = if i + 1 == r.len() { f64::NEG_INFINITY } else { r[i + 1] };
            if r[i] > left && r[i] >= right && r[i] > r[0] + 1e-9 {
                peaks += 1;
            }
        }
        (peaks, r.iter().cloned().fold(0.0, f64::max))
    }

    #[test]
    fn beading_profile() {
        let m = canonical_cylinder(1.0, 5.0, 900).unwrap();
        let (peaks, _) = radial_maxima(&apply_beading(&m, 2, 0.3), &m);
        assert_eq!(peaks, 2);
        let (peaks3, _) = radial_maxima(&apply_beading(&m, 3, 0.3), &m);
        assert_eq!(peaks3, 3);
        let (_, rmax) = radial_maxima(&apply_beading(&m, 2, 0.4), &m);
        assert!((rmax - 1.4).abs() < 0.05, "rmax {rmax}");
        assert_eq!(apply_beading(&m, 8, 0.5).inverted_count(), 0);
    }

    #[test]
    fn augment_group_properties() {
        let m = apply_bend_twist(&cyl(), 0.3, 0.0);
        let mut r = m.clone();
        for _ in 0..4 {
            r = augment(&r, &Augment::Rotate90 { axes: vec![Axis::Z] }).unwrap();
        }
        assert!(max_dist(&r, &m) < 1e-12);
        let s = augment(&m, &Augment::Scale { axis: Axis::X, factor: 0.5 }).unwrap();
        let s = augment(&s, &Augment::Scale { axis: Axis::X, factor: 2.0 }).unwrap();
        assert!(max_dist(&s, &m) < 1e-12);
        let s = augment(&m, &Augment::Scale { axis: Axis::X, factor: 1.5 }).unwrap();
        assert!((s.total_volume() / m.total_volume() - 1.5).abs() < 1e-12);
        assert!(augment(&m, &Augment::Scale { axis: Axis::Y, factor: 0.0 }).is_err());
        let h = augment(&m, &Augment::Rotate180 { axis: Axis::Y }).unwrap();
        let h = augment(&h, &Augment::Rotate180 { axis: Axis::Y }).unwrap();
        assert!(max_dist(&h, &m) < 1e-12);
        for op in Augment::standard_set() {
            assert_eq!(augment(&m, &op).unwrap().inverted_count(), 0, "{op:?}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(DeformSpec::BendTwist { bend: 1.2, twist: 0.0 }.validate().is_err());
        assert!(DeformSpec::Fanning { angle_deg: 90.0 }.validate().is_err());
        assert!(DeformSpec::Beading { count: 2, amplitude: 0.6 }.validate().is_err());
        assert!(DeformSpec::Beading { count: 2, amplitude: 0.4 }.validate().is_ok());
    }
}
