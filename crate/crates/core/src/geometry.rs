//! Numeric types and closed-form geometric kernels.
//!
//! Everything here is a pure function over plain values. World coordinates are
//! meters with `z` pointing up once a scene has been floor aligned. Cameras
//! follow the usual computer-vision convention: `x` right, `y` down, `z`
//! forward, and a pixel `(u, v)` is `(fx * X / Z + cx, fy * Y / Z + cy)`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    pub fn abs(self) -> Point3 {
        Point3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub(crate) fn to_na(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub(crate) fn from_na(v: &Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// Rounds to six decimal places, the precision stored in maps and answers.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Planar vector, used for grid coordinates in direction reasoning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn is_zero(&self) -> bool {
        self.x == 0.0 && self.y == 0.0
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

/// `f · t`. Positive when `t` points into the half-plane `f` faces.
pub fn dot2(f: Vec2, t: Vec2) -> f64 {
    f.x * t.x + f.y * t.y
}

/// `f × t` (z component). Positive when `t` lies to the left of `f`.
pub fn cross2(f: Vec2, t: Vec2) -> f64 {
    f.x * t.y - f.y * t.x
}

/// One-dimensional separation between the closed intervals `[a_min, a_max]`
/// and `[b_min, b_max]`. Zero iff they intersect.
pub fn axis_gap(a_min: f64, a_max: f64, b_min: f64, b_max: f64) -> Result<f64> {
    if !(a_min <= a_max) || !(b_min <= b_max) {
        return Err(Error::invalid(format!(
            "inverted interval [{a_min}, {a_max}] / [{b_min}, {b_max}]"
        )));
    }
    Ok((a_min - b_max).max(b_min - a_max).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb2 {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb2 {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        if !(min[0] <= max[0] && min[1] <= max[1]) {
            return Err(Error::invalid(format!("inverted 2-D box {min:?}..{max:?}")));
        }
        Ok(Aabb2 { min, max })
    }
}

/// Squared Euclidean distance between two closed 2-D boxes.
pub fn aabb_sq_dist_2d(a: &Aabb2, b: &Aabb2) -> Result<f64> {
    let dx = axis_gap(a.min[0], a.max[0], b.min[0], b.max[0])?;
    let dy = axis_gap(a.min[1], a.max[1], b.min[1], b.max[1])?;
    Ok(dx * dx + dy * dy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb3 {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::invalid("non-finite box corner"));
        }
        if !(min.x <= max.x && min.y <= max.y && min.z <= max.z) {
            return Err(Error::invalid(format!(
                "box min {:?} exceeds max {:?}",
                min.to_array(),
                max.to_array()
            )));
        }
        Ok(Aabb3 { min, max })
    }

    pub fn from_center_size(center: Point3, size: [f64; 3]) -> Result<Self> {
        let half = Point3::from(size) * 0.5;
        Aabb3::new(center - half, center + half)
    }

    /// Tight box around `points`, or `None` when empty.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        Some(Aabb3 { min: lo, max: hi })
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    pub fn size(&self) -> [f64; 3] {
        (self.max - self.min).to_array()
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn contains(&self, p: Point3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }

    pub fn intersects(&self, o: &Aabb3) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
            && self.min.z <= o.max.z
            && o.min.z <= self.max.z
    }
}

/// Per-axis gap between two boxes given as center and full size:
/// `max(|c1 - c2| - (size1 / 2 + size2 / 2), 0)`.
pub fn clamped_gap_3d(c1: Point3, size1: [f64; 3], c2: Point3, size2: [f64; 3]) -> Result<[f64; 3]> {
    if size1.iter().chain(&size2).any(|s| !(*s >= 0.0)) {
        return Err(Error::invalid(format!(
            "box sizes must be nonnegative, got {size1:?} and {size2:?}"
        )));
    }
    let delta = (c1 - c2).abs().to_array();
    let mut gap = [0.0; 3];
    for k in 0..3 {
        gap[k] = (delta[k] - (size1[k] / 2.0 + size2[k] / 2.0)).max(0.0);
    }
    Ok(gap)
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(r0: Point3, r1: Point3, r2: Point3) -> Self {
        Mat3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn mul_point(&self, p: Point3) -> Point3 {
        let m = &self.0;
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let p = self.mul(&self.transpose());
        (0..3).all(|i| (0..3).all(|j| (p.0[i][j] - if i == j { 1.0 } else { 0.0 }).abs() <= tol))
    }

    /// Rotation of `angle` radians about the unit `axis`.
    pub fn rotation(axis: Point3, angle: f64) -> Mat3 {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis.to_na()), angle);
        Mat3::from_na(r.matrix())
    }

    /// Shortest rotation carrying direction `from` onto direction `to`.
    pub fn rotation_between(from: Point3, to: Point3) -> Mat3 {
        match Rotation3::rotation_between(&from.to_na(), &to.to_na()) {
            Some(r) => Mat3::from_na(r.matrix()),
            None => {
                // Antiparallel: turn half way round any axis orthogonal to `from`.
                let helper = if from.x.abs() < 0.9 { Point3::new(1.0, 0.0, 0.0) } else { Point3::new(0.0, 1.0, 0.0) };
                Mat3::rotation(from.cross(helper), std::f64::consts::PI)
            }
        }
    }

    /// Rotation angle in radians, from the trace.
    pub fn angle(&self) -> f64 {
        let tr = self.0[0][0] + self.0[1][1] + self.0[2][2];
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    fn from_na(m: &Matrix3<f64>) -> Mat3 {
        Mat3([
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ])
    }
}

/// `p ↦ rotation · p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: Point3::ORIGIN,
    };

    pub fn apply(&self, p: Point3) -> Point3 {
        self.rotation.mul_point(p) + self.translation
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul(&first.rotation),
            translation: self.apply(first.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -rt.mul_point(self.translation),
        }
    }

    /// Re-express a world→camera pose in the transformed world frame.
    pub fn transform_pose(&self, pose: &CameraPose) -> CameraPose {
        let inv = self.inverse();
        let mut out = pose.clone();
        out.rotation = pose.rotation.mul(&inv.rotation);
        out.translation = pose.rotation.mul_point(inv.translation) + pose.translation;
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// World→camera extrinsics plus pinhole intrinsics:
/// `X_cam = rotation · X_world + translation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Point3,
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        if !self.rotation.is_orthonormal(1e-6) {
            return Err(Error::invalid("camera rotation is not orthonormal"));
        }
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) || !k.cx.is_finite() || !k.cy.is_finite() {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !self.translation.is_finite() {
            return Err(Error::invalid("non-finite camera translation"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with world `up` kept upright in the image.
    pub fn look_at(eye: Point3, target: Point3, up: Point3, intrinsics: Intrinsics, width: u32, height: u32) -> Result<Self> {
        let fwd = target - eye;
        if fwd.norm() < 1e-12 {
            return Err(Error::degenerate("look_at target coincides with eye"));
        }
        let z = fwd * (1.0 / fwd.norm());
        let right = z.cross(up);
        if right.norm() < 1e-9 {
            return Err(Error::degenerate("look_at direction parallel to up"));
        }
        let x = right * (1.0 / right.norm());
        let y = z.cross(x);
        let rotation = Mat3::from_rows(x, y, z);
        Ok(CameraPose {
            rotation,
            translation: -rotation.mul_point(eye),
            intrinsics,
            width,
            height,
        })
    }

    pub fn center(&self) -> Point3 {
        -self.rotation.transpose().mul_point(self.translation)
    }

    pub fn to_camera(&self, p: Point3) -> Point3 {
        self.rotation.mul_point(p) + self.translation
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Integer pixel containing `(u, v)`.
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.floor() as u32, self.v.floor() as u32)
    }
}

/// Pinhole projection of a world point. `None` when the point is at or
/// behind the camera plane or lands outside `[0, width) × [0, height)`.
pub fn project_point(p: Point3, pose: &CameraPose) -> Option<Projection> {
    let c = pose.to_camera(p);
    if !(c.z > 0.0) {
        return None;
    }
    let k = &pose.intrinsics;
    let u = k.fx * c.x / c.z + k.cx;
    let v = k.fy * c.y / c.z + k.cy;
    let inside = u >= 0.0 && u < pose.width as f64 && v >= 0.0 && v < pose.height as f64;
    inside.then_some(Projection { u, v, depth: c.z })
}

/// Inverse of [`project_point`] at a known depth.
pub fn unproject(u: f64, v: f64, depth: f64, pose: &CameraPose) -> Point3 {
    let k = &pose.intrinsics;
    let cam = Point3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
    pose.rotation.transpose().mul_point(cam - pose.translation)
}

/// `normal · p = offset`, with `normal` unit length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_count: usize,
}

impl Plane {
    pub fn normal(&self) -> Point3 {
        Point3::from(self.normal)
    }

    pub fn signed_distance(&self, p: Point3) -> f64 {
        self.normal().dot(p) - self.offset
    }

    pub fn flipped(&self) -> Plane {
        Plane {
            normal: (-self.normal()).to_array(),
            offset: -self.offset,
            inlier_count: self.inlier_count,
        }
    }

    /// Angle in radians between the normal and the horizontal plane.
    pub fn elevation(&self) -> f64 {
        self.normal[2].abs().clamp(0.0, 1.0).asin()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_tol: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 500,
            inlier_tol: 0.02,
            seed: 0,
        }
    }
}

/// Random-sample-consensus plane fit followed by a least-squares refit on
/// the winning inlier set. Normals are oriented so the largest of `z`, `y`,
/// `x` (checked in that order) that is nonzero comes out positive.
pub fn fit_dominant_plane(points: &[Point3], params: &RansacParams) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::FitFailure(format!("need at least 3 points, got {}", points.len())));
    }
    if !(params.inlier_tol > 0.0) {
        return Err(Error::invalid("inlier tolerance must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Point3, f64, usize)> = None;
    let extent = Aabb3::from_points(points).map(|b| b.diagonal()).unwrap_or(0.0);
    let min_area = 1e-12 * extent * extent;

    for _ in 0..params.iterations.max(1) {
        let idx = rand::seq::index::sample(&mut rng, points.len(), 3);
        let (a, b, c) = (points[idx.index(0)], points[idx.index(1)], points[idx.index(2)]);
        let n = (b - a).cross(c - a);
        let len = n.norm();
        if !(len > min_area) {
            continue;
        }
        let n = n * (1.0 / len);
        let d = n.dot(a);
        let count = count_inliers(points, n, d, params.inlier_tol);
        if best.is_none_or(|(_, _, bc)| count > bc) {
            best = Some((n, d, count));
        }
    }

    let (n, d, count) = best.ok_or_else(|| Error::FitFailure("all sampled triples are collinear".into()))?;
    let (n, d, count) = match refit(points, n, d, params.inlier_tol) {
        Some((rn, rd)) => {
            let rc = count_inliers(points, rn, rd, params.inlier_tol);
            if rc >= count {
                (rn, rd, rc)
            } else {
                (n, d, count)
            }
        }
        None => (n, d, count),
    };
    Ok(orient(Plane {
        normal: n.to_array(),
        offset: d,
        inlier_count: count,
    }))
}

fn count_inliers(points: &[Point3], n: Point3, d: f64, tol: f64) -> usize {
    points.iter().filter(|p| (n.dot(**p) - d).abs() <= tol).count()
}

fn refit(points: &[Point3], n: Point3, d: f64, tol: f64) -> Option<(Point3, f64)> {
    let inliers: Vec<Point3> = points.iter().copied().filter(|p| (n.dot(*p) - d).abs() <= tol).collect();
    if inliers.len() < 3 {
        return None;
    }
    let mean = inliers.iter().fold(Point3::ORIGIN, |acc, p| acc + *p) * (1.0 / inliers.len() as f64);
    let mut cov = Matrix3::<f64>::zeros();
    for p in &inliers {
        let q = (*p - mean).to_na();
        cov += q * q.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut rn = Point3::from_na(&eig.eigenvectors.column(k).into_owned());
    let len = rn.norm();
    if !(len > 0.5) {
        return None;
    }
    rn = rn * (1.0 / len);
    if rn.dot(n) < 0.0 {
        rn = -rn;
    }
    Some((rn, rn.dot(mean)))
}

fn orient(plane: Plane) -> Plane {
    let [x, y, z] = plane.normal;
    let key = if z.abs() > 1e-9 {
        z
    } else if y.abs() > 1e-9 {
        y
    } else {
        x
    };
    if key < 0.0 {
        plane.flipped()
    } else {
        plane
    }
}
