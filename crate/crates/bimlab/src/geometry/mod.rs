//! Geometric primitives: vectors, cones, cylinders, local balls, and the
//! distance computations used by sausage and cone certificates.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod conesearch;
mod escape;
mod family;
mod index;

pub use conesearch::{
    cone_clearance, cone_is_clear, find_uncovered_cone, find_uncovered_cone_at, ConeQuery, DirectionLattice,
};
pub use escape::{
    build_escape_polyline, domain_distance, holder_constant_bound, holder_ratios, EscapeConfig, EscapeError,
    EscapePolyline,
};
pub use family::{build_cone_family, sandwich_check, ConeConstants, ConeFamily, FamilyCheck};
pub use index::{sampling_guard, sausage_contains, PolylineIndex, Segment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible cone family: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    /// Some unit vector orthogonal to `self` (assumed nonzero).
    pub fn any_orthogonal(self) -> Vec3 {
        let a = if self.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        self.cross(a).normalized().expect("nonzero input")
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Half-angle of a cone whose chordal radius on the unit sphere is `r`.
#[inline]
pub fn chord_to_angle(r: f64) -> f64 {
    2.0 * (r.min(2.0) / 2.0).asin()
}

/// Chordal distance between unit vectors separated by angle `theta`.
#[inline]
pub fn angle_to_chord(theta: f64) -> f64 {
    2.0 * (theta.clamp(0.0, std::f64::consts::PI) / 2.0).sin()
}

/// Angle between two nonzero vectors.
#[inline]
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let c = a.cross(b).norm();
    let d = a.dot(b);
    c.atan2(d)
}

/// Cone `{vertex + t u : t > 0, |u - direction| <= radius}`, optionally
/// truncated at distance `length` from the vertex. The vertex is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub vertex: Vec3,
    pub direction: Vec3,
    pub radius: f64,
    pub length: Option<f64>,
}

impl Cone {
    pub fn new(vertex: Vec3, direction: Vec3, radius: f64) -> Result<Self, GeometryError> {
        let dir = direction
            .normalized()
            .ok_or_else(|| GeometryError::InvalidArgument("zero cone direction".into()))?;
        if !(radius > 0.0 && radius <= 2.0) {
            return Err(GeometryError::InvalidArgument(format!(
                "cone radius {radius} outside (0, 2]"
            )));
        }
        Ok(Self {
            vertex,
            direction: dir,
            radius,
            length: None,
        })
    }

    pub fn at_origin(direction: Vec3, radius: f64) -> Result<Self, GeometryError> {
        Self::new(Vec3::ZERO, direction, radius)
    }

    pub fn truncated(mut self, length: f64) -> Self {
        self.length = Some(length);
        self
    }

    pub fn half_angle(&self) -> f64 {
        chord_to_angle(self.radius)
    }
}

pub fn cone_contains(c: &Cone, x: Vec3) -> bool {
    let d = x - c.vertex;
    let n = d.norm();
    if n == 0.0 {
        return false;
    }
    if let Some(l) = c.length {
        if n > l {
            return false;
        }
    }
    (d / n - c.direction).norm() <= c.radius
}

/// Infinite cylinder: points within `radius` of the line through the origin
/// spanned by `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub direction: Vec3,
    pub radius: f64,
}

impl Cylinder {
    pub fn new(direction: Vec3, radius: f64) -> Result<Self, GeometryError> {
        let dir = direction
            .normalized()
            .ok_or_else(|| GeometryError::InvalidArgument("zero cylinder direction".into()))?;
        if !(radius > 0.0) {
            return Err(GeometryError::InvalidArgument("cylinder radius must be > 0".into()));
        }
        Ok(Self { direction: dir, radius })
    }

    pub fn contains(&self, x: Vec3) -> bool {
        let along = x.dot(self.direction);
        (x - self.direction * along).norm() <= self.radius
    }
}

/// Local ball `B(z, r0 |z| / sqrt(n))` around `z`.
pub fn local_ball(z: Vec3, n: u32, r0: f64) -> Result<(Vec3, f64), GeometryError> {
    let nz = z.norm();
    if !(nz > 0.0) || n == 0 || !(r0 > 0.0) || (n as f64) <= 4.0 * r0 * r0 {
        return Err(GeometryError::InvalidArgument(format!(
            "local ball needs |z| > 0, n >= 1, r0 > 0 and n > 4 r0^2 (|z|={nz}, n={n}, r0={r0})"
        )));
    }
    Ok((z, r0 * nz / (n as f64).sqrt()))
}

/// Distance from `p` to the segment `[a, b]`.
#[inline]
pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    point_segment_distance2(p, a, b).sqrt()
}

#[inline]
pub fn point_segment_distance2(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let ap = p - a;
    let l2 = ab.norm2();
    if l2 == 0.0 {
        return ap.norm2();
    }
    let t = (ap.dot(ab) / l2).clamp(0.0, 1.0);
    (ap - ab * t).norm2()
}

/// Distance from `p` to the closed solid cone with vertex `vertex`, axis `dir`
/// (unit), half-angle `theta` (at most pi/2) and optional length cap.
pub fn point_cone_distance(p: Vec3, vertex: Vec3, dir: Vec3, theta: f64, length: Option<f64>) -> f64 {
    let q = p - vertex;
    let s = q.norm();
    if s == 0.0 {
        return 0.0;
    }
    let phi = angle_between(q, dir);
    let l = length.unwrap_or(f64::INFINITY);
    if phi <= theta {
        return (s - l).max(0.0);
    }
    let gap = phi - theta;
    if gap >= std::f64::consts::FRAC_PI_2 {
        return s;
    }
    let t = s * gap.cos();
    if t <= l {
        s * gap.sin()
    } else {
        (s * s + l * l - 2.0 * s * l * gap.cos()).max(0.0).sqrt()
    }
}

/// Distance from segment `[a, b]` to the solid cone described as in
/// [`point_cone_distance`]. The cone is convex for `theta <= pi/2`, so the
/// distance is a convex function along the segment; golden-section search
/// locates its minimum.
pub fn segment_cone_distance(a: Vec3, b: Vec3, vertex: Vec3, dir: Vec3, theta: f64, length: Option<f64>) -> f64 {
    let f = |t: f64| point_cone_distance(a + (b - a) * t, vertex, dir, theta, length);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let scale = (b - a).norm();
    while (hi - lo) * scale > 1e-13 && hi - lo > 1e-15 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    f(0.0).min(f(1.0)).min(f1).min(f2)
}
