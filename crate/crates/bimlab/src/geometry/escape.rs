//! Escape polylines: from a point of the slit ball, follow successive
//! uncovered cones outward through dyadic scales, then run to a base point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{find_uncovered_cone_at, ConeQuery, PolylineIndex, Vec3};
use crate::brownian::Path3D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EscapeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no uncovered cone at level {level}")]
    NoCone { level: u32 },
    #[error("vertex {index} touches the indexed paths or leaves the domain")]
    VertexBlocked { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscapeConfig {
    /// Coarsest dyadic level; the recursion stops at `y_{n0}`.
    pub n0: u32,
    /// Radius of the ball containing the domain.
    pub domain_radius: f64,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        Self {
            n0: 6,
            domain_radius: 1.0,
        }
    }
}

/// Polyline `x = z_n, y_n, z_{n-1}, y_{n-1}, ..., z_{n0}, y_{n0}, x0` with
/// the dyadic level of each vertex (`x0` carries level 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapePolyline {
    pub vertices: Vec<Vec3>,
    pub levels: Vec<u32>,
}

impl EscapePolyline {
    /// Arc length from the start to each vertex.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.vertices.len());
        for (k, v) in self.vertices.iter().enumerate() {
            if k > 0 {
                acc += v.dist(self.vertices[k - 1]);
            }
            out.push(acc);
        }
        out
    }

    pub fn length(&self) -> f64 {
        self.arc_lengths().last().copied().unwrap_or(0.0)
    }

    /// The polyline as a path with unit time spacing per vertex.
    pub fn to_path(&self) -> Path3D {
        Path3D::uniform(self.vertices.clone(), 1.0).expect("finite vertices")
    }
}

/// Distance to the complement of `B(0, R)` minus the indexed paths.
pub fn domain_distance(idx: &PolylineIndex, domain_radius: f64, x: Vec3) -> f64 {
    (domain_radius - x.norm()).min(idx.distance(x))
}

fn snap(p: Vec3, level: u32) -> Vec3 {
    let s = (level as f64).exp2();
    Vec3::new((p.x * s).round() / s, (p.y * s).round() / s, (p.z * s).round() / s)
}

fn nearest_point(idx: &PolylineIndex, p: Vec3) -> Option<Vec3> {
    let (_, k) = idx.nearest(p)?;
    let s = &idx.segments()[k];
    let ab = s.b - s.a;
    let l2 = ab.norm2();
    let t = if l2 > 0.0 {
        ((p - s.a).dot(ab) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Some(s.a + ab * t)
}

/// Builds the escape polyline from `x` to `x0`. At level `m` the cone has
/// vertex `y_m`, chordal radius `u1^-m` and is certified up to distance
/// `10 (u1/2)^m + 2^{-m+2}`, which covers both the step to `z_{m-1}` and
/// the snap to `y_{m-1}`; it must also stay inside the domain ball.
pub fn build_escape_polyline(
    x: Vec3,
    idx: &PolylineIndex,
    u1: f64,
    x0: Vec3,
    cfg: &EscapeConfig,
) -> Result<EscapePolyline, EscapeError> {
    if !(u1 > 1.0 && u1 < 1.5) {
        return Err(EscapeError::InvalidArgument(format!("u1 = {u1} outside (1, 1.5)")));
    }
    if !x.is_finite() || !x0.is_finite() || !(cfg.domain_radius > 0.0) {
        return Err(EscapeError::InvalidArgument("non-finite input".into()));
    }
    let r_dom = cfg.domain_radius;
    let d = domain_distance(idx, r_dom, x);
    if !(d > 0.0) {
        return Err(EscapeError::InvalidArgument(format!(
            "start has distance {d} to the boundary"
        )));
    }
    let n = 1 + (cfg.n0 as i64).max((-d.log2()).floor() as i64) as u32;
    let mut vertices = vec![x];
    let mut levels = vec![n];
    let mut y = snap(x, n);
    vertices.push(y);
    levels.push(n);
    for m in (cfg.n0 + 1..=n).rev() {
        let step = 10.0 * (u1 / 2.0).powi(m as i32);
        let reach = step + 4.0 * (-(m as f64)).exp2();
        let mut q = ConeQuery {
            vertex: y,
            radius: u1.powi(-(m as i32)).min(2.0),
            reach,
            preferred: None,
            container: Some((Vec3::ZERO, r_dom)),
            lattice_covering: None,
        };
        let away = nearest_point(idx, y).and_then(|p| (y - p).normalized());
        let mut v = None;
        if let Some(v0) = away {
            q.preferred = Some((v0, 0.0));
            v = find_uncovered_cone_at(idx, &q);
            q.preferred = None;
        }
        let v = match v.or_else(|| find_uncovered_cone_at(idx, &q)) {
            Some(v) => v,
            None => return Err(EscapeError::NoCone { level: m }),
        };
        let z = y + v * step;
        vertices.push(z);
        levels.push(m - 1);
        y = snap(z, m - 1);
        vertices.push(y);
        levels.push(m - 1);
    }
    for (k, v) in vertices.iter().enumerate() {
        if !(domain_distance(idx, r_dom, *v) > 0.0) {
            return Err(EscapeError::VertexBlocked { index: k });
        }
    }
    vertices.push(x0);
    levels.push(0);
    Ok(EscapePolyline { vertices, levels })
}

/// `l(x, x') / dist(x', boundary)^beta` at every vertex `x'` of the
/// polyline, with `l` the arc length from the start (0 at the start).
pub fn holder_ratios(p: &EscapePolyline, idx: &PolylineIndex, domain_radius: f64, beta: f64) -> Vec<f64> {
    p.arc_lengths()
        .iter()
        .zip(&p.vertices)
        .map(|(&l, &v)| {
            if l == 0.0 {
                0.0
            } else {
                l / domain_distance(idx, domain_radius, v).powf(beta)
            }
        })
        .collect()
}

/// A priori bound on [`holder_ratios`] for any start and any traces, given
/// the distance of `x0` to the boundary. After level `m` the arc length is at
/// most `sqrt(3)/2 2^-m + sum_{i >= m} (10 (u1/2)^i + sqrt(3) 2^-i)`, while
/// the certified cone keeps `z_{m-1}` at distance `4 2^-m` from the boundary
/// and the snap keeps `y_{m-1}` at `(4 - sqrt(3)) 2^-m`; the first snap keeps
/// `y_n` at `(1 - sqrt(3)/2) 2^-n`. Infinite when `u1 2^(beta - 1) >= 1`.
pub fn holder_constant_bound(u1: f64, beta: f64, n0: u32, domain_radius: f64, dist_x0: f64) -> f64 {
    let h = 3f64.sqrt();
    let q = u1 / 2.0;
    if !(u1 > 1.0 && q < 1.0 && beta > 0.0 && beta <= 1.0 && dist_x0 > 0.0) || u1 * (beta - 1.0).exp2() >= 1.0 {
        return f64::INFINITY;
    }
    let arc = |m: i32| 0.5 * h * (-m as f64).exp2() + 10.0 * q.powi(m) / (1.0 - q) + 2.0 * h * (-m as f64).exp2();
    let lo = n0 as i32 + 1;
    let mut best = 0.5 * h / (1.0 - 0.5 * h).powf(beta) * (-(lo as f64) * (1.0 - beta)).exp2();
    for m in lo..lo + 400 {
        let s = (-m as f64).exp2();
        best = best
            .max(arc(m) / (4.0 * s).powf(beta))
            .max(arc(m) / ((4.0 - h) * s).powf(beta));
    }
    best.max((arc(lo) + 2.0 * domain_radius) / dist_x0.powf(beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(a: Vec3, b: Vec3, pieces: usize, dt: f64) -> PolylineIndex {
        let pts = (0..=pieces).map(|k| a + (b - a) * (k as f64 / pieces as f64)).collect();
        PolylineIndex::build(&[Path3D::uniform(pts, dt).unwrap()], None)
    }

    fn check_steps(p: &EscapePolyline, u1: f64) {
        // Segment at level m: step 10 (u1/2)^m plus a snap of at most sqrt(3) 2^-m.
        for k in 1..p.vertices.len() - 1 {
            let m = p.levels[k - 1].max(p.levels[k]) as i32;
            let len = p.vertices[k].dist(p.vertices[k - 1]);
            let bound = 10.0 * (u1 / 2.0).powi(m) + 3.0 * (-(m as f64)).exp2();
            assert!(len <= bound, "segment {k} length {len} > {bound}");
        }
    }

    #[test]
    fn empty_paths_give_short_polyline() {
        let idx = PolylineIndex::build(&[], None);
        let x = Vec3::new(0.1, 0.2, -0.1);
        let x0 = Vec3::new(0.0, 0.0, 0.5);
        let p = build_escape_polyline(x, &idx, 1.2, x0, &EscapeConfig::default()).unwrap();
        assert_eq!(p.vertices[0], x);
        assert_eq!(*p.vertices.last().unwrap(), x0);
        assert!(p.vertices.iter().all(|v| v.norm() < 1.0));
        check_steps(&p, 1.2);
        assert!(p.length() < 2.0);
    }

    #[test]
    fn near_segment_start_has_dyadic_levels() {
        let idx = line(Vec3::new(-5.0, 0.0, 0.0), Vec3::new(5.0, 0.0, 0.0), 4000, 1e-8);
        let x = Vec3::new(0.3, 1.0 / 32.0 + 1e-3, 0.0);
        let cfg = EscapeConfig {
            n0: 1,
            domain_radius: 100.0,
        };
        let u1 = 1.2;
        let p = build_escape_polyline(x, &idx, u1, Vec3::new(0.0, 3.0, 0.0), &cfg).unwrap();
        let lv: Vec<u32> = p.levels.iter().copied().filter(|&l| l > 0).collect();
        assert_eq!(lv[0], 5);
        assert_eq!(*lv.last().unwrap(), 1);
        check_steps(&p, u1);
        for v in &p.vertices[..p.vertices.len() - 1] {
            assert!(idx.distance(*v) > 0.0);
        }
        // Level spacing decreases monotonically with the level.
        let steps: Vec<f64> = (2..=6).rev().map(|m: i32| 10.0 * (u1 / 2.0).powi(m)).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn holder_ratios_respect_a_priori_bound() {
        let idx = line(Vec3::new(-0.9, 0.0, 0.0), Vec3::new(0.9, 0.0, 0.0), 2000, 1e-8);
        let cfg = EscapeConfig::default();
        let u1 = 1.03;
        let x0 = Vec3::new(0.0, 0.0, 0.5);
        let bound = holder_constant_bound(u1, 0.9, cfg.n0, 1.0, domain_distance(&idx, 1.0, x0));
        assert!(bound.is_finite());
        for k in 3..9 {
            let x = Vec3::new(0.2, (-(k as f64)).exp2() * 1.3, 0.05);
            let p = build_escape_polyline(x, &idx, u1, x0, &cfg).unwrap();
            let r = holder_ratios(&p, &idx, 1.0, 0.9);
            assert_eq!(r[0], 0.0);
            assert!(r.iter().all(|v| *v <= bound), "{r:?} > {bound}");
        }
        assert!(holder_constant_bound(1.2, 0.9, 6, 1.0, 0.5).is_infinite());
    }

    #[test]
    fn rejects_points_on_paths() {
        let idx = line(Vec3::ZERO, Vec3::new(0.5, 0.0, 0.0), 10, 1e-6);
        let r = build_escape_polyline(
            Vec3::new(0.25, 0.0, 0.0),
            &idx,
            1.2,
            Vec3::ZERO,
            &EscapeConfig::default(),
        );
        assert!(matches!(r, Err(EscapeError::InvalidArgument(_))));
        let r = build_escape_polyline(
            Vec3::new(0.0, 0.5, 0.0),
            &idx,
            1.7,
            Vec3::ZERO,
            &EscapeConfig::default(),
        );
        assert!(r.is_err());
    }
}
