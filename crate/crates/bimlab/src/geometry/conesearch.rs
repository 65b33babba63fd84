//! Uncovered-cone search on a spherical direction lattice.
//!
//! Every indexed segment blocks the directions whose cone comes within the
//! segment's sampling guard of it. Blocked lattice directions are marked
//! conservatively (a superset of the truly blocked set) and each surviving
//! candidate is then certified by an exact segment-to-cone distance check.

use rustc_hash::FxHashMap;

use super::{
    angle_between, angle_to_chord, chord_to_angle, point_cone_distance, point_segment_distance, segment_cone_distance,
    Cone, PolylineIndex, Vec3,
};

/// Fibonacci lattice on the unit sphere with a grid hash for neighborhood
/// queries.
#[derive(Debug, Clone)]
pub struct DirectionLattice {
    pub points: Vec<Vec3>,
    cell: f64,
    grid: FxHashMap<[i32; 3], Vec<u32>>,
}

impl DirectionLattice {
    pub fn fibonacci(n: usize) -> Self {
        let n = n.max(1);
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let points: Vec<Vec3> = (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * i as f64;
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        let cell = (4.0 * std::f64::consts::PI / n as f64).sqrt().max(1e-6);
        let mut grid: FxHashMap<[i32; 3], Vec<u32>> = FxHashMap::default();
        for (i, p) in points.iter().enumerate() {
            grid.entry(Self::key(*p, cell)).or_default().push(i as u32);
        }
        Self { points, cell, grid }
    }

    /// Lattice whose covering radius (chordal) is at most `c`.
    pub fn with_covering_radius(c: f64) -> Self {
        let n = (4.0 * std::f64::consts::PI * (0.75 / c).powi(2)).ceil();
        Self::fibonacci(n.clamp(1.0, 5e6) as usize)
    }

    fn key(p: Vec3, cell: f64) -> [i32; 3] {
        [
            (p.x / cell).floor() as i32,
            (p.y / cell).floor() as i32,
            (p.z / cell).floor() as i32,
        ]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Calls `f` on every lattice index within angle `ang` of the unit vector `u`.
    pub fn for_each_within(&self, u: Vec3, ang: f64, mut f: impl FnMut(usize)) {
        if ang >= std::f64::consts::PI {
            (0..self.points.len()).for_each(f);
            return;
        }
        let chord = angle_to_chord(ang.max(0.0));
        let span = (chord / self.cell).ceil() as i32;
        // A hash lookup costs several point tests; scan when cheaper.
        let cells = (2 * span as usize + 1).pow(3);
        if span > 12 || 4 * cells > self.points.len() {
            let c2 = chord * chord;
            for (i, p) in self.points.iter().enumerate() {
                if (*p - u).norm2() <= c2 {
                    f(i);
                }
            }
            return;
        }
        let k = Self::key(u, self.cell);
        let c2 = chord * chord;
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    if let Some(list) = self.grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &i in list {
                            if (self.points[i as usize] - u).norm2() <= c2 {
                                f(i as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Parameters of a cone search with an arbitrary vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeQuery {
    pub vertex: Vec3,
    /// Chordal radius of the cone.
    pub radius: f64,
    /// Length cap; the certified region is the cone within this distance.
    pub reach: f64,
    /// Optional `(v0, t)`: only directions with `v . v0 > t` qualify, and the
    /// largest `v . v0` is preferred.
    pub preferred: Option<(Vec3, f64)>,
    /// Optional ball `(center, radius)` that must contain the truncated cone.
    pub container: Option<(Vec3, f64)>,
    /// Lattice covering radius; defaults to `radius / 2`.
    pub lattice_covering: Option<f64>,
}

impl ConeQuery {
    pub fn at_origin(radius: f64, reach: f64) -> Self {
        Self {
            vertex: Vec3::ZERO,
            radius,
            reach,
            preferred: None,
            container: None,
            lattice_covering: None,
        }
    }
}

/// Angle between unit `w` and the great-circle arc from unit `a` to unit `b`.
fn angle_to_arc(w: Vec3, a: Vec3, b: Vec3) -> f64 {
    let n = a.cross(b);
    let nn = n.norm();
    if nn < 1e-14 {
        if a.dot(b) > 0.0 {
            return angle_between(w, a).min(angle_between(w, b));
        }
        return 0.0;
    }
    let nh = n / nn;
    let h = w.dot(nh);
    let wp = w - nh * h;
    if wp.norm() < 1e-15 {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.cross(wp).dot(nh) >= 0.0 && wp.cross(b).dot(nh) >= 0.0 {
        h.abs().atan2(wp.norm())
    } else {
        angle_between(w, a).min(angle_between(w, b))
    }
}

/// Largest distance from `container_center` over the truncated cone.
fn cone_extent(vertex: Vec3, dir: Vec3, theta: f64, reach: f64, container_center: Vec3) -> f64 {
    let y = vertex - container_center;
    let ny = y.norm();
    if ny == 0.0 {
        return reach;
    }
    let psi = angle_between(dir, y);
    let gap = (psi - theta).max(0.0);
    (ny * ny + reach * reach + 2.0 * reach * ny * gap.cos()).max(0.0).sqrt()
}

/// Exact clearance of a cone: the minimum over indexed segments of
/// (segment-to-cone distance minus the segment's sampling guard). Segments
/// farther than the length cap plus their guard cannot matter and are
/// skipped. Positive means the cone is certified uncovered.
pub fn cone_clearance(idx: &PolylineIndex, cone: &Cone) -> f64 {
    let theta = cone.half_angle().min(std::f64::consts::FRAC_PI_2);
    let reach = cone.length.unwrap_or(f64::INFINITY);
    let mut best = f64::INFINITY;
    idx.visit_clusters(
        cone.vertex,
        reach,
        -1.0,
        |_, _, _| {},
        |s| {
            let d = segment_cone_distance(s.a, s.b, cone.vertex, cone.direction, theta, cone.length);
            best = best.min(d - s.guard());
        },
    );
    best
}

/// Whether [`cone_clearance`] is positive, pruning index nodes whose
/// bounding ball is clear of the cone and stopping at the first blocking
/// segment.
pub fn cone_is_clear(idx: &PolylineIndex, cone: &Cone) -> bool {
    let theta = cone.half_angle().min(std::f64::consts::FRAC_PI_2);
    let reach = cone.length.unwrap_or(f64::INFINITY);
    !idx.any_segment(
        cone.vertex,
        reach,
        |c, rad, g| point_cone_distance(c, cone.vertex, cone.direction, theta, cone.length) > rad + g,
        |s| segment_cone_distance(s.a, s.b, cone.vertex, cone.direction, theta, cone.length) - s.guard() <= 0.0,
    )
}

/// Search for a direction `v` such that the cone `C(v, radius)` with the
/// query's vertex, truncated at `reach`, keeps distance greater than the
/// sampling guard from every indexed segment.
pub fn find_uncovered_cone_at(idx: &PolylineIndex, q: &ConeQuery) -> Option<Vec3> {
    if !(q.radius > 0.0 && q.radius <= 2.0) {
        return None;
    }
    let theta = chord_to_angle(q.radius);
    if theta > std::f64::consts::FRAC_PI_2 + 1e-12 {
        // Wider than a half space; certification requires a convex cone.
        return None;
    }
    let covering = q.lattice_covering.unwrap_or(q.radius / 2.0);
    let mut lattice = DirectionLattice::with_covering_radius(covering);
    if lattice.len() < 2000 {
        lattice = DirectionLattice::fibonacci(2000);
    }
    let mut blocked = vec![false; lattice.len()];
    let mut all_blocked = false;
    let kappa = (0.25 * theta).min(0.05);
    let mut blobs = Vec::new();
    idx.visit_clusters(
        q.vertex,
        q.reach,
        kappa,
        |c, rad, g| blobs.push((c, rad, g)),
        |s| {
            if all_blocked {
                return;
            }
            let g = s.guard();
            let dmin = point_segment_distance(q.vertex, s.a, s.b);
            if dmin > q.reach + g {
                return;
            }
            if dmin <= g {
                all_blocked = true;
                return;
            }
            let a = s.a - q.vertex;
            let b = s.b - q.vertex;
            let (an, bn) = (a.norm(), b.norm());
            let alpha = (g / dmin).min(1.0).asin();
            let (ah, bh) = (a / an, b / bn);
            let half = 0.5 * angle_between(ah, bh);
            let mid = (ah + bh).normalized().unwrap_or(ah);
            let lim = theta + alpha;
            lattice.for_each_within(mid, half + lim + 1e-12, |i| {
                if !blocked[i] && angle_to_arc(lattice.points[i], ah, bh) <= lim {
                    blocked[i] = true;
                }
            });
        },
    );
    if all_blocked {
        return None;
    }
    for (c, rad, g) in blobs {
        let rel = c - q.vertex;
        let d = rel.norm();
        let spread = (rad / d).min(1.0).asin() + (g / (d - rad)).min(1.0).asin();
        lattice.for_each_within(rel / d, theta + spread, |i| blocked[i] = true);
    }
    let mut cands: Vec<usize> = (0..lattice.len())
        .filter(|&i| !blocked[i])
        .filter(|&i| {
            let w = lattice.points[i];
            if let Some((v0, t)) = q.preferred {
                if w.dot(v0) <= t {
                    return false;
                }
            }
            if let Some((c, r)) = q.container {
                if cone_extent(q.vertex, w, theta, q.reach, c) >= r {
                    return false;
                }
            }
            true
        })
        .collect();
    if let Some((v0, _)) = q.preferred {
        cands.sort_by(|&i, &j| lattice.points[j].dot(v0).total_cmp(&lattice.points[i].dot(v0)));
    }
    for i in cands {
        let mut cone = Cone::new(q.vertex, lattice.points[i], q.radius).ok()?;
        if q.reach.is_finite() {
            cone = cone.truncated(q.reach);
        }
        if cone_is_clear(idx, &cone) {
            return Some(cone.direction);
        }
    }
    None
}

/// Direction `v` with `C(v, u1^-n)` (vertex at the origin) inside `B(0, 2)`
/// at distance greater than the sampling guard from the indexed paths,
/// optionally with `v . v0 > t`.
pub fn find_uncovered_cone(idx: &PolylineIndex, n: u32, u1: f64, preferred: Option<(Vec3, f64)>) -> Option<Vec3> {
    if !(u1 > 1.0) {
        return None;
    }
    let mut q = ConeQuery::at_origin(u1.powi(-(n as i32)).min(2.0), 2.0);
    q.preferred = preferred;
    find_uncovered_cone_at(idx, &q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::Path3D;
    use crate::geometry::cone_contains;
    use crate::rng::{unit_vector, RngStream};

    fn segment_path(a: Vec3, b: Vec3, pieces: usize, dt: f64) -> Path3D {
        let pts = (0..=pieces).map(|k| a + (b - a) * (k as f64 / pieces as f64)).collect();
        Path3D::uniform(pts, dt).unwrap()
    }

    #[test]
    fn pruned_clearance_matches_exact() {
        let s = RngStream::new(41, 0);
        let paths: Vec<Path3D> = (0..3)
            .map(|i| crate::brownian::sample_until_exit(Vec3::ZERO, 1.0, 1e-4, &s.substream(i)))
            .collect();
        let idx = PolylineIndex::build(&paths, None);
        let mut rng = s.labeled("cones").rng();
        let mut clear = 0;
        for _ in 0..400 {
            let v = unit_vector(&mut rng) * 0.5;
            let dir = unit_vector(&mut rng);
            let r = 0.05 + 1.5 * rand::Rng::random::<f64>(&mut rng);
            let mut c = Cone::new(v, dir, r).unwrap();
            if rand::Rng::random::<bool>(&mut rng) {
                c = c.truncated(0.3);
            }
            let exact = cone_clearance(&idx, &c) > 0.0;
            assert_eq!(cone_is_clear(&idx, &c), exact);
            clear += usize::from(exact);
        }
        assert!(clear > 0 && clear < 400, "{clear}");
    }

    #[test]
    fn lattice_covering_radius() {
        let c = 0.05;
        let lat = DirectionLattice::with_covering_radius(c);
        let mut rng = RngStream::new(3, 3).rng();
        for _ in 0..20_000 {
            let u = unit_vector(&mut rng);
            let d = lat.points.iter().map(|p| (*p - u).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= c, "covering radius exceeded: {d}");
        }
    }

    #[test]
    fn lattice_neighborhood_matches_scan() {
        let lat = DirectionLattice::fibonacci(5000);
        let mut rng = RngStream::new(4, 4).rng();
        for k in 0..50 {
            let u = unit_vector(&mut rng);
            let ang = 0.02 + 0.05 * k as f64;
            let mut got = Vec::new();
            lat.for_each_within(u, ang, |i| got.push(i));
            got.sort();
            let chord = angle_to_chord(ang);
            let want: Vec<usize> = (0..lat.len())
                .filter(|&i| (lat.points[i] - u).norm() <= chord)
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn arc_angle_matches_dense_scan() {
        let mut rng = RngStream::new(5, 5).rng();
        for _ in 0..200 {
            let a = unit_vector(&mut rng);
            let b = (a + unit_vector(&mut rng) * 0.7).normalized().unwrap();
            let w = unit_vector(&mut rng);
            let exact = angle_to_arc(w, a, b);
            let scan = (0..=4000)
                .map(|k| {
                    let t = k as f64 / 4000.0;
                    angle_between(w, a * (1.0 - t) + b * t)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((exact - scan).abs() < 1e-5, "{exact} vs {scan}");
        }
    }

    #[test]
    fn empty_path_set_gives_a_direction() {
        let idx = PolylineIndex::build(&[], None);
        assert!(find_uncovered_cone(&idx, 5, 1.3, None).is_some());
    }

    #[test]
    fn x_axis_path_is_avoided() {
        let p = segment_path(Vec3::new(0.2, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), 200, 1e-6);
        let idx = PolylineIndex::build(std::slice::from_ref(&p), None);
        let v = find_uncovered_cone(&idx, 6, 1.3, None).expect("cone");
        let r = 1.3f64.powi(-6);
        let cone = Cone::at_origin(v, r).unwrap().truncated(2.0);
        assert!(p.points.iter().all(|x| !cone_contains(&cone, *x)));
        assert!(cone_clearance(&idx, &cone) > 0.0);
        assert!(!cone_contains(&cone, Vec3::new(1.0, 0.0, 0.0)));
    }

    #[test]
    fn preferred_direction_is_honored() {
        let p = segment_path(Vec3::new(0.2, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), 200, 1e-6);
        let idx = PolylineIndex::build(&[p], None);
        let v0 = Vec3::new(-1.0, 0.0, 0.0);
        let v = find_uncovered_cone(&idx, 6, 1.3, Some((v0, 0.9))).expect("cone");
        assert!(v.dot(v0) > 0.9);
    }

    #[test]
    fn vertex_inside_guard_fails() {
        // A segment through the origin blocks every cone with vertex 0.
        let p = segment_path(Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 10, 1e-4);
        let idx = PolylineIndex::build(&[p], None);
        assert!(find_uncovered_cone(&idx, 6, 1.3, None).is_none());
    }

    #[test]
    fn container_keeps_cone_inside_ball() {
        let idx = PolylineIndex::build(&[], None);
        let mut q = ConeQuery::at_origin(0.2, 0.5);
        q.vertex = Vec3::new(0.7, 0.0, 0.0);
        q.container = Some((Vec3::ZERO, 1.0));
        let v = find_uncovered_cone_at(&idx, &q).expect("cone");
        let theta = chord_to_angle(0.2);
        assert!(cone_extent(q.vertex, v, theta, 0.5, Vec3::ZERO) < 1.0);
        // Dense check of the cap.
        let cone = Cone::new(q.vertex, v, 0.2).unwrap().truncated(0.5);
        let mut rng = RngStream::new(1, 9).rng();
        for _ in 0..5000 {
            let p = q.vertex + unit_vector(&mut rng) * 0.5;
            if cone_contains(&cone, p) {
                assert!(p.norm() < 1.0);
            }
        }
    }
}
