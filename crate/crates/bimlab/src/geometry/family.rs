//! Cone families: well-separated group cones `S_i`, each holding `m` tube
//! cones `T_{i,j} ⊆ V_{i,j}` spread along a great-circle arc.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{angle_between, angle_to_chord, chord_to_angle, local_ball, Cone, Cylinder, GeometryError, Vec3};
use crate::rng::unit_ball_point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeConstants {
    pub d0: f64,
    pub c0: f64,
    pub c1: f64,
    pub c3: f64,
    /// Local-ball constant used by the cylinder sandwich.
    pub r0: f64,
}

impl Default for ConeConstants {
    fn default() -> Self {
        Self {
            d0: 0.05,
            c0: 0.01,
            c1: 0.005,
            c3: 0.25,
            r0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeFamily {
    pub n: usize,
    pub m: usize,
    pub u1: f64,
    pub consts: ConeConstants,
    /// Group directions `v_i`.
    pub groups: Vec<Vec3>,
    /// Tube directions `v_{i,j}`, `tubes[i][j]`.
    pub tubes: Vec<Vec<Vec3>>,
}

/// Outcome of the exhaustive invariant check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCheck {
    pub group_separation: bool,
    pub nesting: bool,
    pub boundary_margin: bool,
    pub tube_disjoint: bool,
    pub tube_pitch: bool,
}

impl FamilyCheck {
    pub fn all(&self) -> bool {
        self.group_separation && self.nesting && self.boundary_margin && self.tube_disjoint && self.tube_pitch
    }
}

impl ConeFamily {
    fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    pub fn s_radius(&self) -> f64 {
        self.consts.d0 / self.sqrt_n()
    }

    pub fn t_radius(&self) -> f64 {
        self.u1.powi(-(self.n as i32))
    }

    pub fn v_radius(&self) -> f64 {
        self.consts.c0 / (self.m.max(1) as f64 * self.sqrt_n())
    }

    pub fn s_cone(&self, i: usize) -> Cone {
        Cone::at_origin(self.groups[i], self.s_radius()).expect("valid group cone")
    }

    pub fn t_cone(&self, i: usize, j: usize) -> Cone {
        Cone::at_origin(self.tubes[i][j], self.t_radius()).expect("valid tube cone")
    }

    pub fn v_cone(&self, i: usize, j: usize) -> Cone {
        Cone::at_origin(self.tubes[i][j], self.v_radius()).expect("valid tube cone")
    }

    /// Checks every invariant by enumeration over all pairs. Cone
    /// inclusions and separations between cones sharing the origin as
    /// vertex reduce to exact angular comparisons.
    pub fn check(&self) -> FamilyCheck {
        let sn = self.sqrt_n();
        let sep = 12.0 * self.consts.d0 / sn;
        let mut group_separation = true;
        for a in 0..self.groups.len() {
            for b in a + 1..self.groups.len() {
                if (self.groups[a] - self.groups[b]).norm() <= sep {
                    group_separation = false;
                }
            }
        }
        let th_s = chord_to_angle(self.s_radius().min(2.0));
        let th_v = chord_to_angle(self.v_radius().min(2.0));
        let th_t = chord_to_angle(self.t_radius().min(2.0));
        let margin = self.consts.c1 / sn;
        let pitch = self.consts.c1 / (self.m.max(1) as f64 * sn);
        let (mut nesting, mut boundary_margin, mut tube_disjoint, mut tube_pitch) = (true, true, true, true);
        for (i, row) in self.tubes.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let phi = angle_between(v, self.groups[i]);
                if th_t > th_v || phi + th_v > th_s {
                    nesting = false;
                }
                if th_s - phi > std::f64::consts::FRAC_PI_2 {
                    // Distance from v to the cone boundary is at least 1 here.
                    if margin > 1.0 {
                        boundary_margin = false;
                    }
                } else if phi >= th_s || (th_s - phi).sin() < margin {
                    boundary_margin = false;
                }
                for (l, &w) in row.iter().enumerate().skip(j + 1) {
                    let psi = angle_between(v, w);
                    if psi <= 2.0 * th_v {
                        tube_disjoint = false;
                    }
                    // Closest direction of V_{i,j} to v_{i,l}, and vice versa.
                    let gap = angle_to_chord((psi - th_v).max(0.0));
                    if gap < pitch * (l - j) as f64 {
                        tube_pitch = false;
                    }
                }
            }
        }
        FamilyCheck {
            group_separation,
            nesting,
            boundary_margin,
            tube_disjoint,
            tube_pitch,
        }
    }
}

fn fibonacci(n: usize) -> Vec<Vec3> {
    super::DirectionLattice::fibonacci(n).points
}

fn greedy_separated(cands: &[Vec3], want: usize, sep: f64) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::with_capacity(want);
    for &c in cands {
        if out.iter().all(|o| (*o - c).norm() > sep) {
            out.push(c);
            if out.len() == want {
                break;
            }
        }
    }
    out
}

/// Builds a cone family with `n` groups and `m = floor(c3 n)` tubes per
/// group, or reports infeasibility when the constants do not fit.
pub fn build_cone_family(n: usize, u1: f64, consts: ConeConstants) -> Result<ConeFamily, GeometryError> {
    if n == 0 {
        return Err(GeometryError::InvalidArgument("n must be >= 1".into()));
    }
    if !(u1 > 1.0) || !u1.is_finite() {
        return Err(GeometryError::InvalidArgument(format!("u1 = {u1} must exceed 1")));
    }
    let ConeConstants { d0, c0, c1, c3, .. } = consts;
    if !(d0 > 0.0 && c0 > 0.0 && c1 > 0.0 && c3 > 0.0) {
        return Err(GeometryError::InvalidArgument(
            "construction constants must be positive".into(),
        ));
    }
    let sn = (n as f64).sqrt();
    let m = (c3 * n as f64).floor() as usize;
    let s_rad = d0 / sn;
    if s_rad > 2.0 {
        return Err(GeometryError::Infeasible(format!(
            "group cone radius {s_rad} exceeds 2"
        )));
    }
    let sep = 12.0 * d0 / sn;
    let mut groups = Vec::new();
    let mut count = n;
    while count <= 64 * n {
        groups = greedy_separated(&fibonacci(count), n, sep);
        if groups.len() == n {
            break;
        }
        count = count * 3 / 2 + 1;
    }
    if groups.len() < n {
        return Err(GeometryError::Infeasible(format!(
            "cannot place {n} directions at mutual distance > {sep}"
        )));
    }
    let th_s = chord_to_angle(s_rad);
    let v_rad = c0 / (m.max(1) as f64 * sn);
    let th_v = chord_to_angle(v_rad.min(2.0));
    let margin = c1 / sn;
    let half = if margin >= 1.0 {
        -1.0
    } else {
        (th_s - margin.asin()).min(th_s - th_v)
    };
    let tubes: Vec<Vec<Vec3>> = if m == 0 {
        vec![Vec::new(); n]
    } else {
        if !(half > 0.0) {
            return Err(GeometryError::Infeasible(format!(
                "no room for tubes: group half-angle {th_s}, margin {margin}, tube half-angle {th_v}"
            )));
        }
        groups
            .iter()
            .map(|&v| {
                let t = v.any_orthogonal();
                (1..=m)
                    .map(|j| {
                        let phi = -half + (2 * j - 1) as f64 * half / m as f64;
                        v * phi.cos() + t * phi.sin()
                    })
                    .collect()
            })
            .collect()
    };
    let fam = ConeFamily {
        n,
        m,
        u1,
        consts,
        groups,
        tubes,
    };
    let chk = fam.check();
    if !chk.all() {
        return Err(GeometryError::Infeasible(format!("invariants fail: {chk:?}")));
    }
    Ok(fam)
}

/// Sampled check of the cylinder sandwich inside the local ball around `z`:
/// `D(v, u1^-n |z| / 2) ∩ B ⊆ T ∩ B ⊆ D(v, 2 u1^-n |z|) ∩ B`, with
/// `v = v_{i,j}`. Half of the samples are uniform in the ball, half are
/// concentrated near the tube axis where the sets differ.
pub fn sandwich_check<R: Rng + ?Sized>(
    f: &ConeFamily,
    z: Vec3,
    i: usize,
    j: usize,
    samples: usize,
    rng: &mut R,
) -> Result<bool, GeometryError> {
    if i >= f.n || j >= f.m {
        return Err(GeometryError::InvalidArgument(format!("tube ({i}, {j}) out of range")));
    }
    let (center, rad) = local_ball(z, f.n as u32, f.consts.r0)?;
    let v = f.tubes[i][j];
    let tr = f.t_radius();
    let nz = z.norm();
    let inner = Cylinder::new(v, tr * nz / 2.0)?;
    let outer = Cylinder::new(v, 2.0 * tr * nz)?;
    let tube = f.t_cone(i, j);
    let e1 = v.any_orthogonal();
    let e2 = v.cross(e1);
    let ok = |w: Vec3| {
        if (w - center).norm() > rad {
            return true;
        }
        let in_t = super::cone_contains(&tube, w);
        !(inner.contains(w) && !in_t) && !(in_t && !outer.contains(w))
    };
    for k in 0..samples {
        let w = if k % 2 == 0 {
            center + unit_ball_point(rng) * rad
        } else {
            let t = v.dot(center) + rad * (2.0 * rng.random::<f64>() - 1.0);
            let off = 3.0 * tr * nz * rng.random::<f64>();
            let a = std::f64::consts::TAU * rng.random::<f64>();
            v * t + (e1 * a.cos() + e2 * a.sin()) * off
        };
        if !ok(w) {
            return Ok(false);
        }
    }
    Ok(true)
}
