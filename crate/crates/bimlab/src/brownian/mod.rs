//! Seeded Brownian paths, exact annulus and sphere-chain laws,
//! walk-on-spheres sampling and the cylinder hitting estimates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_segment_distance, sampling_guard, Vec3};
use crate::rng::{gaussian3, RngStream};

mod cylinder;
mod exact;
mod wos;

pub use cylinder::{
    cylinder_ode_profile, default_cylinder_start, mc_cylinder_hit, mc_cylinder_hit_from, mc_sausage_confinement,
    CylinderProfile,
};
pub use exact::{
    annulus_exit_prob, mc_sphere_chain, sample_chain_step, simulate_sphere_chain, sphere_chain_downstep_prob,
    sphere_chain_mgf_exponent, sphere_chain_step_mgf, ChainStats,
};
pub use wos::{walk_on_spheres, walk_on_spheres_with, DistanceField, WosConfig, WosOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrownianError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

/// Sample times of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Timing {
    Uniform { dt: f64 },
    Explicit { times: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPath")]
pub struct Path3D {
    pub points: Vec<Vec3>,
    pub timing: Timing,
    pub provenance: Option<RngStream>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPath {
    points: Vec<Vec3>,
    timing: Timing,
    #[serde(default)]
    provenance: Option<RngStream>,
}

impl TryFrom<RawPath> for Path3D {
    type Error = BrownianError;

    fn try_from(r: RawPath) -> Result<Self, Self::Error> {
        let p = Path3D {
            points: r.points,
            timing: r.timing,
            provenance: r.provenance,
        };
        p.validate()?;
        Ok(p)
    }
}

impl Path3D {
    pub fn uniform(points: Vec<Vec3>, dt: f64) -> Result<Self, BrownianError> {
        let p = Self {
            points,
            timing: Timing::Uniform { dt },
            provenance: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_times(points: Vec<Vec3>, times: Vec<f64>) -> Result<Self, BrownianError> {
        let p = Self {
            points,
            timing: Timing::Explicit { times },
            provenance: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_provenance(mut self, s: RngStream) -> Self {
        self.provenance = Some(s);
        self
    }

    pub fn validate(&self) -> Result<(), BrownianError> {
        if self.points.is_empty() {
            return Err(BrownianError::InvalidPath("a path needs at least one point".into()));
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(BrownianError::InvalidPath(format!("point {i} is not finite")));
        }
        match &self.timing {
            Timing::Uniform { dt } => {
                if !(*dt > 0.0 && dt.is_finite()) {
                    return Err(BrownianError::InvalidPath(format!("dt = {dt} must be positive")));
                }
            }
            Timing::Explicit { times } => {
                if times.len() != self.points.len() {
                    return Err(BrownianError::InvalidPath(format!(
                        "{} times for {} points",
                        times.len(),
                        self.points.len()
                    )));
                }
                if !times.iter().all(|t| t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(BrownianError::InvalidPath(
                        "times must be finite and strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, BrownianError> {
        serde_json::from_str(s).map_err(|e| BrownianError::InvalidPath(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Time of sample `i`.
    pub fn time(&self, i: usize) -> f64 {
        match &self.timing {
            Timing::Uniform { dt } => i as f64 * dt,
            Timing::Explicit { times } => times[i] - times[0],
        }
    }

    /// Duration of the step from sample `i` to sample `i + 1`.
    pub fn step_dt(&self, i: usize) -> f64 {
        match &self.timing {
            Timing::Uniform { dt } => *dt,
            Timing::Explicit { times } => times[i + 1] - times[i],
        }
    }

    pub fn end(&self) -> Vec3 {
        *self.points.last().expect("non-empty path")
    }
}

/// Gaussian-increment path from `start` until the first sample with
/// `|x| >= radius`; that sample is moved back along the last step onto the
/// sphere.
pub fn sample_until_exit(start: Vec3, radius: f64, dt: f64, stream: &RngStream) -> Path3D {
    let mut rng = stream.rng();
    let sd = dt.sqrt();
    let mut pts = vec![start];
    let r2 = radius * radius;
    let mut x = start;
    if x.norm2() < r2 {
        loop {
            let y = x + gaussian3(&mut rng) * sd;
            if y.norm2() >= r2 {
                pts.push(project_to_sphere(x, y, radius));
                break;
            }
            pts.push(y);
            x = y;
        }
    }
    Path3D {
        points: pts,
        timing: Timing::Uniform { dt },
        provenance: Some(*stream),
    }
}

/// Point where the segment from `x` (inside) to `y` (outside) meets the
/// sphere of the given radius.
pub(crate) fn project_to_sphere(x: Vec3, y: Vec3, radius: f64) -> Vec3 {
    let d = y - x;
    let a = d.norm2();
    let b = x.dot(d);
    let c = x.norm2() - radius * radius;
    let t = if a > 0.0 {
        ((-b + (b * b - a * c).max(0.0).sqrt()) / a).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let p = x + d * t;
    let n = p.norm();
    if n > 0.0 {
        p * (radius / n)
    } else {
        p
    }
}

/// Brownian-bridge refinement: every step for which `needs(a, b, dt)` holds
/// is split at its midpoint, drawn from the exact bridge law, recursively
/// until the predicate fails or the step would drop below `dt_min`. Step `i`
/// draws from its own substream, so the result does not depend on the order
/// of refinement.
pub fn refine_path(
    path: &Path3D,
    mut needs: impl FnMut(Vec3, Vec3, f64) -> bool,
    dt_min: f64,
    stream: &RngStream,
) -> Path3D {
    let mut pts = vec![path.points[0]];
    let mut times = vec![0.0];
    for i in 0..path.len() - 1 {
        let (a, b) = (path.points[i], path.points[i + 1]);
        let t0 = path.time(i);
        let dt = path.step_dt(i);
        if !needs(a, b, dt) || dt / 2.0 < dt_min {
            pts.push(b);
            times.push(t0 + dt);
            continue;
        }
        let mut rng = stream.substream(i as u64).rng();
        // Depth-first so the output stays in time order.
        let mut stack = vec![(a, b, t0, dt)];
        while let Some((a, b, t, h)) = stack.pop() {
            if h / 2.0 >= dt_min && needs(a, b, h) {
                let mid = (a + b) * 0.5 + gaussian3(&mut rng) * (h / 4.0).sqrt();
                stack.push((mid, b, t + h / 2.0, h / 2.0));
                stack.push((a, mid, t, h / 2.0));
            } else {
                pts.push(b);
                times.push(t + h);
            }
        }
    }
    Path3D {
        points: pts,
        timing: Timing::Explicit { times },
        provenance: path.provenance,
    }
}

/// Refines the steps whose sampling guard is at least `1/8` of their
/// distance to `center`.
pub fn refine_near_point(path: &Path3D, center: Vec3, dt_min: f64, stream: &RngStream) -> Path3D {
    refine_path(
        path,
        |a, b, dt| sampling_guard(dt) >= point_segment_distance(center, a, b) / 8.0,
        dt_min,
        stream,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_on_sphere_gives_single_point() {
        let p = sample_until_exit(Vec3::new(1.0, 0.0, 0.0), 1.0, 1e-3, &RngStream::new(1, 1));
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn replay_is_bit_identical() {
        let s = RngStream::new(5, 9);
        let a = sample_until_exit(Vec3::ZERO, 1.0, 1e-3, &s);
        let b = sample_until_exit(Vec3::ZERO, 1.0, 1e-3, &s);
        assert_eq!(a, b);
        assert!((a.end().norm() - 1.0).abs() < 1e-12);
        assert!(a.points[..a.len() - 1].iter().all(|p| p.norm() < 1.0));
    }

    #[test]
    fn mean_square_displacement() {
        let s = RngStream::new(11, 0);
        let (k, dt) = (20usize, 1e-4);
        let vals: Vec<f64> = (0..10_000)
            .map(|i| {
                let p = sample_until_exit(Vec3::ZERO, 0.5, dt, &s.substream(i));
                p.points[k].norm2()
            })
            .collect();
        let e = crate::stats::Estimate::from_values(&vals);
        assert!(e.within_sigma(3.0 * k as f64 * dt, 3.0), "{e:?}");
    }

    #[test]
    fn path_json_round_trip_and_validation() {
        let p = Path3D::with_times(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)], vec![0.0, 0.5]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(Path3D::from_json(&s).unwrap(), p);
        assert!(Path3D::from_json(r#"{"points":[],"timing":{"uniform":{"dt":1.0}}}"#).is_err());
        assert!(Path3D::from_json(r#"{"points":[[0,0,0],[1,0,0]],"timing":{"explicit":{"times":[1,1]}}}"#).is_err());
        assert!(Path3D::from_json(r#"{"points":[[0,0,0]],"timing":{"uniform":{"dt":-1}}}"#).is_err());
        assert!(Path3D::uniform(vec![Vec3::new(f64::NAN, 0.0, 0.0)], 1.0).is_err());
    }

    #[test]
    fn refinement_keeps_endpoints_and_bridge_variance() {
        let base = Path3D::uniform(vec![Vec3::ZERO, Vec3::new(0.1, 0.0, 0.0)], 1e-2).unwrap();
        let s = RngStream::new(2, 2);
        let mids: Vec<f64> = (0..4000)
            .map(|i| {
                let r = refine_path(&base, |_, _, dt| dt > 0.006, 1e-9, &s.substream(i));
                assert_eq!(r.len(), 3);
                assert_eq!(r.end(), base.end());
                assert!((r.time(2) - 1e-2).abs() < 1e-15);
                r.points[1].y
            })
            .collect();
        // Bridge midpoint has variance dt / 4 per coordinate.
        let var = mids.iter().map(|v| v * v).sum::<f64>() / mids.len() as f64;
        assert!((var / 2.5e-3 - 1.0).abs() < 0.08, "{var}");
    }

    #[test]
    fn refine_near_point_shrinks_guard() {
        let s = RngStream::new(3, 1);
        let p = sample_until_exit(Vec3::new(0.05, 0.0, 0.0), 1.0, 1e-4, &s);
        let r = refine_near_point(&p, Vec3::ZERO, 1e-16, &s.labeled("refine"));
        for i in 0..r.len() - 1 {
            let d = point_segment_distance(Vec3::ZERO, r.points[i], r.points[i + 1]);
            assert!(sampling_guard(r.step_dt(i)) < d / 8.0 || r.step_dt(i) < 2e-16);
        }
    }
}
