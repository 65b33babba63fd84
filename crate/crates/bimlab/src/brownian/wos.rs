//! Walk-on-spheres sampling of harmonic measure in a ball minus a thickened
//! slit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BrownianError;
use crate::geometry::{PolylineIndex, Vec3};
use crate::rng::{unit_vector, RngStream};

/// Absorbing set distance oracle.
pub trait DistanceField {
    /// `min(distance(p), cap)`, exact below `cap`.
    fn distance_capped(&self, p: Vec3, cap: f64) -> f64;
}

impl DistanceField for PolylineIndex {
    #[inline]
    fn distance_capped(&self, p: Vec3, cap: f64) -> f64 {
        PolylineIndex::distance_capped(self, p, cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WosConfig {
    /// Absorption thickness around the slit and the outer sphere.
    pub capture_eps: f64,
    /// Radius of the outer ball centered at the origin.
    pub outer_radius: f64,
    pub max_steps: u64,
}

impl Default for WosConfig {
    fn default() -> Self {
        Self {
            capture_eps: 1e-3,
            outer_radius: 1.0,
            max_steps: 100_000,
        }
    }
}

impl WosConfig {
    pub fn validate(&self) -> Result<(), BrownianError> {
        if !(self.capture_eps > 0.0) || !(self.outer_radius > 0.0) || self.max_steps == 0 {
            return Err(BrownianError::InvalidArgument(format!(
                "invalid walk-on-spheres config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WosOutcome {
    OuterBoundary,
    SlitCapture,
    StepCap,
}

/// Walk-on-spheres from `start` with the slit given by `field`. Exits on the
/// outer sphere are projected onto it.
pub fn walk_on_spheres_with<D: DistanceField + ?Sized, R: Rng + ?Sized>(
    start: Vec3,
    field: &D,
    cfg: &WosConfig,
    rng: &mut R,
) -> (Vec3, WosOutcome) {
    let mut x = start;
    let big_r = cfg.outer_radius;
    let eps = cfg.capture_eps;
    for _ in 0..cfg.max_steps {
        let n = x.norm();
        let ro = big_r - n;
        if ro <= eps {
            let p = if n > 0.0 { x * (big_r / n) } else { x };
            return (p, WosOutcome::OuterBoundary);
        }
        let ds = field.distance_capped(x, ro);
        if ds <= eps {
            return (x, WosOutcome::SlitCapture);
        }
        x += unit_vector(rng) * ds.min(ro);
    }
    (x, WosOutcome::StepCap)
}

pub fn walk_on_spheres(
    start: Vec3,
    slit: &PolylineIndex,
    cfg: &WosConfig,
    stream: &RngStream,
) -> Result<(Vec3, WosOutcome), BrownianError> {
    cfg.validate()?;
    if !(start.norm() < cfg.outer_radius) {
        return Err(BrownianError::InvalidArgument(
            "start must lie inside the outer ball".into(),
        ));
    }
    Ok(walk_on_spheres_with(start, slit, cfg, &mut stream.rng()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::Path3D;
    use crate::stats::{chi_square, chi_square_quantile, Estimate};

    #[test]
    fn empty_slit_uniform_exit_from_center() {
        let idx = PolylineIndex::build(&[], None);
        let cfg = WosConfig::default();
        let s = RngStream::new(4, 0);
        let mut counts = [0u64; 8];
        let n = 100_000u64;
        for i in 0..n {
            let (p, o) = walk_on_spheres(Vec3::ZERO, &idx, &cfg, &s.substream(i)).unwrap();
            assert_eq!(o, WosOutcome::OuterBoundary);
            let k = (p.x > 0.0) as usize | ((p.y > 0.0) as usize) << 1 | ((p.z > 0.0) as usize) << 2;
            counts[k] += 1;
        }
        let chi = chi_square(&counts, &[0.125; 8]);
        assert!(chi < chi_square_quantile(7, 3.09), "chi2 = {chi}");
    }

    #[test]
    fn capture_at_start() {
        let path = Path3D::uniform(vec![Vec3::ZERO, Vec3::new(0.5, 0.0, 0.0)], 1e-6).unwrap();
        let idx = PolylineIndex::build(&[path], None);
        let cfg = WosConfig::default();
        let (_, o) = walk_on_spheres(Vec3::new(0.2, 5e-4, 0.0), &idx, &cfg, &RngStream::new(1, 1)).unwrap();
        assert_eq!(o, WosOutcome::SlitCapture);
    }

    #[test]
    fn off_center_mean_matches_poisson_kernel() {
        // The exit point mean of the ball Poisson kernel is the harmonic
        // extension of the coordinate, i.e. the start itself.
        let idx = PolylineIndex::build(&[], None);
        let cfg = WosConfig {
            capture_eps: 1e-4,
            ..Default::default()
        };
        let x0 = Vec3::new(0.5, 0.0, 0.0);
        let s = RngStream::new(6, 0);
        let xs: Vec<f64> = (0..40_000)
            .map(|i| walk_on_spheres(x0, &idx, &cfg, &s.substream(i)).unwrap().0.x)
            .collect();
        let e = Estimate::from_values(&xs);
        assert!(e.within_sigma(0.5, 3.0), "{e:?}");
    }

    #[test]
    fn outcomes_partition() {
        let s = RngStream::new(8, 0);
        let path = crate::brownian::sample_until_exit(Vec3::ZERO, 1.0, 1e-4, &s);
        let idx = PolylineIndex::build(&[path], None);
        let cfg = WosConfig::default();
        let mut tally = [0u64; 3];
        let n = 2000;
        for i in 0..n {
            let start = Vec3::new(0.0, 0.0, 0.6);
            if idx.distance(start) <= cfg.capture_eps {
                continue;
            }
            match walk_on_spheres(start, &idx, &cfg, &s.substream(i + 1)).unwrap().1 {
                WosOutcome::OuterBoundary => tally[0] += 1,
                WosOutcome::SlitCapture => tally[1] += 1,
                WosOutcome::StepCap => tally[2] += 1,
            }
        }
        let total: u64 = tally.iter().sum();
        assert!(total == 0 || (tally[2] as f64) < 0.01 * total as f64);
    }
}
