//! Hitting estimates for thin cylinders and sausage confinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_until_exit, BrownianError};
use crate::geometry::{PolylineIndex, Vec3};
use crate::rng::{unit_vector, RngStream};
use crate::stats::Estimate;

const HEIGHT: f64 = std::f64::consts::PI;

/// Default start: radius 1/4 from the axis at mid-height.
pub fn default_cylinder_start() -> Vec3 {
    Vec3::new(0.25, 0.0, HEIGHT / 2.0)
}

/// Probability of hitting the cylinder of radius `d` around the axis before
/// leaving the unit-radius cylinder of height π, from the default start.
pub fn mc_cylinder_hit(d: f64, samples: u64, stream: &RngStream) -> Result<Estimate, BrownianError> {
    mc_cylinder_hit_from(default_cylinder_start(), d, samples, stream)
}

/// Same as [`mc_cylinder_hit`] from an arbitrary start `(x, y, z)` with the
/// axis along `z` and `0 < z < π`. Walk-on-spheres with capture thickness
/// `d / 1000` at the inner cylinder and `1e-4` at the outer boundary.
pub fn mc_cylinder_hit_from(start: Vec3, d: f64, samples: u64, stream: &RngStream) -> Result<Estimate, BrownianError> {
    if !(d > 0.0 && d < 1.0) {
        return Err(BrownianError::InvalidArgument(format!("d = {d} outside (0, 1)")));
    }
    if samples == 0 {
        return Err(BrownianError::InvalidArgument("samples must be positive".into()));
    }
    let r0 = start.x.hypot(start.y);
    if !(r0 < 1.0 && start.z > 0.0 && start.z < HEIGHT) {
        return Err(BrownianError::InvalidArgument("start outside the cylinder".into()));
    }
    if r0 <= d {
        return Ok(Estimate::proportion(samples, samples));
    }
    let eps_in = d * 1e-3;
    let eps_out = 1e-4;
    let hits: u64 = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.substream(i).rng();
            let mut x = start;
            loop {
                let r = x.x.hypot(x.y);
                let inner = r - d;
                if inner <= eps_in {
                    return 1u64;
                }
                let outer = (1.0 - r).min(x.z).min(HEIGHT - x.z);
                if outer <= eps_out {
                    return 0;
                }
                x += unit_vector(&mut rng) * inner.min(outer);
            }
        })
        .sum();
    Ok(Estimate::proportion(hits, samples))
}

/// Radial profile on `[d, 1]`, increasing in `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderProfile {
    pub d: f64,
    pub r: Vec<f64>,
    pub f: Vec<f64>,
}

impl CylinderProfile {
    /// Linear interpolation in `log r`.
    pub fn eval(&self, r: f64) -> f64 {
        let s = r.clamp(self.d, 1.0).ln();
        let k = self.r.partition_point(|&x| x.ln() < s).clamp(1, self.r.len() - 1);
        let (s0, s1) = (self.r[k - 1].ln(), self.r[k].ln());
        let w = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
        self.f[k - 1] * (1.0 - w) + self.f[k] * w
    }
}

/// Solves `(r f')' = r f` on `[d, 1]` by shooting from `r = 1` with
/// `f(1) = 0`, `f'(1) = -1` (classical RK4 in `s = ln r`, where the equation
/// reads `f'' = e^{2s} f`), then normalizes so that `f(d) = 1`.
pub fn cylinder_ode_profile(d: f64, grid: usize) -> Result<CylinderProfile, BrownianError> {
    if !(d > 0.0 && d < 0.5) {
        return Err(BrownianError::InvalidArgument(format!("d = {d} outside (0, 1/2)")));
    }
    if grid < 10 {
        return Err(BrownianError::InvalidArgument("grid must be >= 10".into()));
    }
    let per = 10_000usize.div_ceil(grid - 1);
    let steps = per * (grid - 1);
    let s_end = d.ln();
    let h = s_end / steps as f64;
    let rhs = |s: f64, y: [f64; 2]| [y[1], (2.0 * s).exp() * y[0]];
    let mut y = [0.0, -1.0];
    let mut s = 0.0;
    let mut raw = vec![(1.0, 0.0)];
    for k in 1..=steps {
        let k1 = rhs(s, y);
        let k2 = rhs(s + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = rhs(s + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = rhs(s + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        y[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        y[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        s = k as f64 * h;
        if k % per == 0 {
            raw.push((s.exp(), y[0]));
        }
    }
    let norm = y[0];
    raw.reverse();
    let mut r: Vec<f64> = raw.iter().map(|p| p.0).collect();
    let mut f: Vec<f64> = raw.iter().map(|p| p.1 / norm).collect();
    r[0] = d;
    f[0] = 1.0;
    *r.last_mut().unwrap() = 1.0;
    *f.last_mut().unwrap() = 0.0;
    Ok(CylinderProfile { d, r, f })
}

/// Probability that Brownian motion from the origin stays in the
/// `tube`-sausage of `k` independent traces (also from the origin) until it
/// leaves `B(0, R)`. Traces use step `min(tube/4, R/100)^2` and run to radius
/// `R + tube`; fresh traces are drawn for every sample. The walker is a
/// walk-on-spheres inside the sausage with capture thickness `tube / 1000`.
pub fn mc_sausage_confinement(
    k: usize,
    radius: f64,
    tube: f64,
    samples: u64,
    stream: &RngStream,
) -> Result<Estimate, BrownianError> {
    if !(radius > 0.0 && tube > 0.0) || k == 0 {
        return Err(BrownianError::InvalidArgument("need k >= 1, R > 0 and tube > 0".into()));
    }
    if samples == 0 {
        return Err(BrownianError::InvalidArgument("samples must be positive".into()));
    }
    let dt = (tube / 4.0).min(radius / 100.0).powi(2);
    let eps = tube * 1e-3;
    let ok: u64 = (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = stream.substream(i);
            let traces: Vec<_> = (0..k)
                .map(|j| sample_until_exit(Vec3::ZERO, radius + tube, dt, &s.substream(j as u64 + 1)))
                .collect();
            let idx = PolylineIndex::build(&traces, None);
            let mut rng = s.rng();
            let mut x = Vec3::ZERO;
            loop {
                let out = radius - x.norm();
                if out <= eps {
                    return 1u64;
                }
                let inside = tube - idx.distance_capped(x, tube);
                if inside <= eps {
                    return 0;
                }
                x += unit_vector(&mut rng) * out.min(inside);
            }
        })
        .sum();
    Ok(Estimate::proportion(ok, samples))
}
