//! Thin-cylinder hitting: the radial ODE profile against the logarithmic
//! envelope, and the Monte Carlo hitting probability times `log(1/d)`.

use bimlab::brownian::{cylinder_ode_profile, mc_cylinder_hit};
use bimlab::stats::Estimate;
use bimlab::RngStream;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{positive, positive_real};
use crate::report::Outcome;
use crate::Experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Cylinder radii, each in `(0, 1/2)`.
    pub ds: Vec<f64>,
    pub samples: u64,
    /// Grid points of the ODE profile.
    pub grid: usize,
    /// Largest allowed `max/min - 1` of `P log(1/d)` across `ds`.
    pub spread: f64,
    /// Slack for the pointwise envelope comparison.
    pub tolerance: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            ds: vec![0.0625, 0.015625, 0.00390625],
            samples: 100_000,
            grid: 400,
            spread: 0.25,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitRow {
    pub d: f64,
    /// Largest `f - L` over the grid, `L = log(1/r)/log(1/d)`.
    pub upper_excess: f64,
    /// Largest `3/4 L - f` over the grid.
    pub lower_excess: f64,
    pub hit: Estimate,
    pub scaled: f64,
}

pub fn hit_rows(p: &Params, stream: &RngStream) -> Result<Vec<HitRow>, String> {
    p.ds.iter()
        .enumerate()
        .map(|(i, &d)| {
            let prof = cylinder_ode_profile(d, p.grid).map_err(|e| e.to_string())?;
            let (mut up, mut lo) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (&r, &f) in prof.r.iter().zip(&prof.f) {
                let l = (1.0 / r).ln() / (1.0 / d).ln();
                up = up.max(f - l);
                lo = lo.max(0.75 * l - f);
            }
            let hit = mc_cylinder_hit(d, p.samples, &stream.substream(i as u64)).map_err(|e| e.to_string())?;
            Ok(HitRow {
                d,
                upper_excess: up,
                lower_excess: lo,
                hit,
                scaled: hit.mean * (1.0 / d).ln(),
            })
        })
        .collect()
}

/// `max/min` of the scaled hitting probabilities.
pub fn scaled_ratio(rows: &[HitRow]) -> f64 {
    let hi = rows.iter().map(|r| r.scaled).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    hi / lo
}

pub struct HittingBench;

impl Experiment for HittingBench {
    type Params = Params;
    const NAME: &'static str = "hitting-bench";

    fn validate(p: &Params) -> Result<(), String> {
        positive("samples", p.samples)?;
        positive_real("spread", p.spread)?;
        if p.ds.is_empty() || p.ds.iter().any(|d| !(*d > 0.0 && *d < 0.5)) {
            return Err("ds must be a nonempty list in (0, 1/2)".into());
        }
        if p.grid < 10 {
            return Err("grid must be at least 10".into());
        }
        if !(p.tolerance >= 0.0) {
            return Err("tolerance must be nonnegative".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let rows = hit_rows(p, stream)?;
        let mut out = Outcome::default();
        for r in &rows {
            let label = format!("d={}", r.d);
            out.metric("ode_upper_excess", &label, r.upper_excess);
            out.metric("ode_lower_excess", &label, r.lower_excess);
            out.estimate("hit_probability", &label, &r.hit);
            out.metric("hit_times_log", &label, r.scaled);
            out.check(
                &format!("ode envelope {label}"),
                r.upper_excess <= p.tolerance && r.lower_excess <= p.tolerance,
                format!("upper excess {}, lower excess {}", r.upper_excess, r.lower_excess),
            );
        }
        let ratio = scaled_ratio(&rows);
        out.metric("hit_times_log_ratio", "max/min", ratio);
        out.check(
            "hit times log constant",
            ratio <= 1.0 + p.spread,
            format!("max/min = {ratio}"),
        );
        out.details = serde_json::to_value(&rows).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
