//! Conditional separation: walks conditioned to avoid a trace end far from
//! it with positive frequency.

use bimlab::brownian::sample_until_exit;
use bimlab::geometry::PolylineIndex;
use bimlab::slitdomain::{csl_experiment, CslParams, CslRow, SubsetMode};
use bimlab::stats::wilson_interval;
use bimlab::{RngStream, Vec3};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{positive, positive_real};
use crate::report::Outcome;
use crate::Experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub traces: u64,
    /// Traces run from the origin until they leave this radius.
    pub trace_radius: f64,
    pub dt: f64,
    /// Starts per trace, taken in order from a fixed candidate list.
    pub starts: usize,
    /// Smallest distance of a start to its trace.
    pub min_start_distance: f64,
    /// Largest norm of a start.
    pub max_start_norm: f64,
    pub samples: u64,
    pub capture_eps: f64,
    pub delta: f64,
    pub max_steps: u64,
    /// Rows with fewer accepted samples are reported but not checked.
    pub min_accepted: u64,
    /// Normal quantile of the confidence interval.
    pub z: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            traces: 20,
            trace_radius: 2.0,
            dt: 1e-4,
            starts: 20,
            min_start_distance: 0.0625,
            max_start_norm: 0.9,
            samples: 400,
            capture_eps: 1e-3,
            delta: 0.05,
            max_steps: 100_000,
            min_accepted: 30,
            z: 1.96,
        }
    }
}

/// Deterministic candidates filling the ball of radius `r_max`: a spiral of
/// directions with radii spread so that volume is covered evenly.
pub fn start_candidates(count: usize, r_max: f64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let t = (i as f64 + 0.5) / count as f64;
            let z = 1.0 - 2.0 * t;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let r = r_max * ((i as f64 * 0.618_033_988_749_895).fract() * 0.999 + 0.001).cbrt();
            Vec3::new(rho * phi.cos(), rho * phi.sin(), z) * r
        })
        .collect()
}

/// First `count` candidates at distance at least `min_dist` from the paths.
pub fn select_starts(idx: &PolylineIndex, count: usize, min_dist: f64, r_max: f64) -> Vec<Vec3> {
    start_candidates(4096, r_max)
        .into_iter()
        .filter(|x| idx.distance(*x) >= min_dist)
        .take(count)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CslTraceRows {
    pub trace: u64,
    pub rows: Vec<CslRow>,
}

pub fn csl_rows(p: &Params, stream: &RngStream) -> Result<Vec<CslTraceRows>, String> {
    let cp = CslParams {
        capture_eps: p.capture_eps,
        deltas: vec![p.delta],
        samples: p.samples,
        max_steps: p.max_steps,
    };
    (0..p.traces)
        .map(|t| {
            let s = stream.substream(t);
            let trace = sample_until_exit(Vec3::ZERO, p.trace_radius, p.dt, &s.labeled("trace"));
            let idx = PolylineIndex::build(std::slice::from_ref(&trace), None);
            let starts = select_starts(&idx, p.starts, p.min_start_distance, p.max_start_norm);
            if starts.is_empty() {
                return Err(format!("trace {t}: no start candidate is far enough from the trace"));
            }
            let table = csl_experiment(&[trace], &[SubsetMode::Full], &starts, &cp, &s.labeled("walks"))
                .map_err(|e| e.to_string())?;
            Ok(CslTraceRows {
                trace: t,
                rows: table.rows,
            })
        })
        .collect()
}

/// Separation hits of a row at the single delta.
pub fn row_hits(r: &CslRow) -> u64 {
    r.frequencies
        .first()
        .map_or(0, |f| (f.mean * r.accepted as f64).round() as u64)
}

pub struct Csl;

impl Experiment for Csl {
    type Params = Params;
    const NAME: &'static str = "csl";

    fn validate(p: &Params) -> Result<(), String> {
        positive("traces", p.traces)?;
        positive("samples", p.samples)?;
        positive("starts", p.starts as u64)?;
        positive("max_steps", p.max_steps)?;
        positive_real("dt", p.dt)?;
        positive_real("z", p.z)?;
        if !(p.capture_eps > 0.0 && p.capture_eps < 0.5) {
            return Err("capture_eps must lie in (0, 1/2)".into());
        }
        if !(p.max_start_norm > 0.0 && p.max_start_norm < 1.0 - p.capture_eps) {
            return Err("max_start_norm must lie in (0, 1 - capture_eps)".into());
        }
        if !(p.delta >= 0.0 && p.min_start_distance >= 0.0) {
            return Err("delta and min_start_distance must be nonnegative".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let traces = csl_rows(p, stream)?;
        let mut out = Outcome::default();
        let (mut checked, mut bad) = (0u64, 0u64);
        for t in &traces {
            for (i, r) in t.rows.iter().enumerate() {
                let label = format!("trace={} start={i}", t.trace);
                out.metric("acceptance", &label, r.acceptance);
                if let Some(f) = r.frequencies.first() {
                    out.estimate("separation", &label, f);
                }
                if r.accepted >= p.min_accepted {
                    checked += 1;
                    let (lo, _) = wilson_interval(row_hits(r), r.accepted, p.z);
                    out.metric("separation_ci_low", &label, lo);
                    if !(lo > 0.0) {
                        bad += 1;
                    }
                }
            }
        }
        out.metric("checked_rows", "", checked as f64);
        out.check(
            "separation bounded away from zero",
            bad == 0,
            format!(
                "{bad} of {checked} rows with at least {} accepted samples have a CI reaching 0",
                p.min_accepted
            ),
        );
        out.details = serde_json::to_value(&traces).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
