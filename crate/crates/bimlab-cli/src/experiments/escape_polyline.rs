//! Escape polylines in the slit unit ball and their Hölder length control.

use bimlab::brownian::sample_until_exit;
use bimlab::geometry::{
    build_escape_polyline, domain_distance, holder_constant_bound, holder_ratios, EscapeConfig, PolylineIndex,
};
use bimlab::rng::unit_ball_point;
use bimlab::{RngStream, Vec3};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{positive, positive_real};
use crate::report::Outcome;
use crate::Experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub traces: u64,
    pub starts: u64,
    /// Time step of the traces, which run from the origin to the boundary.
    pub dt: f64,
    pub domain_radius: f64,
    /// Smallest distance of a start to the boundary of the domain.
    pub min_start_distance: f64,
    /// Cone parameters tried in order until a polyline is built.
    pub u1_ladder: Vec<f64>,
    pub beta: f64,
    pub n0: u32,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            traces: 10,
            starts: 50,
            dt: 1e-7,
            domain_radius: 1.0,
            min_start_distance: 0.03125,
            u1_ladder: vec![1.03, 1.05, 1.07],
            beta: 0.9,
            n0: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartRow {
    pub start: Vec3,
    pub distance: f64,
    pub u1: Option<f64>,
    pub vertices: usize,
    pub length: f64,
    pub max_ratio: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub trace: u64,
    pub x0: Vec3,
    pub x0_distance: f64,
    /// Largest Hölder ratio over all vertices of all polylines.
    pub c5: f64,
    /// A priori constant for the largest `u1` used.
    pub bound: f64,
    pub failures: usize,
    pub starts: Vec<StartRow>,
}

impl TraceRow {
    pub fn holds(&self) -> bool {
        self.failures == 0 && self.c5 <= self.bound
    }
}

/// Base point: the candidate farthest from the boundary.
fn base_point(idx: &PolylineIndex, r: f64) -> Vec3 {
    let mut best = (f64::NEG_INFINITY, Vec3::ZERO);
    for i in 0..=8 {
        for dir in [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
        ] {
            let x = dir * (r * 0.1 * i as f64);
            let d = domain_distance(idx, r, x);
            if d > best.0 {
                best = (d, x);
            }
        }
    }
    best.1
}

fn random_starts(p: &Params, idx: &PolylineIndex, stream: &RngStream) -> Vec<Vec3> {
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(p.starts as usize);
    let mut tries = 0u64;
    while (out.len() as u64) < p.starts && tries < 1_000_000 {
        tries += 1;
        let x = unit_ball_point(&mut rng) * p.domain_radius;
        if domain_distance(idx, p.domain_radius, x) >= p.min_start_distance {
            out.push(x);
        }
    }
    out
}

pub fn trace_row(p: &Params, t: u64, stream: &RngStream) -> TraceRow {
    let trace = sample_until_exit(Vec3::ZERO, p.domain_radius, p.dt, &stream.labeled("trace"));
    let idx = PolylineIndex::build(std::slice::from_ref(&trace), None);
    drop(trace);
    let cfg = EscapeConfig {
        n0: p.n0,
        domain_radius: p.domain_radius,
    };
    let x0 = base_point(&idx, p.domain_radius);
    let x0_distance = domain_distance(&idx, p.domain_radius, x0);
    let starts = random_starts(p, &idx, &stream.labeled("starts"));
    let rows: Vec<StartRow> = starts
        .par_iter()
        .map(|&x| {
            let distance = domain_distance(&idx, p.domain_radius, x);
            let mut last_err = None;
            for &u1 in &p.u1_ladder {
                match build_escape_polyline(x, &idx, u1, x0, &cfg) {
                    Ok(poly) => {
                        let ratios = holder_ratios(&poly, &idx, p.domain_radius, p.beta);
                        return StartRow {
                            start: x,
                            distance,
                            u1: Some(u1),
                            vertices: poly.vertices.len(),
                            length: poly.length(),
                            max_ratio: ratios.iter().copied().fold(0.0, f64::max),
                            error: None,
                        };
                    }
                    Err(e) => last_err = Some(e.to_string()),
                }
            }
            StartRow {
                start: x,
                distance,
                u1: None,
                vertices: 0,
                length: 0.0,
                max_ratio: f64::NAN,
                error: last_err,
            }
        })
        .collect();
    let mut failures = rows.iter().filter(|r| r.u1.is_none()).count();
    failures += (p.starts as usize).saturating_sub(rows.len());
    let u1_max = rows.iter().filter_map(|r| r.u1).fold(f64::NAN, f64::max);
    let c5 = rows
        .iter()
        .filter(|r| r.u1.is_some())
        .map(|r| r.max_ratio)
        .fold(0.0, f64::max);
    let bound = if u1_max.is_nan() {
        f64::INFINITY
    } else {
        holder_constant_bound(u1_max, p.beta, p.n0, p.domain_radius, x0_distance)
    };
    TraceRow {
        trace: t,
        x0,
        x0_distance,
        c5,
        bound,
        failures,
        starts: rows,
    }
}

pub fn trace_rows(p: &Params, stream: &RngStream) -> Vec<TraceRow> {
    (0..p.traces).map(|t| trace_row(p, t, &stream.substream(t))).collect()
}

pub struct EscapePolyline;

impl Experiment for EscapePolyline {
    type Params = Params;
    const NAME: &'static str = "escape-polyline";

    fn validate(p: &Params) -> Result<(), String> {
        positive("traces", p.traces)?;
        positive("starts", p.starts)?;
        positive_real("dt", p.dt)?;
        positive_real("domain_radius", p.domain_radius)?;
        positive_real("min_start_distance", p.min_start_distance)?;
        if p.dt < 1e-9 {
            return Err("dt below 1e-9 needs more memory than a trace index can hold".into());
        }
        if p.u1_ladder.is_empty() || p.u1_ladder.iter().any(|u| !(*u > 1.0 && *u < 1.5)) {
            return Err("u1_ladder must be a nonempty list in (1, 1.5)".into());
        }
        if !(p.beta > 0.0 && p.beta <= 1.0) {
            return Err("beta must lie in (0, 1]".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let rows = trace_rows(p, stream);
        let mut out = Outcome::default();
        for r in &rows {
            let label = format!("trace={}", r.trace);
            out.metric("c5", &label, r.c5);
            out.metric("c5_bound", &label, r.bound);
            out.metric("build_failures", &label, r.failures as f64);
            out.check(
                &format!("holder {label}"),
                r.holds(),
                format!("c5 = {} against bound {}, {} failed builds", r.c5, r.bound, r.failures),
            );
        }
        out.details = serde_json::to_value(&rows).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
