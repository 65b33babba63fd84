//! Uncovered cones at the origin for sampled traces, with every certificate
//! re-checked against all path samples.

use bimlab::brownian::{refine_near_point, sample_until_exit};
use bimlab::geometry::{cone_contains, find_uncovered_cone, Cone, PolylineIndex};
use bimlab::rng::unit_vector;
use bimlab::stats::Estimate;
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
    /// Independent trace sets.
    pub seeds: u64,
    /// Traces per set.
    pub k: usize,
    /// Traces start uniformly on the sphere of this radius.
    pub start_radius: f64,
    pub trace_radius: f64,
    pub dt: f64,
    pub u1: f64,
    pub n: u32,
    /// Smallest time step of the refinement near the origin.
    pub refine_dt_min: f64,
    /// Required fraction of sets with a verified cone.
    pub min_success: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            seeds: 10,
            k: 1,
            start_radius: 0.5,
            trace_radius: 2.0,
            dt: 1e-4,
            u1: 1.3,
            n: 12,
            refine_dt_min: 1e-16,
            min_success: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeRow {
    pub seed: u64,
    pub direction: Option<Vec3>,
    /// The cone contains none of the samples inside the trace ball.
    pub verified: bool,
    pub samples: usize,
}

/// Searches one trace set and re-verifies the certificate.
pub fn search_one(p: &Params, seed: u64, stream: &RngStream) -> ConeRow {
    let paths: Vec<_> = (0..p.k as u64)
        .map(|j| {
            let s = stream.substream(j);
            let start = unit_vector(&mut s.labeled("start").rng()) * p.start_radius;
            let raw = sample_until_exit(start, p.trace_radius, p.dt, &s.labeled("trace"));
            refine_near_point(&raw, Vec3::ZERO, p.refine_dt_min, &s.labeled("refine"))
        })
        .collect();
    let idx = PolylineIndex::build(&paths, None);
    let samples = paths.iter().map(|q| q.len()).sum();
    let direction = find_uncovered_cone(&idx, p.n, p.u1, None);
    let verified = direction.is_some_and(|v| {
        let radius = p.u1.powi(-(p.n as i32)).min(2.0);
        match Cone::at_origin(v, radius) {
            Ok(c) => paths
                .iter()
                .flat_map(|q| q.points.iter())
                .filter(|x| x.norm() < p.trace_radius)
                .all(|x| !cone_contains(&c, *x)),
            Err(_) => false,
        }
    });
    ConeRow {
        seed,
        direction,
        verified,
        samples,
    }
}

pub fn search_all(p: &Params, stream: &RngStream) -> Vec<ConeRow> {
    (0..p.seeds)
        .into_par_iter()
        .map(|i| search_one(p, i, &stream.substream(i)))
        .collect()
}

pub struct ConeSearch;

impl Experiment for ConeSearch {
    type Params = Params;
    const NAME: &'static str = "cone-search";

    fn validate(p: &Params) -> Result<(), String> {
        positive("seeds", p.seeds)?;
        positive("k", p.k as u64)?;
        positive_real("dt", p.dt)?;
        positive_real("refine_dt_min", p.refine_dt_min)?;
        if !(p.start_radius >= 0.0 && p.start_radius < p.trace_radius) {
            return Err("start_radius must lie in [0, trace_radius)".into());
        }
        if !(p.u1 > 1.0 && p.u1.is_finite()) {
            return Err(format!("u1 must exceed 1, got {}", p.u1));
        }
        if !(0.0..=1.0).contains(&p.min_success) {
            return Err("min_success must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let rows = search_all(p, stream);
        let ok = rows.iter().filter(|r| r.verified).count() as u64;
        let rate = Estimate::proportion(ok, p.seeds);
        let mut out = Outcome::default();
        for r in &rows {
            out.metric(
                "verified",
                format!("seed={}", r.seed),
                if r.verified { 1.0 } else { 0.0 },
            );
        }
        out.estimate("success_rate", "", &rate);
        out.check(
            "uncovered cone found",
            rate.mean >= p.min_success,
            format!("{ok} of {} sets verified", p.seeds),
        );
        out.details = serde_json::to_value(&rows).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
