//! Intersection exponent from the decay of the non-intersection
//! probabilities, with tube extrapolation.

use bimlab::exponents::{run_xi, XiConfig, XiReport};
use bimlab::RngStream;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{positive, positive_real};
use crate::report::Outcome;
use crate::Experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub k: usize,
    pub lambda: f64,
    /// Log-radii of the outer spheres; at least three distinct values.
    pub ns: Vec<f64>,
    pub outer: u64,
    pub inner: u64,
    /// Tube radius at scale `n` is `tube_scale * e^n`.
    pub tube_scale: f64,
    pub dt: f64,
    pub eps_ratio: f64,
    pub max_steps: u64,
    pub extrapolate: bool,
    /// Accepted range of the headline slope.
    pub slope_range: (f64, f64),
}

impl Default for Params {
    fn default() -> Self {
        let c = XiConfig::default();
        Self {
            k: c.k,
            lambda: c.lambda,
            ns: c.ns,
            outer: c.outer,
            inner: c.inner,
            tube_scale: c.tube_scale,
            dt: c.dt,
            eps_ratio: c.eps_ratio,
            max_steps: c.max_steps,
            extrapolate: c.extrapolate,
            slope_range: (0.8, 1.2),
        }
    }
}

impl Params {
    pub fn config(&self) -> XiConfig {
        XiConfig {
            k: self.k,
            lambda: self.lambda,
            ns: self.ns.clone(),
            outer: self.outer,
            inner: self.inner,
            tube_scale: self.tube_scale,
            dt: self.dt,
            eps_ratio: self.eps_ratio,
            max_steps: self.max_steps,
            extrapolate: self.extrapolate,
        }
    }
}

pub struct XiEstimate;

impl Experiment for XiEstimate {
    type Params = Params;
    const NAME: &'static str = "xi-estimate";

    fn validate(p: &Params) -> Result<(), String> {
        positive("k", p.k as u64)?;
        positive("outer", p.outer)?;
        positive("inner", p.inner)?;
        positive("max_steps", p.max_steps)?;
        positive_real("lambda", p.lambda)?;
        positive_real("tube_scale", p.tube_scale)?;
        positive_real("dt", p.dt)?;
        positive_real("eps_ratio", p.eps_ratio)?;
        let mut ns = p.ns.clone();
        ns.sort_by(f64::total_cmp);
        ns.dedup();
        if ns.len() < 3 || ns.iter().any(|n| !(*n > 0.0 && *n <= 6.0)) {
            return Err("ns needs at least three distinct values in (0, 6]".into());
        }
        if !(p.slope_range.0 <= p.slope_range.1) {
            return Err("slope_range must be an ordered pair".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let rep: XiReport = run_xi(&p.config(), stream).map_err(|e| e.to_string())?;
        let mut out = Outcome::default();
        let mut series = vec![("coarse", &rep.coarse)];
        if let Some(f) = &rep.fine {
            series.push(("fine", f));
        }
        if let Some(e) = &rep.extrapolated {
            series.push(("extrapolated", e));
        }
        series.push(("half_inner", &rep.half_inner));
        for (name, est) in &series {
            for pt in &est.points {
                out.metrics.push(crate::report::Metric {
                    name: format!("a_{name}"),
                    label: format!("n={}", pt.n),
                    value: pt.a,
                    stderr: Some(pt.stderr),
                    samples: Some(pt.samples),
                });
            }
            out.metrics.push(crate::report::Metric {
                name: format!("slope_{name}"),
                label: format!("lambda={} k={}", p.lambda, p.k),
                value: est.slope,
                stderr: Some(est.stderr),
                samples: None,
            });
        }
        out.metric("stalled_walks", "", rep.stalled as f64);
        let (lo, hi) = p.slope_range;
        out.check(
            "slope in range",
            rep.slope >= lo && rep.slope <= hi,
            format!("slope {} +- {} against [{lo}, {hi}]", rep.slope, rep.stderr),
        );
        out.details = serde_json::to_value(&rep).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
