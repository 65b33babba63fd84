//! Empirical switching constants of layer kernels along sampled traces.

use bimlab::brownian::sample_until_exit;
use bimlab::slitdomain::{good_layer_fraction, GoodLayerReport, LayerParams};
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
    pub traces: u64,
    pub dt: f64,
    /// Layers `layer_lo..=layer_hi`; layer `i` spans radii `e^i` to `e^{i+1}`.
    pub layer_lo: i32,
    pub layer_hi: i32,
    /// A layer is good when its switching constant is below this.
    pub threshold: f64,
    /// Smallest acceptable fraction of good layers.
    pub min_fraction: f64,
    pub sources: usize,
    pub cells: usize,
    pub samples_per_source: u64,
    pub alpha: f64,
    pub capture_rel: f64,
    pub max_steps: u64,
}

impl Default for Params {
    fn default() -> Self {
        let lp = LayerParams::default();
        Self {
            traces: 2,
            dt: 1e-5,
            layer_lo: -3,
            layer_hi: -1,
            threshold: 1e5,
            min_fraction: 0.5,
            sources: lp.sources,
            cells: lp.cells,
            samples_per_source: lp.samples_per_source,
            alpha: lp.alpha,
            capture_rel: lp.capture_rel,
            max_steps: lp.max_steps,
        }
    }
}

impl Params {
    pub fn layer_params(&self) -> LayerParams {
        LayerParams {
            sources: self.sources,
            cells: self.cells,
            samples_per_source: self.samples_per_source,
            alpha: self.alpha,
            capture_rel: self.capture_rel,
            max_steps: self.max_steps,
        }
    }
}

pub fn layer_reports(p: &Params, stream: &RngStream) -> Result<Vec<GoodLayerReport>, String> {
    let lp = p.layer_params();
    let radius = ((p.layer_hi + 1) as f64).exp() * (1.0 + 1e-9);
    let reps: Vec<Result<GoodLayerReport, String>> = (0..p.traces)
        .into_par_iter()
        .map(|t| {
            let s = stream.substream(t);
            let trace = sample_until_exit(Vec3::ZERO, radius, p.dt, &s.labeled("trace"));
            good_layer_fraction(&trace, p.layer_lo..=p.layer_hi, p.threshold, &lp, &s.labeled("layers"))
                .map_err(|e| e.to_string())
        })
        .collect();
    reps.into_iter().collect()
}

pub struct LayerK;

impl Experiment for LayerK {
    type Params = Params;
    const NAME: &'static str = "layer-k";

    fn validate(p: &Params) -> Result<(), String> {
        positive("traces", p.traces)?;
        positive_real("dt", p.dt)?;
        positive_real("threshold", p.threshold)?;
        if p.layer_lo > p.layer_hi || p.layer_hi > 3 {
            return Err("layers must satisfy layer_lo <= layer_hi <= 3".into());
        }
        p.layer_params().validate().map_err(|e| e.to_string())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let reps = layer_reports(p, stream)?;
        let mut out = Outcome::default();
        let mut good = 0u64;
        let mut total = 0u64;
        for (t, r) in reps.iter().enumerate() {
            for (l, k) in r.layers.iter().zip(&r.ks) {
                out.metric("switching_constant", format!("trace={t} layer={l}"), k.value());
                good += u64::from(k.value() < p.threshold);
                total += 1;
            }
        }
        let frac = Estimate::proportion(good, total);
        out.estimate("good_fraction", format!("M={}", p.threshold), &frac);
        out.check(
            "good layers",
            frac.mean >= p.min_fraction,
            format!("{good} of {total} layers below {}", p.threshold),
        );
        out.details = serde_json::to_value(&reps).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
