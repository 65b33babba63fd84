//! Step law of the sphere chain: Monte Carlo against the closed forms.

use bimlab::brownian::{mc_sphere_chain, sphere_chain_downstep_prob, sphere_chain_step_mgf, ChainStats};
use bimlab::RngStream;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{positive, positive_real};
use crate::report::Outcome;
use crate::Experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Sphere spacing parameters `p >= 1`.
    pub ps: Vec<f64>,
    /// Chain steps per `p`.
    pub steps: u64,
    /// Allowed distance from the closed form in standard errors.
    pub sigmas: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            ps: vec![1.0, 2.0, 5.0],
            steps: 1_000_000,
            sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRow {
    pub p: f64,
    pub stats: ChainStats,
    pub downstep_exact: f64,
    pub mgf_exact: f64,
}

/// Chain statistics for every `p`, each on its own substream.
pub fn chain_rows(p: &Params, stream: &RngStream) -> Result<Vec<ChainRow>, String> {
    p.ps.iter()
        .enumerate()
        .map(|(i, &pv)| {
            let stats = mc_sphere_chain(pv, p.steps, &stream.substream(i as u64)).map_err(|e| e.to_string())?;
            Ok(ChainRow {
                p: pv,
                stats,
                downstep_exact: sphere_chain_downstep_prob(pv).map_err(|e| e.to_string())?,
                mgf_exact: sphere_chain_step_mgf(pv).map_err(|e| e.to_string())?,
            })
        })
        .collect()
}

pub struct ChainLaw;

impl Experiment for ChainLaw {
    type Params = Params;
    const NAME: &'static str = "chain-law";

    fn validate(p: &Params) -> Result<(), String> {
        positive("steps", p.steps)?;
        positive_real("sigmas", p.sigmas)?;
        if p.ps.is_empty() || p.ps.iter().any(|v| !(*v >= 1.0 && v.is_finite())) {
            return Err("ps must be a nonempty list of reals >= 1".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let rows = chain_rows(p, stream)?;
        let mut out = Outcome::default();
        for r in &rows {
            let label = format!("p={}", r.p);
            out.estimate("downstep", &label, &r.stats.downstep);
            out.metric("downstep_exact", &label, r.downstep_exact);
            out.estimate("mgf", &label, &r.stats.mgf);
            out.metric("mgf_exact", &label, r.mgf_exact);
            out.check(
                &format!("downstep {label}"),
                r.stats.downstep.within_sigma(r.downstep_exact, p.sigmas),
                format!(
                    "{} +- {} vs {}",
                    r.stats.downstep.mean, r.stats.downstep.stderr, r.downstep_exact
                ),
            );
            out.check(
                &format!("mgf {label}"),
                r.stats.mgf.within_sigma(r.mgf_exact, p.sigmas),
                format!("{} +- {} vs {}", r.stats.mgf.mean, r.stats.mgf.stderr, r.mgf_exact),
            );
        }
        out.details = serde_json::to_value(&rows).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
