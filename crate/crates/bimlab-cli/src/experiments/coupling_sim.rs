//! Layered maximal coupling through synthetic good layers.

use bimlab::kernelfun::DiscreteKernel;
use bimlab::slitdomain::{coupling_experiment, CouplingReport};
use bimlab::RngStream;
use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{positive, positive_real};
use crate::report::Outcome;
use crate::Experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Numbers of layers to run.
    pub layers: Vec<usize>,
    /// Side of every square layer kernel.
    pub dim: usize,
    /// Kernel entries are uniform in `[entry_min, entry_max]`.
    pub entry_min: f64,
    pub entry_max: f64,
    pub replicas: u64,
    pub starts: (usize, usize),
    pub sigmas: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            layers: vec![4, 8],
            dim: 6,
            entry_min: 0.2,
            entry_max: 1.0,
            replicas: 100_000,
            starts: (0, 1),
            sigmas: 3.0,
        }
    }
}

/// `count` random kernels drawn from `stream`.
pub fn synthetic_layers(p: &Params, count: usize, stream: &RngStream) -> Vec<DiscreteKernel> {
    let mut rng = stream.rng();
    (0..count)
        .map(|_| {
            let v = (0..p.dim)
                .map(|_| {
                    (0..p.dim)
                        .map(|_| rng.random_range(p.entry_min..=p.entry_max))
                        .collect()
                })
                .collect();
            DiscreteKernel::from_matrix(v).expect("positive entries")
        })
        .collect()
}

pub fn coupling_reports(p: &Params, stream: &RngStream) -> Result<Vec<CouplingReport>, String> {
    p.layers
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let s = stream.substream(i as u64);
            let kernels = synthetic_layers(p, m, &s.labeled("kernels"));
            coupling_experiment(&kernels, p.starts, p.replicas, &s.labeled("chains")).map_err(|e| e.to_string())
        })
        .collect()
}

pub struct CouplingSim;

impl Experiment for CouplingSim {
    type Params = Params;
    const NAME: &'static str = "coupling-sim";

    fn validate(p: &Params) -> Result<(), String> {
        positive("replicas", p.replicas)?;
        positive_real("sigmas", p.sigmas)?;
        if p.layers.is_empty() || p.layers.contains(&0) {
            return Err("layers must be a nonempty list of positive counts".into());
        }
        if p.dim < 2 {
            return Err("dim must be at least 2".into());
        }
        if !(p.entry_min > 0.0 && p.entry_min <= p.entry_max && p.entry_max.is_finite()) {
            return Err("entries must satisfy 0 < entry_min <= entry_max".into());
        }
        if p.starts.0 >= p.dim || p.starts.1 >= p.dim {
            return Err("starts must be row indices below dim".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let reps = coupling_reports(p, stream)?;
        let mut out = Outcome::default();
        for (m, r) in p.layers.iter().zip(&reps) {
            let label = format!("m={m}");
            out.estimate("not_coupled", &label, &r.not_coupled);
            out.metric("product_bound", &label, r.product_bound);
            let lim = r.product_bound + p.sigmas * r.not_coupled.stderr;
            out.check(
                &format!("coupling {label}"),
                r.not_coupled.mean <= lim,
                format!("{} <= {} + {} sigma", r.not_coupled.mean, r.product_bound, p.sigmas),
            );
        }
        out.details = serde_json::to_value(&reps).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
