//! Cover-time machinery: exact geometric-sum checks, the Chernoff bound
//! against exact tails, and cone-cover replay on sampled traces.

use bimlab::brownian::sample_until_exit;
use bimlab::covertime::{
    check_shift_inequality, chernoff_cover_bound, exact_cover_tail, geometric_sum_cdf, simulate_cone_cover,
    CoverConfig, GeomSumModel, TransitionBound,
};
use bimlab::geometry::{build_cone_family, ConeConstants};
use bimlab::rng::unit_vector;
use bimlab::stats::Estimate;
use bimlab::RngStream;
use rand::Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{positive, positive_real};
use crate::report::Outcome;
use crate::Experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Success probabilities from which nondecreasing models are built.
    pub shift_probs: Vec<f64>,
    pub shift_max_n: usize,
    pub shift_max_m: usize,
    pub shift_max_r: usize,
    /// Random instances compared with brute-force enumeration.
    pub cdf_instances: u64,
    pub cdf_tolerance: f64,
    pub chernoff_ks: Vec<f64>,
    pub chernoff_ns: Vec<usize>,
    pub chernoff_ms: Vec<usize>,
    /// Number of groups of the cone family.
    pub cone_n: usize,
    pub cone_u1: f64,
    /// Transition budget per trace; 0 means `4 cone_n^2`.
    pub budget: usize,
    pub replicas: u64,
    pub start_radius: f64,
    pub trace_radius: f64,
    pub dt: f64,
    /// Smallest acceptable fraction of uncovered replicas.
    pub min_failure_rate: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            shift_probs: vec![0.1, 0.3, 0.5, 0.8, 1.0],
            shift_max_n: 2,
            shift_max_m: 3,
            shift_max_r: 20,
            cdf_instances: 50,
            cdf_tolerance: 1e-12,
            chernoff_ks: vec![0.5, 1.0, 1.5, 2.0],
            chernoff_ns: vec![1, 2, 4, 6],
            chernoff_ms: vec![5, 10, 20, 40],
            cone_n: 20,
            cone_u1: 1.6,
            budget: 0,
            replicas: 100,
            start_radius: 0.05,
            trace_radius: 2.0,
            dt: 1e-4,
            min_failure_rate: 0.95,
        }
    }
}

/// Nondecreasing sequences of length `len` drawn from `probs`.
fn monotone_models(probs: &[f64], len: usize) -> Vec<Vec<f64>> {
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|seq: Vec<f64>| {
                let last = seq.last().copied().unwrap_or(f64::NEG_INFINITY);
                sorted
                    .iter()
                    .filter(move |&&p| p >= last)
                    .map(|&p| {
                        let mut s = seq.clone();
                        s.push(p);
                        s
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    out
}

/// `(cases checked, failures)` of the shift inequality over every model,
/// count vector, group and budget in range.
pub fn shift_exhaustive(p: &Params) -> Result<(u64, u64), String> {
    let mut checked = 0;
    let mut failed = 0;
    for m in 1..=p.shift_max_m {
        for seq in monotone_models(&p.shift_probs, m) {
            let model = GeomSumModel::new(seq).map_err(|e| e.to_string())?;
            for n in 1..=p.shift_max_n {
                for code in 0..(m + 1).pow(n as u32) {
                    let counts: Vec<usize> = (0..n).map(|i| code / (m + 1).pow(i as u32) % (m + 1)).collect();
                    for i in 0..n {
                        for r in 0..=p.shift_max_r {
                            checked += 1;
                            if !check_shift_inequality(&model, &counts, i, r).map_err(|e| e.to_string())? {
                                failed += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((checked, failed))
}

/// `P(Σ G(p_i) <= r)` by recursion over the value of each variable.
pub fn brute_force_cdf(ps: &[f64], r: usize) -> f64 {
    match ps.split_first() {
        None => 1.0,
        Some((&p, rest)) => (1..=r)
            .map(|z| p * (1.0 - p).powi(z as i32 - 1) * brute_force_cdf(rest, r - z))
            .sum(),
    }
}

/// Largest gap between the dynamic program and the enumeration.
pub fn cdf_worst_gap(p: &Params, stream: &RngStream) -> Result<f64, String> {
    let gaps: Vec<Result<f64, String>> = (0..p.cdf_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.substream(i).rng();
            let m = rng.random_range(1..=3usize);
            let mut probs: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..=1.0)).collect();
            probs.sort_by(f64::total_cmp);
            let model = GeomSumModel::new(probs.clone()).map_err(|e| e.to_string())?;
            let n = rng.random_range(1..=2usize);
            let counts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=m)).collect();
            let r = rng.random_range(0..=10usize);
            let ps: Vec<f64> = counts.iter().flat_map(|&k| probs[..k].to_vec()).collect();
            let dp = geometric_sum_cdf(&model, &counts, r).map_err(|e| e.to_string())?;
            Ok((dp - brute_force_cdf(&ps, r)).abs())
        })
        .collect();
    gaps.into_iter().try_fold(0.0f64, |a, g| g.map(|g| a.max(g)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChernoffCase {
    pub f: TransitionBound,
    pub big_k: f64,
    pub n: usize,
    pub m: usize,
    pub bound: f64,
    pub tail: f64,
}

pub fn chernoff_bounds() -> Vec<TransitionBound> {
    vec![
        TransitionBound::Linear { c: 1.0 },
        TransitionBound::Power { c: 1.0, alpha: 1.5 },
        TransitionBound::XLog { c5: 0.5 },
    ]
}

/// Every grid instance where `m >= m1` and the exact tail is computable,
/// with `q^{mn}` and the tail.
pub fn chernoff_cases(p: &Params) -> Vec<ChernoffCase> {
    let mut out = Vec::new();
    for f in chernoff_bounds() {
        for &big_k in &p.chernoff_ks {
            for &n in &p.chernoff_ns {
                for &m in &p.chernoff_ms {
                    let cfg = CoverConfig { n, m, k: 1, big_k, f };
                    let Ok(b) = chernoff_cover_bound(&cfg) else { continue };
                    if !b.m1.is_some_and(|m1| m >= m1) {
                        continue;
                    }
                    let Ok(tail) = exact_cover_tail(&cfg) else { continue };
                    out.push(ChernoffCase {
                        f,
                        big_k,
                        n,
                        m,
                        bound: b.q.powi((m * n) as i32),
                        tail,
                    });
                }
            }
        }
    }
    out
}

/// Fraction of replicas whose trace leaves some tube unvisited.
pub fn cone_cover_failures(p: &Params, stream: &RngStream) -> Result<Estimate, String> {
    let fam = build_cone_family(p.cone_n, p.cone_u1, ConeConstants::default()).map_err(|e| e.to_string())?;
    let budget = if p.budget == 0 {
        4 * p.cone_n * p.cone_n
    } else {
        p.budget
    };
    let fails = (0..p.replicas)
        .into_par_iter()
        .filter(|&i| {
            let st = stream.substream(i);
            let x0 = unit_vector(&mut st.rng()) * p.start_radius;
            let tr = sample_until_exit(x0, p.trace_radius, p.dt, &st.labeled("trace"));
            !simulate_cone_cover(&[tr], &fam, budget).covered
        })
        .count() as u64;
    Ok(Estimate::proportion(fails, p.replicas))
}

pub struct CoverSim;

impl Experiment for CoverSim {
    type Params = Params;
    const NAME: &'static str = "cover-sim";

    fn validate(p: &Params) -> Result<(), String> {
        if p.shift_probs.is_empty() || p.shift_probs.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err("shift_probs must be a nonempty list in (0, 1]".into());
        }
        if p.shift_max_m > 6 || p.shift_max_n > 3 || p.shift_max_r > 200 {
            return Err("shift ranges are limited to m <= 6, n <= 3, r <= 200".into());
        }
        positive("replicas", p.replicas)?;
        positive_real("dt", p.dt)?;
        positive_real("trace_radius", p.trace_radius)?;
        if !(p.start_radius >= 0.0 && p.start_radius < p.trace_radius) {
            return Err("start_radius must lie in [0, trace_radius)".into());
        }
        if p.cone_n == 0 {
            return Err("cone_n must be positive".into());
        }
        if p.chernoff_ns.contains(&0) || p.chernoff_ms.iter().any(|&m| m < 2) {
            return Err("chernoff grid needs n >= 1 and m >= 2".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let mut out = Outcome::default();
        let (checked, failed) = shift_exhaustive(p)?;
        out.metric("shift_cases", "", checked as f64);
        out.metric("shift_failures", "", failed as f64);
        out.check(
            "shift inequality",
            failed == 0,
            format!("{failed} failures in {checked} cases"),
        );

        let gap = cdf_worst_gap(p, &stream.labeled("cdf"))?;
        out.metric("cdf_worst_gap", "", gap);
        out.check("cdf enumeration", gap <= p.cdf_tolerance, format!("worst gap {gap}"));

        let cases = chernoff_cases(p);
        let bad = cases.iter().filter(|c| !(c.bound >= c.tail)).count();
        out.metric("chernoff_cases", "", cases.len() as f64);
        out.metric("chernoff_failures", "", bad as f64);
        out.check(
            "chernoff domination",
            !cases.is_empty() && bad == 0,
            format!("{bad} failures in {} computable cases", cases.len()),
        );

        let fails = cone_cover_failures(p, &stream.labeled("cones"))?;
        out.estimate("cone_cover_failure_rate", format!("n={}", p.cone_n), &fails);
        out.check(
            "cone cover fails",
            fails.mean >= p.min_failure_rate,
            format!("failure rate {} (minimum {})", fails.mean, p.min_failure_rate),
        );
        out.details = serde_json::json!({ "chernoff": cases });
        Ok(out)
    }
}
