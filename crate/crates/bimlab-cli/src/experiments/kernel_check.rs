//! Property suite for the kernel functionals on seeded random instances.

use bimlab::kernelfun::{
    convolve, extremal_tv, extremal_tv_oracle, maximal_coupling, min_max_slack, row_average, switching_constant,
    verify_tricky, weighted_tv, DiscreteKernel, ExtendedPositive, FiniteMeasure,
};
use bimlab::RngStream;
use rand::Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::positive;
use crate::report::Outcome;
use crate::Experiment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Random instances per property.
    pub instances: u64,
    /// Extra kernels with planted zeros for the identity check.
    pub zero_instances: u64,
    pub min_dim: usize,
    pub max_dim: usize,
    /// Decreasing epsilons of the two-point oracle.
    pub eps_ladder: Vec<f64>,
    /// Allowed gap between the oracle and the closed form.
    pub rk_tolerance: f64,
    /// Slack allowed in the inequalities.
    pub tolerance: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            instances: 200,
            zero_instances: 20,
            min_dim: 2,
            max_dim: 8,
            eps_ladder: vec![1e-3, 1e-6, 1e-9],
            rk_tolerance: 1e-6,
            tolerance: 1e-12,
        }
    }
}

/// Violations of one property over a batch of instances. `worst` is the
/// largest amount by which the property failed (0 when it never did).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub instances: u64,
    pub violations: u64,
    pub worst: f64,
}

/// Runs `excess` on `count` instances, each with its own substream; a
/// positive excess is a violation.
pub fn run_property<F>(name: &str, count: u64, stream: &RngStream, excess: F) -> PropertyResult
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let s = stream.labeled(name);
    let ex: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| excess(&mut s.substream(i).rng()))
        .collect();
    let bad: Vec<f64> = ex.iter().copied().filter(|e| !(*e <= 0.0)).collect();
    PropertyResult {
        name: name.to_string(),
        instances: count,
        violations: bad.len() as u64,
        worst: bad
            .iter()
            .copied()
            .fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) }),
    }
}

fn dim<R: Rng + ?Sized>(p: &Params, rng: &mut R) -> usize {
    rng.random_range(p.min_dim..=p.max_dim)
}

/// Entries uniform in `(0, 1]`.
pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| 1.0 - rng.random::<f64>()).collect())
        .collect()
}

fn random_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| 1.0 - rng.random::<f64>()).collect()
}

fn kernel(v: Vec<Vec<f64>>) -> DiscreteKernel {
    DiscreteKernel::from_matrix(v).expect("random entries are valid")
}

fn measure(w: Vec<f64>) -> FiniteMeasure {
    FiniteMeasure::from_weights(w).expect("random weights are valid")
}

fn closed_form(k: ExtendedPositive) -> f64 {
    if k.is_infinite() {
        1.0
    } else {
        1.0 - 2.0 / (1.0 + k.value().sqrt())
    }
}

/// `|oracle - (1 - 2/(1 + sqrt K))| - rk_tolerance`; with `zeros` some
/// entries are set to 0.
pub fn rk_identity<R: Rng + ?Sized>(p: &Params, zeros: bool, rng: &mut R) -> f64 {
    let (e, f) = (dim(p, rng), dim(p, rng));
    let mut m = random_matrix(e, f, rng);
    if zeros {
        let planted = rng.random_range(1..=e * f / 2);
        for _ in 0..planted {
            let (i, j) = (rng.random_range(0..e), rng.random_range(0..f));
            m[i][j] = 0.0;
        }
    }
    let k = kernel(m);
    let oracle = extremal_tv_oracle(&k, &p.eps_ladder).expect("valid ladder");
    (oracle - closed_form(switching_constant(&k))).abs() - p.rk_tolerance
}

/// `T(p * q(μ), ν) - T(p, μ) T(q, ν)` for `μ`-normalized rows of `p` and
/// `ν`-normalized rows of `q`, minus the tolerance.
pub fn submult_t<R: Rng + ?Sized>(p: &Params, rng: &mut R) -> f64 {
    let (e, f, g) = (dim(p, rng), dim(p, rng), dim(p, rng));
    let mu = random_weights(f, rng);
    let nu = random_weights(g, rng);
    let normalize = |m: Vec<Vec<f64>>, w: &[f64]| -> Vec<Vec<f64>> {
        m.into_iter()
            .map(|r| {
                let s: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
                r.into_iter().map(|a| a / s).collect()
            })
            .collect()
    };
    let pk = kernel(normalize(random_matrix(e, f, rng), &mu));
    let qk = kernel(normalize(random_matrix(f, g, rng), &nu));
    let (mu, nu) = (measure(mu), measure(nu));
    let conv = convolve(&pk, &qk, &mu).expect("composable");
    let lhs = weighted_tv(&conv, &nu).expect("positive measure");
    let rhs = weighted_tv(&pk, &mu).expect("positive measure") * weighted_tv(&qk, &nu).expect("positive measure");
    lhs - rhs - p.tolerance
}

/// `R(p * q(μ)) - R(p) R(q)` minus the tolerance.
pub fn submult_r<R: Rng + ?Sized>(p: &Params, rng: &mut R) -> f64 {
    let (e, f, g) = (dim(p, rng), dim(p, rng), dim(p, rng));
    let pk = kernel(random_matrix(e, f, rng));
    let qk = kernel(random_matrix(f, g, rng));
    let mu = measure(random_weights(f, rng));
    let conv = convolve(&pk, &qk, &mu).expect("composable");
    extremal_tv(&conv) - extremal_tv(&pk) * extremal_tv(&qk) - p.tolerance
}

fn k_excess(lhs: ExtendedPositive, rhs: ExtendedPositive, tol: f64) -> f64 {
    if rhs.is_infinite() {
        return -1.0;
    }
    if lhs.is_infinite() {
        return f64::INFINITY;
    }
    lhs.value() - rhs.value() * (1.0 + tol) - tol
}

/// Largest of `K(r) - K(q)` (relative slack) and `R(r) - R(q)` for a random
/// row average `r` of `q`.
pub fn averaging<R: Rng + ?Sized>(p: &Params, rng: &mut R) -> f64 {
    let (e, f, g) = (dim(p, rng), dim(p, rng), dim(p, rng));
    let q = kernel(random_matrix(f, g, rng));
    let fam = kernel(random_matrix(e, f, rng));
    let r = row_average(&q, &fam).expect("composable");
    let dk = k_excess(switching_constant(&r), switching_constant(&q), p.tolerance);
    let dr = extremal_tv(&r) - extremal_tv(&q) - p.tolerance;
    dk.max(dr)
}

/// Minus the slack of the min/max inequality.
pub fn min_max<R: Rng + ?Sized>(p: &Params, rng: &mut R) -> f64 {
    let n = dim(p, rng);
    let nu = random_weights(n, rng);
    let top = |rng: &mut R| -> (Vec<f64>, Vec<f64>) {
        let hi = random_weights(n, rng);
        let mass: f64 = hi.iter().zip(&nu).map(|(a, b)| a * b).sum();
        let hi: Vec<f64> = hi.iter().map(|v| v / mass).collect();
        let lo = hi.iter().map(|v| v * rng.random::<f64>()).collect();
        (lo, hi)
    };
    let (f, fp) = top(rng);
    let (g, gp) = top(rng);
    -min_max_slack(&nu, &f, &fp, &g, &gp).expect("equal lengths") - p.tolerance
}

/// 1 when the contraction bound fails on a random contraction with leakage
/// `a = 0.9 U`, -1 otherwise.
pub fn tricky<R: Rng + ?Sized>(p: &Params, rng: &mut R) -> f64 {
    let (e, f) = (dim(p, rng), dim(p, rng));
    let pk = kernel(random_matrix(e, f, rng));
    let mu = random_weights(f, rng);
    let raw = random_matrix(f, e, rng);
    let s = random_weights(f, rng);
    let mass: Vec<f64> = raw.iter().map(|r| r.iter().sum()).collect();
    let a0 = (0..e)
        .map(|x| (0..f).map(|y| pk.get(x, y) * mass[y] * mu[y]).sum::<f64>())
        .fold(0.0f64, f64::max);
    let target = 0.9 * rng.random::<f64>();
    let scale = target / a0;
    let vals = raw.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    let nu = DiscreteKernel::new(pk.col_labels.clone(), pk.row_labels.clone(), vals).expect("valid kernel");
    match verify_tricky(&pk, &nu, &s, &measure(mu)) {
        Ok(rep) if rep.holds => -1.0,
        _ => 1.0,
    }
}

/// `|diagonal mass - (1 - TV)|` minus the tolerance, with TV summed
/// directly.
pub fn coupling<R: Rng + ?Sized>(p: &Params, rng: &mut R) -> f64 {
    let n = dim(p, rng);
    let a = random_weights(n, rng);
    let b = random_weights(n, rng);
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let tv = 0.5 * a.iter().zip(&b).map(|(x, y)| (x / sa - y / sb).abs()).sum::<f64>();
    let c = maximal_coupling(&measure(a), &measure(b)).expect("positive masses");
    (c.diagonal_mass() - (1.0 - tv)).abs() - p.tolerance
}

/// Largest cross-ratio of `u = p f`, `v = p g` over row pairs, relative to
/// `K(p)`.
pub fn bhp<R: Rng + ?Sized>(p: &Params, rng: &mut R) -> f64 {
    let (e, f) = (dim(p, rng), dim(p, rng));
    let pk = kernel(random_matrix(e, f, rng));
    let fv = random_weights(f, rng);
    let gv = random_weights(f, rng);
    let apply = |w: &[f64]| -> Vec<f64> { (0..e).map(|x| (0..f).map(|y| pk.get(x, y) * w[y]).sum()).collect() };
    let (u, v) = (apply(&fv), apply(&gv));
    let mut sup = 1.0f64;
    for x1 in 0..e {
        for x2 in 0..e {
            sup = sup.max(u[x1] * v[x2] / (u[x2] * v[x1]));
        }
    }
    k_excess(
        ExtendedPositive::new(sup).expect("ratio >= 1"),
        switching_constant(&pk),
        p.tolerance,
    )
}

/// All properties at the given instance counts.
pub fn run_suite(p: &Params, stream: &RngStream) -> Vec<PropertyResult> {
    let n = p.instances;
    vec![
        run_property("rk_identity", n, stream, |r| rk_identity(p, false, r)),
        run_property("rk_identity_zeros", p.zero_instances, stream, |r| {
            rk_identity(p, true, r)
        }),
        run_property("submultiplicative_t", n, stream, |r| submult_t(p, r)),
        run_property("submultiplicative_r", n, stream, |r| submult_r(p, r)),
        run_property("averaging", n, stream, |r| averaging(p, r)),
        run_property("min_max", n, stream, |r| min_max(p, r)),
        run_property("tricky", n, stream, |r| tricky(p, r)),
        run_property("maximal_coupling", n, stream, |r| coupling(p, r)),
        run_property("bhp_ratio", n, stream, |r| bhp(p, r)),
    ]
}

pub struct KernelCheck;

impl Experiment for KernelCheck {
    type Params = Params;
    const NAME: &'static str = "kernel-check";

    fn validate(p: &Params) -> Result<(), String> {
        positive("instances", p.instances)?;
        if !(2 <= p.min_dim && p.min_dim <= p.max_dim && p.max_dim <= 16) {
            return Err(format!(
                "dimensions must satisfy 2 <= min_dim <= max_dim <= 16, got {} and {}",
                p.min_dim, p.max_dim
            ));
        }
        if p.eps_ladder.is_empty() || p.eps_ladder.iter().any(|e| !(*e > 0.0)) {
            return Err("eps_ladder must be a nonempty list of positive reals".into());
        }
        if !(p.rk_tolerance >= 0.0 && p.tolerance >= 0.0) {
            return Err("tolerances must be nonnegative".into());
        }
        Ok(())
    }

    fn run(p: &Params, stream: &RngStream) -> Result<Outcome, String> {
        let results = run_suite(p, stream);
        let mut out = Outcome::default();
        for r in &results {
            out.metric("violations", &r.name, r.violations as f64);
            out.metric("worst_excess", &r.name, r.worst);
            out.check(
                &r.name,
                r.violations == 0,
                format!("{} violations in {} instances", r.violations, r.instances),
            );
        }
        out.details = serde_json::to_value(&results).map_err(|e| e.to_string())?;
        Ok(out)
    }
}
