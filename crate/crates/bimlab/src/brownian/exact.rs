//! Exact annulus exit law and the ±1 chain of successive spheres
//! `∂B(0, e^{t/p})`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BrownianError;
use crate::rng::RngStream;
use crate::stats::Estimate;

/// Probability that Brownian motion started at radius `r` hits the sphere
/// of radius `a` before the sphere of radius `b` (three dimensions).
pub fn annulus_exit_prob(a: f64, r: f64, b: f64) -> Result<f64, BrownianError> {
    if !(a > 0.0 && a <= r && r <= b && b.is_finite()) {
        return Err(BrownianError::InvalidArgument(format!(
            "need 0 < a <= r <= b, got ({a}, {r}, {b})"
        )));
    }
    if a == b {
        return Err(BrownianError::InvalidArgument("degenerate annulus a = b".into()));
    }
    let p = (1.0 / r - 1.0 / b) / (1.0 / a - 1.0 / b);
    Ok(p.clamp(0.0, 1.0))
}

fn check_p(p: f64) -> Result<(), BrownianError> {
    if !(p >= 1.0) {
        return Err(BrownianError::InvalidArgument(format!("p = {p} must be >= 1")));
    }
    Ok(())
}

/// `P(X = -1) = e^{-1/p} / (1 + e^{-1/p})`.
pub fn sphere_chain_downstep_prob(p: f64) -> Result<f64, BrownianError> {
    check_p(p)?;
    let q = (-1.0 / p).exp();
    Ok(q / (1.0 + q))
}

/// `E[exp(-X / (2p))] = 2 e^{-1/(2p)} / (1 + e^{-1/p})`.
pub fn sphere_chain_step_mgf(p: f64) -> Result<f64, BrownianError> {
    check_p(p)?;
    Ok(2.0 * (-0.5 / p).exp() / (1.0 + (-1.0 / p).exp()))
}

/// Absolute `c > 0` with `mgf(p)^(p^2) <= e^{-c}` for all `p >= 1`.
/// The mgf equals `1 / cosh(1/(2p))` and `p^2 ln cosh(1/(2p))` increases
/// from `ln cosh(1/2)` at `p = 1` towards `1/8`, so the minimum is at `p = 1`.
pub fn sphere_chain_mgf_exponent() -> f64 {
    0.5f64.cosh().ln()
}

/// One chain step: `-1` with the annulus exit probability from radius 1
/// between `e^{-1/p}` and `e^{1/p}`, `+1` otherwise.
pub fn sample_chain_step<R: Rng + ?Sized>(p: f64, rng: &mut R) -> i64 {
    let q = annulus_exit_prob((-1.0 / p).exp(), 1.0, (1.0 / p).exp()).expect("valid annulus");
    if rng.random::<f64>() < q {
        -1
    } else {
        1
    }
}

/// Runs the chain from `t0` until `stop` holds for the sequence so far.
pub fn simulate_sphere_chain(
    p: f64,
    t0: i64,
    mut stop: impl FnMut(&[i64]) -> bool,
    stream: &RngStream,
) -> Result<Vec<i64>, BrownianError> {
    check_p(p)?;
    let mut rng = stream.rng();
    let mut seq = vec![t0];
    while !stop(&seq) {
        let t = *seq.last().unwrap();
        seq.push(t + sample_chain_step(p, &mut rng));
    }
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub downstep: Estimate,
    pub mgf: Estimate,
}

/// Downstep frequency and `E[exp(-X/(2p))]` estimated from `steps`
/// independent chain steps.
pub fn mc_sphere_chain(p: f64, steps: u64, stream: &RngStream) -> Result<ChainStats, BrownianError> {
    check_p(p)?;
    if steps == 0 {
        return Err(BrownianError::InvalidArgument("steps must be positive".into()));
    }
    let mut rng = stream.rng();
    let mut down = 0u64;
    for _ in 0..steps {
        if sample_chain_step(p, &mut rng) < 0 {
            down += 1;
        }
    }
    let (lo, hi) = ((0.5 / p).exp(), (-0.5 / p).exp());
    let n = steps as f64;
    let mean = (down as f64 * lo + (n - down as f64) * hi) / n;
    let f = down as f64 / n;
    let var = f * (1.0 - f) * (lo - hi).powi(2);
    Ok(ChainStats {
        downstep: Estimate::proportion(down, steps),
        mgf: Estimate {
            mean,
            stderr: (var / n).sqrt(),
            samples: steps,
        },
    })
}
