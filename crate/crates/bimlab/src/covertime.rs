//! Downward deviations of cover times: exact geometric-sum laws, the
//! induction step, the Chernoff bound, exact domination on small chains and
//! the cone-cover replay along sampled traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brownian::{sample_chain_step, Path3D};
use crate::geometry::{ConeFamily, Vec3};
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoverError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inadmissible transition bound: {0}")]
    Inadmissible(String),
    #[error("state space too large: {0}")]
    StateSpace(String),
}

/// Transition-bound function `F` on `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransitionBound {
    /// `F(x) = c`.
    Constant { c: f64 },
    /// `F(x) = c x`.
    Linear { c: f64 },
    /// `F(x) = c x^alpha`.
    Power { c: f64, alpha: f64 },
    /// `F(x) = c5 (x ln(1/x) + x)`.
    XLog { c5: f64 },
}

impl Default for TransitionBound {
    fn default() -> Self {
        TransitionBound::XLog { c5: 1e-3 }
    }
}

impl TransitionBound {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TransitionBound::Constant { c } => c,
            TransitionBound::Linear { c } => c * x,
            TransitionBound::Power { c, alpha } => c * x.powf(alpha),
            TransitionBound::XLog { c5 } => c5 * (x * (1.0 / x).ln() + x),
        }
    }

    pub fn validate(&self) -> Result<(), CoverError> {
        let ok = match *self {
            TransitionBound::Constant { c } | TransitionBound::Linear { c } => c > 0.0 && c.is_finite(),
            TransitionBound::Power { c, alpha } => c > 0.0 && c.is_finite() && alpha > 0.0 && alpha.is_finite(),
            TransitionBound::XLog { c5 } => c5 > 0.0 && c5.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(CoverError::InvalidArgument(format!(
                "invalid transition bound {self:?}"
            )))
        }
    }

    /// `∫_lo^1 g(F(x)) dx` by 16-point Gauss-Legendre on dyadic shells.
    fn integrate(&self, lo_exp: i32, g: impl Fn(f64) -> f64) -> f64 {
        let mut total = 0.0;
        for k in 0..lo_exp {
            let (a, b) = ((-(k as f64) - 1.0).exp2(), (-(k as f64)).exp2());
            let (h, c) = (0.5 * (b - a), 0.5 * (b + a));
            total += h * GL16.iter().map(|&(x, w)| w * g(self.eval(c + h * x))).sum::<f64>();
        }
        total
    }

    /// Numerical proxy for `∫_0^1 dx / F = ∞`: the integral over `[2^-30, 1]`.
    pub fn inverse_integral_proxy(&self) -> f64 {
        self.integrate(30, |f| 1.0 / f)
    }

    /// `∫_0^1 dx / F(x) >= 10^3` over `[2^-30, 1]`.
    pub fn admissible_proxy(&self) -> bool {
        self.inverse_integral_proxy() >= 1e3
    }
}

#[allow(clippy::excessive_precision)]
const GL16: [(f64, f64); 16] = [
    (-0.989_400_934_991_649_9, 0.027_152_459_411_754_1),
    (-0.944_575_023_073_232_6, 0.062_253_523_938_647_9),
    (-0.865_631_202_387_831_7, 0.095_158_511_682_492_8),
    (-0.755_404_408_355_003_0, 0.124_628_971_255_533_9),
    (-0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
    (-0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
    (-0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (-0.095_012_509_837_637_4, 0.189_450_610_455_068_5),
    (0.095_012_509_837_637_4, 0.189_450_610_455_068_5),
    (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
    (0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
    (0.755_404_408_355_003_0, 0.124_628_971_255_533_9),
    (0.865_631_202_387_831_7, 0.095_158_511_682_492_8),
    (0.944_575_023_073_232_6, 0.062_253_523_938_647_9),
    (0.989_400_934_991_649_9, 0.027_152_459_411_754_1),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Step budget coefficient.
    pub big_k: f64,
    pub f: TransitionBound,
}

/// Independent geometric laws `G(p_j)` on `{1, 2, ...}`, `p_j = min(F(j/m), 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeomSumModel {
    pub p: Vec<f64>,
}

impl GeomSumModel {
    pub fn from_bound(f: &TransitionBound, m: usize) -> Result<Self, CoverError> {
        f.validate()?;
        Self::new((1..=m).map(|j| f.eval(j as f64 / m as f64).min(1.0)).collect())
    }

    pub fn new(p: Vec<f64>) -> Result<Self, CoverError> {
        if p.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(CoverError::InvalidArgument(
                "success probabilities must lie in (0, 1]".into(),
            ));
        }
        if p.windows(2).any(|w| w[1] < w[0]) {
            return Err(CoverError::InvalidArgument(
                "success probabilities must be nondecreasing".into(),
            ));
        }
        Ok(Self { p })
    }

    pub fn m(&self) -> usize {
        self.p.len()
    }

    /// `p_j` for `j >= 1`, with `p_0 = 0`.
    pub fn p_at(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.p[j - 1]
        }
    }
}

/// Distribution of a sum of geometric variables restricted to `{0..=r}`.
fn sum_distribution(ps: impl Iterator<Item = f64>, r: usize) -> Vec<f64> {
    let mut dist = vec![0.0; r + 1];
    dist[0] = 1.0;
    let mut next = vec![0.0; r + 1];
    for p in ps {
        next[0] = 0.0;
        for s in 1..=r {
            next[s] = p * dist[s - 1] + (1.0 - p) * next[s - 1];
        }
        std::mem::swap(&mut dist, &mut next);
    }
    dist
}

fn check_counts(model: &GeomSumModel, counts: &[usize]) -> Result<(), CoverError> {
    if counts.iter().any(|&k| k > model.m()) {
        return Err(CoverError::InvalidArgument(format!(
            "counts must be <= m = {}",
            model.m()
        )));
    }
    Ok(())
}

/// `L_r(k_1..k_n) = P(Σ_i Σ_{j <= k_i} Z_{i,j} <= r)`.
pub fn geometric_sum_cdf(model: &GeomSumModel, counts: &[usize], r: usize) -> Result<f64, CoverError> {
    check_counts(model, counts)?;
    let ps = counts.iter().flat_map(|&k| model.p[..k].iter().copied());
    Ok(sum_distribution(ps, r).iter().sum::<f64>().min(1.0))
}

/// `L_r(k)(1 - p_{k_i}) + L_r(k - e_i) p_{k_i} <= L_{r+1}(k)` up to `1e-12`.
pub fn check_shift_inequality(model: &GeomSumModel, counts: &[usize], i: usize, r: usize) -> Result<bool, CoverError> {
    check_counts(model, counts)?;
    if i >= counts.len() {
        return Err(CoverError::InvalidArgument(format!("group {i} out of range")));
    }
    let ki = counts[i];
    if ki == 0 {
        return Ok(true);
    }
    let p = model.p_at(ki);
    let mut lower = counts.to_vec();
    lower[i] -= 1;
    let lhs = geometric_sum_cdf(model, counts, r)? * (1.0 - p) + geometric_sum_cdf(model, &lower, r)? * p;
    Ok(lhs <= geometric_sum_cdf(model, counts, r + 1)? + 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffBound {
    pub v: f64,
    /// `q = e^{-v K}`.
    pub q: f64,
    /// `∫_0^1 (e^v - 1 + F)^{-1} dx` at the returned `v` (exceeds `3K`).
    pub integral: f64,
    /// First `m > k` at which `(1/m) Σ_{j <= m-k} 1/(e^v - 1 + F(j/m)) > 2K`.
    pub m1: Option<usize>,
    /// Numerical divergence proxy for `∫ 1/F`.
    pub admissible_proxy: bool,
}

fn chernoff_integral(f: &TransitionBound, v: f64) -> f64 {
    let ev = v.exp_m1();
    // The integrand is bounded by 1/ev, so the tail below 2^-80 is negligible.
    f.integrate(80, |fx| 1.0 / (ev + fx))
}

fn discrete_condition(f: &TransitionBound, v: f64, m: usize, k: usize, big_k: f64) -> bool {
    let ev = v.exp_m1();
    let s: f64 = (1..=m - k).map(|j| 1.0 / (ev + f.eval(j as f64 / m as f64))).sum();
    s / m as f64 > 2.0 * big_k
}

/// Chooses `v` with `∫_0^1 (e^v - 1 + F(x))^{-1} dx > 3K` (bisection for the
/// largest such `v`, returning the side where the inequality holds) and the
/// threshold `m1`. Errors when the condition has no solution, i.e. when
/// `∫ 1/F <= 3K`. The solution set is `(0, v*)` and `v*` decreases as `K`
/// grows.
pub fn chernoff_cover_bound(cfg: &CoverConfig) -> Result<ChernoffBound, CoverError> {
    cfg.f.validate()?;
    if !(cfg.big_k > 0.0 && cfg.big_k.is_finite()) {
        return Err(CoverError::InvalidArgument("K must be positive".into()));
    }
    let target = 3.0 * cfg.big_k;
    let g = |v: f64| chernoff_integral(&cfg.f, v);
    let mut hi = 1.0;
    while g(hi) > target {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(CoverError::InvalidArgument("integral does not decay".into()));
        }
    }
    let mut lo = hi;
    while g(lo) <= target {
        lo /= 2.0;
        if lo < 1e-300 {
            return Err(CoverError::Inadmissible(format!(
                "no v > 0 with integral above 3K = {target}; the inverse integral of F is too small"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = lo;
    let m1 = first_m1(&cfg.f, v, cfg.k, cfg.big_k);
    Ok(ChernoffBound {
        v,
        q: (-v * cfg.big_k).exp(),
        integral: g(v),
        m1,
        admissible_proxy: cfg.f.admissible_proxy(),
    })
}

/// Linear scan up to `2^14`, then the first success along a doubling
/// sequence up to `2^26`.
fn first_m1(f: &TransitionBound, v: f64, k: usize, big_k: f64) -> Option<usize> {
    let start = k + 1;
    (start..=(1 << 14))
        .find(|&m| discrete_condition(f, v, m, k, big_k))
        .or_else(|| {
            let mut m = (1usize << 15).max(start);
            while m <= 1 << 26 {
                if discrete_condition(f, v, m, k, big_k) {
                    return Some(m);
                }
                m *= 2;
            }
            None
        })
}

/// Exact `P(Σ_{i <= n} Σ_{j <= m-k} Z_{i,j} <= floor(K m n))`.
pub fn exact_cover_tail(cfg: &CoverConfig) -> Result<f64, CoverError> {
    let model = GeomSumModel::from_bound(&cfg.f, cfg.m)?;
    let counts = vec![cfg.m.saturating_sub(cfg.k); cfg.n];
    let r = (cfg.big_k * (cfg.m * cfg.n) as f64).floor() as usize;
    geometric_sum_cdf(&model, &counts, r)
}

/// Small process on `n` groups of `m` items (item `g * m + j` is item `j` of
/// group `g`), Markov in the current item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemChain {
    pub n: usize,
    pub m: usize,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub f: TransitionBound,
}

impl ItemChain {
    pub fn items(&self) -> usize {
        self.n * self.m
    }

    /// Checks `P(x, H) <= F(|H|/m) P(x, G_i)` for every state `x`, group
    /// `i` and nonempty `H ⊆ G_i`.
    pub fn satisfies_f_condition(&self) -> bool {
        let m = self.m;
        for row in &self.transition {
            for g in 0..self.n {
                let grp = &row[g * m..(g + 1) * m];
                let tot: f64 = grp.iter().sum();
                for mask in 1u32..(1 << m) {
                    let h: f64 = (0..m).filter(|b| mask >> b & 1 == 1).map(|b| grp[b]).sum();
                    let size = mask.count_ones() as f64 / m as f64;
                    if h > self.f.eval(size) * tot * (1.0 + 1e-12) + 1e-15 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn validate(&self) -> Result<(), CoverError> {
        let n_items = self.items();
        if n_items == 0 || n_items > 12 {
            return Err(CoverError::StateSpace(format!(
                "{n_items} items; exact DP supports 1..=12"
            )));
        }
        self.f.validate()?;
        let stochastic = |v: &[f64]| {
            v.len() == n_items
                && v.iter().all(|x| x.is_finite() && *x >= 0.0)
                && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if !stochastic(&self.initial)
            || self.transition.len() != n_items
            || !self.transition.iter().all(|r| stochastic(r))
        {
            return Err(CoverError::InvalidArgument(
                "initial law and transition rows must be probability vectors".into(),
            ));
        }
        if !self.satisfies_f_condition() {
            return Err(CoverError::InvalidArgument("chain violates the F-condition".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub holds: bool,
    /// Every checked state with a bound strictly between 0 and 1 has the
    /// exact probability strictly below it.
    pub strict: bool,
    /// `max (exact - bound)` over reachable states.
    pub max_excess: f64,
    pub states_checked: u64,
}

/// For every reachable history `(Y_1..Y_t)`, `1 <= t <= r`, compares the exact
/// `P(all items visited by step r | history)` with `L_{r-t}` of the
/// per-group unvisited counts.
pub fn dp_cover_domination(chain: &ItemChain, r: usize) -> Result<DominationReport, CoverError> {
    chain.validate()?;
    let n_items = chain.items();
    let full = (1usize << n_items) - 1;
    let n_sets = 1usize << n_items;
    let model = GeomSumModel::from_bound(&chain.f, chain.m)?;
    let unvisited = |s: usize| -> Vec<usize> {
        (0..chain.n)
            .map(|g| (0..chain.m).filter(|j| s >> (g * chain.m + j) & 1 == 0).count())
            .collect()
    };
    // Bounds L_{r-t}(U) for every visited set, per remaining budget.
    let mut bound_cache: Vec<Vec<f64>> = Vec::with_capacity(r + 1);
    for rem in 0..=r {
        let row: Vec<f64> = (0..n_sets)
            .map(|s| geometric_sum_cdf(&model, &unvisited(s), rem).expect("valid counts"))
            .collect();
        bound_cache.push(row);
    }
    // value[t][x * n_sets + s]
    let idx = |x: usize, s: usize| x * n_sets + s;
    let mut value = vec![vec![0.0; n_items * n_sets]; r + 1];
    if r >= 1 {
        for x in 0..n_items {
            value[r][idx(x, full)] = 1.0;
        }
        for t in (1..r).rev() {
            let (head, tail) = value.split_at_mut(t + 1);
            let next = &tail[0];
            let cur = &mut head[t];
            for x in 0..n_items {
                for s in 0..n_sets {
                    if s >> x & 1 == 0 {
                        continue;
                    }
                    cur[idx(x, s)] = (0..n_items)
                        .map(|y| chain.transition[x][y] * next[idx(y, s | 1 << y)])
                        .sum();
                }
            }
        }
    }
    let mut reach = vec![false; n_items * n_sets];
    for x in 0..n_items {
        if chain.initial[x] > 0.0 {
            reach[idx(x, 1 << x)] = true;
        }
    }
    let (mut max_excess, mut strict, mut states) = (f64::NEG_INFINITY, true, 0u64);
    for t in 1..=r {
        let mut next_reach = vec![false; n_items * n_sets];
        for x in 0..n_items {
            for s in 0..n_sets {
                if !reach[idx(x, s)] {
                    continue;
                }
                states += 1;
                let exact = value[t][idx(x, s)];
                let bound = bound_cache[r - t][s];
                max_excess = max_excess.max(exact - bound);
                if exact >= bound && bound > 0.0 && bound < 1.0 {
                    strict = false;
                }
                for y in 0..n_items {
                    if chain.transition[x][y] > 0.0 {
                        next_reach[idx(y, s | 1 << y)] = true;
                    }
                }
            }
        }
        reach = next_reach;
    }
    Ok(DominationReport {
        holds: max_excess <= 1e-12,
        strict,
        max_excess,
        states_checked: states,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverOutcome {
    pub covered: bool,
    /// Tube transitions counted per trace (at most the budget).
    pub transitions: Vec<usize>,
    /// `visits[i][j]`: number of budgeted hitting times landing in `T_{i,j}`.
    pub visits: Vec<Vec<u64>>,
    /// Tubes in order of first visit.
    pub first_visits: Vec<(usize, usize)>,
}

/// Tube `T_{i,j}` containing `x`, if any (group cones are disjoint).
pub fn tube_of(family: &ConeFamily, x: Vec3) -> Option<(usize, usize)> {
    let u = x.normalized()?;
    let (sr, tr) = (family.s_radius(), family.t_radius());
    let i = family.groups.iter().position(|g| (*g - u).norm() <= sr)?;
    let j = family.tubes[i].iter().position(|t| (*t - u).norm() <= tr)?;
    Some((i, j))
}

/// Replays the successive hitting times of distinct tubes along each trace:
/// `X_0` is the first tube hit, and `X_l` is the next tube, different from
/// `X_{l-1}`, that the trace enters. Hitting times with index `l <= budget`
/// are counted. Membership is tested on the sampled points.
pub fn simulate_cone_cover(traces: &[Path3D], family: &ConeFamily, budget: usize) -> CoverOutcome {
    let mut visits = vec![vec![0u64; family.m]; family.n];
    let mut first = Vec::new();
    let mut transitions = Vec::with_capacity(traces.len());
    for tr in traces {
        let mut cur: Option<(usize, usize)> = None;
        let mut l = 0usize;
        for &p in &tr.points {
            let Some(t) = tube_of(family, p) else { continue };
            if cur == Some(t) {
                continue;
            }
            if cur.is_some() {
                l += 1;
            }
            if l > budget {
                l = budget;
                break;
            }
            cur = Some(t);
            if visits[t.0][t.1] == 0 {
                first.push(t);
            }
            visits[t.0][t.1] += 1;
        }
        transitions.push(l);
    }
    let covered = visits.iter().all(|r| r.iter().all(|&c| c > 0));
    CoverOutcome {
        covered,
        transitions,
        visits,
        first_visits: first,
    }
}

/// Sphere level whose radius `e^{t/p}` is just below `radius`.
pub fn start_level_for_radius(p: f64, radius: f64) -> i64 {
    (p * radius.ln()).floor() as i64
}

/// Cutoff level standing in for the last exit of `B(0, 2)`: radius `e^20`.
pub fn transition_cutoff_level(p: f64) -> i64 {
    (20.0 * p).ceil() as i64
}

/// Number of sphere-chain transitions from `start_level` until the level
/// first exceeds the cutoff.
pub fn sphere_transition_count(p: f64, start_level: i64, stream: &RngStream) -> Result<u64, CoverError> {
    if !(p >= 1.0) {
        return Err(CoverError::InvalidArgument(format!("p = {p} must be >= 1")));
    }
    let cutoff = transition_cutoff_level(p);
    let mut rng = stream.rng();
    let (mut t, mut count) = (start_level, 0u64);
    while t <= cutoff {
        t += sample_chain_step(p, &mut rng);
        count += 1;
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::simulate_sphere_chain;
    use crate::geometry::{build_cone_family, ConeConstants};
    use proptest::prelude::*;

    /// Exhaustive enumeration over outcome trees, truncated at `r`.
    fn brute_cdf(ps: &[f64], r: usize) -> f64 {
        fn rec(ps: &[f64], left: usize) -> f64 {
            match ps.split_first() {
                None => 1.0,
                Some((&p, rest)) => (1..=left)
                    .map(|z| p * (1.0 - p).powi(z as i32 - 1) * rec(rest, left - z))
                    .sum(),
            }
        }
        rec(ps, r)
    }

    #[test]
    fn cdf_examples() {
        let model = GeomSumModel::new(vec![0.5]).unwrap();
        assert_eq!(geometric_sum_cdf(&model, &[0, 0], 0).unwrap(), 1.0);
        assert!((geometric_sum_cdf(&model, &[1], 2).unwrap() - 0.75).abs() < 1e-15);
        assert!(geometric_sum_cdf(&model, &[2], 2).is_err());
    }

    #[test]
    fn cdf_matches_enumeration() {
        let mut rng = RngStream::new(1, 0).rng();
        use rand::Rng;
        for _ in 0..50 {
            let m = rng.random_range(1..4);
            let mut p: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            p.sort_by(f64::total_cmp);
            let model = GeomSumModel::new(p.clone()).unwrap();
            let counts: Vec<usize> = (0..2).map(|_| rng.random_range(0..=m)).collect();
            let r = rng.random_range(0..9);
            let ps: Vec<f64> = counts.iter().flat_map(|&k| p[..k].to_vec()).collect();
            let exact = geometric_sum_cdf(&model, &counts, r).unwrap();
            assert!((exact - brute_cdf(&ps, r)).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_inequality_exhaustive() {
        for f in [
            TransitionBound::Linear { c: 1.0 },
            TransitionBound::XLog { c5: 0.3 },
            TransitionBound::Constant { c: 1.0 },
        ] {
            for m in 1..=3 {
                let model = GeomSumModel::from_bound(&f, m).unwrap();
                for n in 1..=2 {
                    for code in 0..(m + 1).pow(n as u32) {
                        let counts: Vec<usize> = (0..n).map(|i| code / (m + 1).pow(i as u32) % (m + 1)).collect();
                        for i in 0..n {
                            for r in 0..=20 {
                                assert!(check_shift_inequality(&model, &counts, i, r).unwrap());
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn certain_success_reduces_to_monotonicity() {
        let model = GeomSumModel::new(vec![1.0, 1.0]).unwrap();
        for r in 0..6 {
            let a = geometric_sum_cdf(&model, &[1], r).unwrap();
            let b = geometric_sum_cdf(&model, &[2], r + 1).unwrap();
            assert!(a <= b);
            assert!(check_shift_inequality(&model, &[2], 0, r).unwrap());
        }
    }

    #[test]
    fn chernoff_constant_f() {
        let cfg = CoverConfig {
            n: 1,
            m: 10,
            k: 1,
            big_k: 0.2,
            f: TransitionBound::Constant { c: 1.0 },
        };
        let b = chernoff_cover_bound(&cfg).unwrap();
        // ∫ 1/e^v = e^{-v} > 3K gives v < ln(1/0.6).
        assert!((b.v - (1.0f64 / 0.6).ln()).abs() < 1e-9);
        assert!(b.q < 1.0 && b.integral > 0.6);
        let bad = CoverConfig { big_k: 0.5, ..cfg };
        assert!(matches!(chernoff_cover_bound(&bad), Err(CoverError::Inadmissible(_))));
    }

    #[test]
    fn chernoff_v_decreases_with_k() {
        let f = TransitionBound::Linear { c: 1.0 };
        let mk = |big_k| CoverConfig {
            n: 1,
            m: 10,
            k: 1,
            big_k,
            f,
        };
        let v1 = chernoff_cover_bound(&mk(1.0)).unwrap().v;
        let v2 = chernoff_cover_bound(&mk(2.0)).unwrap().v;
        assert!(v2 < v1);
    }

    #[test]
    fn chernoff_dominates_exact_tail() {
        let f = TransitionBound::Linear { c: 1.0 };
        for big_k in [0.5, 1.0, 1.5] {
            let cfg = CoverConfig {
                n: 10,
                m: 10,
                k: 1,
                big_k,
                f,
            };
            let b = chernoff_cover_bound(&cfg).unwrap();
            let tail = exact_cover_tail(&cfg).unwrap();
            if b.m1.is_some_and(|m1| cfg.m >= m1) {
                assert!(b.q.powi((cfg.m * cfg.n) as i32) >= tail, "K={big_k}");
            }
        }
    }

    fn uniform_chain(n: usize, m: usize) -> ItemChain {
        let k = n * m;
        ItemChain {
            n,
            m,
            initial: vec![1.0 / k as f64; k],
            transition: vec![vec![1.0 / k as f64; k]; k],
            f: TransitionBound::Linear { c: 1.0 },
        }
    }

    #[test]
    fn domination_uniform_walk() {
        let chain = uniform_chain(2, 2);
        for r in 0..=30 {
            let rep = dp_cover_domination(&chain, r).unwrap();
            assert!(rep.holds, "r={r}: {rep:?}");
        }
        // Fewer steps than items: the exact probability vanishes.
        let rep = dp_cover_domination(&chain, 3).unwrap();
        assert!(rep.holds && rep.max_excess <= 0.0);
    }

    #[test]
    fn domination_strict_for_sticky_chain() {
        // Mostly stays inside its group and never favours unvisited items.
        let t = vec![
            vec![0.4, 0.4, 0.1, 0.1],
            vec![0.4, 0.4, 0.1, 0.1],
            vec![0.1, 0.1, 0.4, 0.4],
            vec![0.1, 0.1, 0.4, 0.4],
        ];
        let chain = ItemChain {
            n: 2,
            m: 2,
            initial: vec![1.0, 0.0, 0.0, 0.0],
            transition: t,
            f: TransitionBound::Linear { c: 1.0 },
        };
        let rep = dp_cover_domination(&chain, 12).unwrap();
        assert!(rep.holds && rep.strict, "{rep:?}");
    }

    #[test]
    fn domination_rejects_bad_chains() {
        let mut chain = uniform_chain(2, 2);
        chain.transition[0] = vec![1.0, 0.0, 0.0, 0.0];
        assert!(dp_cover_domination(&chain, 5).is_err());
        assert!(matches!(
            dp_cover_domination(&uniform_chain(4, 4), 5),
            Err(CoverError::StateSpace(_))
        ));
    }

    #[test]
    fn admissibility_proxy() {
        assert!(TransitionBound::XLog { c5: 1e-3 }.admissible_proxy());
        assert!(!TransitionBound::Constant { c: 1.0 }.admissible_proxy());
        let i = TransitionBound::Linear { c: 1.0 }.inverse_integral_proxy();
        assert!((i - 30.0 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn cone_cover_trivial_cases() {
        // One group with a single tube along the x axis.
        let axis = Vec3::new(1.0, 0.0, 0.0);
        let fam = ConeFamily {
            n: 1,
            m: 1,
            u1: 1.6,
            consts: ConeConstants::default(),
            groups: vec![axis],
            tubes: vec![vec![axis]],
        };
        let through = Path3D::uniform(vec![axis * 0.5, axis, axis * 1.5], 1e-3).unwrap();
        let out = simulate_cone_cover(std::slice::from_ref(&through), &fam, 5);
        assert!(out.covered);
        assert_eq!(out.first_visits, vec![(0, 0)]);
        let away = Path3D::uniform(vec![-axis], 1e-3).unwrap();
        assert!(!simulate_cone_cover(&[away], &fam, 0).covered);
    }

    #[test]
    fn cone_cover_usually_fails_at_n20() {
        let fam = build_cone_family(20, 1.6, ConeConstants::default()).unwrap();
        let s = RngStream::new(20, 0);
        let budget = 4 * 20 * 20;
        let fails = (0..100)
            .filter(|&i| {
                let st = s.substream(i);
                let mut r = st.rng();
                let x0 = crate::rng::unit_vector(&mut r) * 0.05;
                let tr = crate::brownian::sample_until_exit(x0, 2.0, 1e-4, &st.labeled("trace"));
                let a = simulate_cone_cover(std::slice::from_ref(&tr), &fam, budget);
                let b = simulate_cone_cover(&[tr], &fam, budget);
                assert_eq!(a, b);
                !a.covered
            })
            .count();
        assert!(fails >= 95);
    }

    #[test]
    fn transition_counts() {
        let s = RngStream::new(5, 0);
        assert_eq!(sphere_transition_count(1.0, 100, &s).unwrap(), 0);
        let p = 1.0;
        let k1 = 10.0;
        let freq = |n: i32| {
            let t0 = start_level_for_radius(p, 2f64.powi(-n));
            let hits = (0..4000)
                .filter(|&i| {
                    let c = sphere_transition_count(p, t0, &s.substream(i as u64 * 16 + n as u64)).unwrap();
                    c as f64 >= k1 * n as f64 * p * p
                })
                .count() as u64;
            crate::stats::Estimate::proportion(hits, 4000)
        };
        let (f4, f8) = (freq(4), freq(8));
        assert!(
            f8.mean + 3.0 * (f4.stderr.powi(2) + f8.stderr.powi(2)).sqrt() < f4.mean,
            "{f4:?} {f8:?}"
        );
    }

    #[test]
    fn chain_displacement_is_binomial() {
        let s = RngStream::new(6, 0);
        let steps = 10usize;
        let q = crate::brownian::sphere_chain_downstep_prob(1.0).unwrap();
        let mut counts = vec![0u64; steps + 1];
        for i in 0..20_000 {
            let seq = simulate_sphere_chain(1.0, 0, |v| v.len() > steps, &s.substream(i)).unwrap();
            let ups = ((seq[steps] + steps as i64) / 2) as usize;
            counts[ups] += 1;
        }
        let mut probs = vec![0.0; steps + 1];
        let mut c = 1.0;
        for (u, pr) in probs.iter_mut().enumerate() {
            if u > 0 {
                c *= (steps - u + 1) as f64 / u as f64;
            }
            *pr = c * (1.0 - q).powi(u as i32) * q.powi((steps - u) as i32);
        }
        let chi = crate::stats::chi_square(&counts, &probs);
        assert!(chi < crate::stats::chi_square_quantile(steps, 3.09));
    }

    proptest! {
        #[test]
        fn cdf_monotone(p in prop::collection::vec(0.05f64..1.0, 1..4), k1 in 0usize..4, k2 in 0usize..4, r in 0usize..15) {
            let mut p = p;
            p.sort_by(f64::total_cmp);
            let m = p.len();
            let model = GeomSumModel::new(p).unwrap();
            let (k1, k2) = (k1.min(m), k2.min(m));
            let a = geometric_sum_cdf(&model, &[k1, k2], r).unwrap();
            prop_assert!(a <= geometric_sum_cdf(&model, &[k1, k2], r + 1).unwrap() + 1e-15);
            if k1 < m {
                prop_assert!(geometric_sum_cdf(&model, &[k1 + 1, k2], r).unwrap() <= a + 1e-15);
            }
        }
    }
}
