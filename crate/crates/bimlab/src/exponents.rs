//! Monte Carlo estimation of the non-intersection probabilities `Z_n`, of the
//! intersection exponents obtained from their moments, and of the
//! cone-forcing floor for avoiding frozen traces.
//!
//! Frozen traces are sampled on a coarse time grid and refined lazily by
//! Brownian bridges: a coarse step is split only where a walk comes close,
//! and every midpoint is drawn from its own stream, so the refined path is a
//! fixed function of the seed no matter which regions get refined.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brownian::{sample_until_exit, walk_on_spheres_with, Path3D, Timing, WosConfig, WosOutcome};
use crate::geometry::{
    chord_to_angle, cone_clearance, find_uncovered_cone_at, point_segment_distance, Cone, ConeQuery, PolylineIndex,
    Vec3,
};
use crate::rng::{gaussian3, unit_vector, RngStream};
use crate::stats::Estimate;

#[derive(Debug, Error)]
pub enum ExponentError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn invalid(m: impl Into<String>) -> ExponentError {
    ExponentError::InvalidArgument(m.into())
}

/// Deviation bound `4 sqrt(dt)` of a Brownian bridge of duration `dt` from
/// its chord.
pub fn bridge_guard(dt: f64) -> f64 {
    4.0 * dt.max(0.0).sqrt()
}

const MAX_DEPTH: u32 = 50;
// Accept the coarse bound once it exceeds this many coarse guards.
const COARSE_RATIO: f64 = 2.0;
// Accept a refined bound once the node guard is at most this share of it.
const REFINE_RATIO: f64 = 0.5;

/// Frozen Brownian traces from the origin with lazy bridge refinement.
#[derive(Debug)]
pub struct RefinableTrace {
    index: PolylineIndex,
    ranges: Vec<(usize, usize)>,
    norms: Vec<f64>,
    dt: f64,
    streams: Vec<RngStream>,
    mids: FxHashMap<(u32, u64), Vec3>,
    scratch: Scratch,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    seg: u32,
    depth: u32,
    id: u64,
    a: Vec3,
    b: Vec3,
}

/// Heap entry pointing into the node arena.
#[derive(Debug, Clone, Copy)]
struct Key {
    lb: f64,
    node: u32,
}

impl PartialEq for Key {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Key {
    // Reversed so that `BinaryHeap` pops the smallest bound first; ties go to
    // the earlier node so the order is deterministic.
    fn cmp(&self, o: &Self) -> Ordering {
        o.lb.total_cmp(&self.lb).then(o.node.cmp(&self.node))
    }
}

/// Buffers reused across distance queries.
#[derive(Debug, Default)]
struct Scratch {
    nodes: Vec<Node>,
    keys: Vec<Key>,
    dc: Vec<f64>,
    open: Vec<usize>,
    maxend: Vec<usize>,
}

/// One absorbing configuration of a ladder walk.
#[derive(Debug, Clone)]
struct LevelState {
    radius: f64,
    tube: f64,
    eps: f64,
    tol: f64,
    /// Per path, the exclusive end of the segment prefix.
    ends: Vec<usize>,
}

impl RefinableTrace {
    /// `k` paths from the origin until they leave `B(0, radius)`, on a grid
    /// of step `dt`.
    pub fn sample(k: usize, radius: f64, dt: f64, stream: &RngStream) -> Self {
        let paths: Vec<Path3D> = (0..k)
            .map(|p| sample_until_exit(Vec3::ZERO, radius, dt, &stream.labeled("trace").substream(p as u64)))
            .collect();
        let streams = (0..k).map(|p| stream.labeled("bridge").substream(p as u64)).collect();
        Self::from_paths(&paths, dt, streams)
    }

    /// Wrap uniformly sampled paths; `streams[p]` drives the bridges of path
    /// `p`.
    pub fn from_paths(paths: &[Path3D], dt: f64, streams: Vec<RngStream>) -> Self {
        let index = PolylineIndex::build(paths, None);
        let ranges = (0..index.num_paths()).map(|p| index.path_range(p)).collect();
        let norms = index.segments().iter().map(|s| s.b.norm()).collect();
        Self {
            index,
            ranges,
            norms,
            dt,
            streams,
            mids: FxHashMap::default(),
            scratch: Scratch::default(),
        }
    }

    pub fn skeleton(&self) -> &PolylineIndex {
        &self.index
    }

    pub fn num_paths(&self) -> usize {
        self.ranges.len()
    }

    /// Number of bridge midpoints drawn so far.
    pub fn refined_points(&self) -> usize {
        self.mids.len()
    }

    /// Exclusive end of the segments of path `p` up to the first coarse step
    /// that reaches `|x| >= r`.
    pub fn prefix_end(&self, p: usize, r: f64) -> usize {
        let (lo, hi) = self.ranges[p];
        (lo..hi).find(|&s| self.norms[s] >= r).map_or(hi, |s| s + 1)
    }

    fn node_guard(&self, depth: u32) -> f64 {
        bridge_guard(self.dt / (1u64 << depth.min(62)) as f64)
    }

    fn midpoint(&mut self, seg: u32, id: u64, depth: u32, a: Vec3, b: Vec3) -> Vec3 {
        let dt = self.dt / (1u64 << depth.min(62)) as f64;
        let path = self.index.segments()[seg as usize].path as usize;
        let stream = self.streams[path];
        *self.mids.entry((seg, id)).or_insert_with(|| {
            let mut rng = stream.substream(seg as u64).substream(id).rng();
            (a + b) * 0.5 + gaussian3(&mut rng) * (dt / 4.0).sqrt()
        })
    }

    /// Endpoints of the bridge tree of segment `seg` down to `depth`, in time
    /// order.
    pub fn refine_segment(&mut self, seg: usize, depth: u32) -> Vec<Vec3> {
        let s = self.index.segments()[seg];
        let mut out = vec![s.a];
        self.expand(seg as u32, 1, 0, depth, s.a, s.b, &mut out);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn expand(&mut self, seg: u32, id: u64, depth: u32, max: u32, a: Vec3, b: Vec3, out: &mut Vec<Vec3>) {
        if depth == max {
            out.push(b);
            return;
        }
        let m = self.midpoint(seg, id, depth, a, b);
        self.expand(seg, 2 * id, depth + 1, max, a, m, out);
        self.expand(seg, 2 * id + 1, depth + 1, max, m, b, out);
    }

    /// Lower bound on the distance from `x` to the refined trace restricted to
    /// segments `[lo, hi)` of every path given by `ends`, accurate to within
    /// `2 tol + 0.5 (bound)`. Used by tests and diagnostics.
    pub fn distance_lower_bound(&mut self, x: Vec3, tol: f64) -> f64 {
        let ends: Vec<usize> = self.ranges.iter().map(|r| r.1).collect();
        let lv = LevelState {
            radius: f64::INFINITY,
            tube: 0.0,
            eps: tol,
            tol,
            ends,
        };
        let mut out = [0.0];
        self.level_margins(x, std::slice::from_ref(&lv), &[true], &[f64::INFINITY], &mut out);
        out[0]
    }

    /// For every alive level `j`, a lower bound on
    /// `min(cap_j, dist(x, prefix_j) - tube_j)`; once the margin is within a
    /// few coarse guards of zero the bound is refined until its error is at
    /// most `2 tol_j`.
    fn level_margins(&mut self, x: Vec3, levels: &[LevelState], alive: &[bool], caps: &[f64], out: &mut [f64]) {
        let mut sc = std::mem::take(&mut self.scratch);
        self.level_margins_in(x, levels, alive, caps, out, &mut sc);
        self.scratch = sc;
    }

    fn level_margins_in(
        &mut self,
        x: Vec3,
        levels: &[LevelState],
        alive: &[bool],
        caps: &[f64],
        out: &mut [f64],
        sc: &mut Scratch,
    ) {
        let g = bridge_guard(self.dt);
        let nl = levels.len();
        sc.open.clear();
        sc.dc.clear();
        sc.dc.resize(nl, f64::INFINITY);
        for j in 0..nl {
            if !alive[j] {
                continue;
            }
            let lv = &levels[j];
            let cap = caps[j] + lv.tube + 2.0 * g;
            sc.dc[j] = if j > 0 && alive[j - 1] && levels[j - 1].ends == lv.ends && caps[j - 1] >= caps[j] {
                sc.dc[j - 1]
            } else {
                let mut d = cap;
                for (p, &(lo, _)) in self.ranges.iter().enumerate() {
                    d = self.index.distance_in_range(x, lo, lv.ends[p], d);
                }
                d
            };
            let lbq = sc.dc[j] - g - lv.tube;
            if lbq >= caps[j] {
                out[j] = caps[j];
            } else if lbq >= COARSE_RATIO * g {
                out[j] = lbq;
            } else {
                sc.open.push(j);
            }
        }
        if sc.open.is_empty() {
            return;
        }
        let reach = sc.open.iter().map(|&j| sc.dc[j]).fold(0.0, f64::max) + 2.0 * g;
        sc.maxend.clear();
        for p in 0..self.ranges.len() {
            sc.maxend
                .push(sc.open.iter().map(|&j| levels[j].ends[p]).max().unwrap_or(0));
        }
        sc.nodes.clear();
        sc.keys.clear();
        for s in self.index.segments_within(x, reach) {
            let seg = self.index.segments()[s];
            if s >= sc.maxend[seg.path as usize] {
                continue;
            }
            sc.keys.push(Key {
                lb: point_segment_distance(x, seg.a, seg.b) - g,
                node: sc.nodes.len() as u32,
            });
            sc.nodes.push(Node {
                seg: s as u32,
                depth: 0,
                id: 1,
                a: seg.a,
                b: seg.b,
            });
        }
        let mut heap = BinaryHeap::from(std::mem::take(&mut sc.keys));
        while let Some(key) = heap.pop() {
            let nd = sc.nodes[key.node as usize];
            let path = self.index.segments()[nd.seg as usize].path as usize;
            let gn = self.node_guard(nd.depth);
            let mut need = false;
            sc.open.retain(|&j| {
                let lv = &levels[j];
                if (nd.seg as usize) >= lv.ends[path] {
                    return true;
                }
                let margin = key.lb - lv.tube;
                if margin >= caps[j] {
                    out[j] = caps[j];
                    return false;
                }
                if gn <= lv.tol || gn <= REFINE_RATIO * margin || nd.depth >= MAX_DEPTH {
                    out[j] = margin;
                    return false;
                }
                need = true;
                true
            });
            if sc.open.is_empty() {
                break;
            }
            if !need {
                continue;
            }
            let m = self.midpoint(nd.seg, nd.id, nd.depth, nd.a, nd.b);
            let gc = self.node_guard(nd.depth + 1);
            for (id, a, b) in [(2 * nd.id, nd.a, m), (2 * nd.id + 1, m, nd.b)] {
                heap.push(Key {
                    lb: point_segment_distance(x, a, b) - gc,
                    node: sc.nodes.len() as u32,
                });
                sc.nodes.push(Node {
                    seg: nd.seg,
                    depth: nd.depth + 1,
                    id,
                    a,
                    b,
                });
            }
        }
        for &j in &sc.open {
            out[j] = caps[j].min(sc.dc[j] - g - levels[j].tube);
        }
        sc.open.clear();
        let mut keys = heap.into_vec();
        keys.clear();
        sc.keys = keys;
    }

    fn level_states(&self, levels: &[Level], eps_ratio: f64) -> Vec<LevelState> {
        levels
            .iter()
            .map(|l| {
                let radius = l.n.exp();
                let eps = l.tube * eps_ratio;
                LevelState {
                    radius,
                    tube: l.tube,
                    eps,
                    tol: eps / 4.0,
                    ends: (0..self.ranges.len()).map(|p| self.prefix_end(p, radius)).collect(),
                }
            })
            .collect()
    }
}

/// One `(n, tube)` pair of a ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub n: f64,
    pub tube: f64,
}

/// Walk-on-spheres from `start` shared by all levels: the step never exceeds
/// the free distance of any level still running, a level succeeds when the
/// walk is within `eps` of its outer sphere and fails when it is within `eps`
/// of its sausage. Returns per level success flags and whether the step cap
/// was hit.
fn ladder_walk<R: Rng + ?Sized>(
    trace: &mut RefinableTrace,
    levels: &[LevelState],
    start: Vec3,
    max_steps: u64,
    rng: &mut R,
) -> (Vec<bool>, bool) {
    let nl = levels.len();
    let mut alive = vec![true; nl];
    let mut ok = vec![false; nl];
    let mut caps = vec![0.0; nl];
    let mut margins = vec![0.0; nl];
    let mut x = start;
    for _ in 0..max_steps {
        let r0 = x.norm();
        let mut any = false;
        for j in 0..nl {
            if alive[j] {
                caps[j] = levels[j].radius - r0;
                if caps[j] <= levels[j].eps {
                    alive[j] = false;
                    ok[j] = true;
                } else {
                    any = true;
                }
            }
        }
        if !any {
            return (ok, false);
        }
        trace.level_margins(x, levels, &alive, &caps, &mut margins);
        let mut step = f64::INFINITY;
        for j in 0..nl {
            if alive[j] {
                if margins[j] <= levels[j].eps {
                    alive[j] = false;
                } else {
                    step = step.min(margins[j]);
                }
            }
        }
        if step.is_infinite() {
            return (ok, false);
        }
        x += unit_vector(rng) * step;
    }
    (ok, alive.iter().any(|a| *a))
}

/// Parameters of a `Z_n` ladder run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZParams {
    pub k: usize,
    pub outer: u64,
    pub inner: u64,
    /// Coarse time step of the frozen traces.
    pub dt: f64,
    /// Capture thickness as a fraction of the tube radius.
    pub eps_ratio: f64,
    pub max_steps: u64,
}

impl Default for ZParams {
    fn default() -> Self {
        Self {
            k: 1,
            outer: 100,
            inner: 100,
            dt: 1e-3,
            eps_ratio: 0.05,
            max_steps: 1_000_000,
        }
    }
}

impl ZParams {
    pub fn validate(&self) -> Result<(), ExponentError> {
        if self.k == 0 || self.outer == 0 || self.inner == 0 || self.max_steps == 0 {
            return Err(invalid("k, outer, inner and max_steps must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.eps_ratio > 0.0 && self.eps_ratio < 1.0) {
            return Err(invalid(format!("eps_ratio must lie in (0, 1), got {}", self.eps_ratio)));
        }
        Ok(())
    }
}

/// Estimate of the conditional avoidance probability `Z_n` for one frozen
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZSample {
    pub n: f64,
    pub k: usize,
    pub tube: f64,
    pub replica: u64,
    /// `hits / inner`.
    pub value: f64,
    pub inner: u64,
    pub hits: u64,
    /// Hits among the first `inner / 2` runs.
    pub hits_half: u64,
    pub stalled: u64,
    pub stream: RngStream,
}

/// Starting point of the free walk.
pub fn free_walk_start() -> Vec3 {
    Vec3::new(1.0, 0.0, 0.0)
}

/// `Z_n` samples for every level of a ladder. Each replica draws `k` traces
/// from the origin to the largest level radius; all levels and both halves
/// of every ladder use the same traces and the same free walks, so levels
/// are coupled replica by replica. Output is ordered by replica, then by the
/// order of `levels`.
pub fn sample_z_ladder(levels: &[Level], params: &ZParams, stream: &RngStream) -> Result<Vec<ZSample>, ExponentError> {
    params.validate()?;
    if levels.is_empty() {
        return Err(invalid("at least one level is required"));
    }
    for l in levels {
        if !(l.n > 0.0 && l.n.is_finite() && l.tube > 0.0 && l.tube.is_finite()) {
            return Err(invalid(format!("level {l:?} needs n > 0 and tube > 0")));
        }
    }
    // Walk order: increasing radius, so levels sharing a prefix are adjacent.
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| {
        levels[a]
            .n
            .total_cmp(&levels[b].n)
            .then(levels[b].tube.total_cmp(&levels[a].tube))
    });
    let sorted: Vec<Level> = order.iter().map(|&i| levels[i]).collect();
    let rmax = sorted.iter().map(|l| l.n.exp()).fold(0.0, f64::max);
    let start = free_walk_start();
    let rows: Vec<Vec<ZSample>> = (0..params.outer)
        .into_par_iter()
        .map(|r| {
            let rs = stream.substream(r);
            let mut trace = RefinableTrace::sample(params.k, rmax, params.dt, &rs);
            let states = trace.level_states(&sorted, params.eps_ratio);
            let ws = rs.labeled("free");
            let mut hits = vec![0u64; sorted.len()];
            let mut half = vec![0u64; sorted.len()];
            let mut stalled = vec![0u64; sorted.len()];
            for i in 0..params.inner {
                let mut rng = ws.substream(i).rng();
                let (ok, st) = ladder_walk(&mut trace, &states, start, params.max_steps, &mut rng);
                for j in 0..sorted.len() {
                    if ok[j] {
                        hits[j] += 1;
                        if i < params.inner / 2 {
                            half[j] += 1;
                        }
                    } else if st {
                        stalled[j] += 1;
                    }
                }
            }
            let mut out = vec![None; levels.len()];
            for (j, &orig) in order.iter().enumerate() {
                out[orig] = Some(ZSample {
                    n: sorted[j].n,
                    k: params.k,
                    tube: sorted[j].tube,
                    replica: r,
                    value: hits[j] as f64 / params.inner as f64,
                    inner: params.inner,
                    hits: hits[j],
                    hits_half: half[j],
                    stalled: stalled[j],
                    stream: rs,
                });
            }
            out.into_iter().map(|s| s.expect("every level filled")).collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// `Z_n` samples for a single `(n, tube)`.
pub fn sample_zn(
    k: usize,
    n: f64,
    outer: u64,
    inner: u64,
    tube: f64,
    dt: f64,
    stream: &RngStream,
) -> Result<Vec<ZSample>, ExponentError> {
    let params = ZParams {
        k,
        outer,
        inner,
        dt,
        ..Default::default()
    };
    sample_z_ladder(&[Level { n, tube }], &params, stream)
}

/// One point `(n, a_n)` of an exponent regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiPoint {
    pub n: f64,
    /// `-log` of the mean of `Z^λ`.
    pub a: f64,
    pub stderr: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityViolation {
    pub n: f64,
    pub m: f64,
    /// `a_{n+m} - a_n - a_m` minus twice the combined standard error.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    pub lambda: f64,
    pub k: usize,
    pub points: Vec<XiPoint>,
    /// Values of `n` dropped because every `Z` was zero.
    pub dropped: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub violations: Vec<SubadditivityViolation>,
}

impl XiEstimate {
    /// Weighted least squares of `a_n` on `n` with weights `1 / stderr^2`.
    /// When some standard error vanishes the fit is unweighted and the slope
    /// error comes from the residuals.
    pub fn fit(lambda: f64, k: usize, mut points: Vec<XiPoint>, dropped: Vec<f64>) -> Result<Self, ExponentError> {
        points.sort_by(|a, b| a.n.total_cmp(&b.n));
        if points.len() < 2 {
            return Err(invalid(format!("{} usable values of n, need at least 2", points.len())));
        }
        let weighted = points.iter().all(|p| p.stderr > 0.0 && p.stderr.is_finite());
        let w: Vec<f64> = points
            .iter()
            .map(|p| if weighted { 1.0 / (p.stderr * p.stderr) } else { 1.0 })
            .collect();
        let sw: f64 = w.iter().sum();
        let nbar = points.iter().zip(&w).map(|(p, w)| w * p.n).sum::<f64>() / sw;
        let abar = points.iter().zip(&w).map(|(p, w)| w * p.a).sum::<f64>() / sw;
        let sxx: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.n - nbar).powi(2)).sum();
        let sxy: f64 = points
            .iter()
            .zip(&w)
            .map(|(p, w)| w * (p.n - nbar) * (p.a - abar))
            .sum();
        if !(sxx > 0.0) {
            return Err(invalid("all values of n coincide"));
        }
        let slope = sxy / sxx;
        let intercept = abar - slope * nbar;
        let stderr = if weighted {
            (1.0 / sxx).sqrt()
        } else if points.len() > 2 {
            let rss: f64 = points.iter().map(|p| (p.a - intercept - slope * p.n).powi(2)).sum();
            (rss / (points.len() - 2) as f64 / sxx).sqrt()
        } else {
            0.0
        };
        let mut violations = Vec::new();
        for (i, p) in points.iter().enumerate() {
            for q in &points[i..] {
                if let Some(s) = points.iter().find(|s| (s.n - (p.n + q.n)).abs() < 1e-9) {
                    let se = (s.stderr.powi(2) + p.stderr.powi(2) + q.stderr.powi(2)).sqrt();
                    let excess = s.a - p.a - q.a - 2.0 * se;
                    if excess > 0.0 {
                        violations.push(SubadditivityViolation { n: p.n, m: q.n, excess });
                    }
                }
            }
        }
        Ok(Self {
            lambda,
            k,
            points,
            dropped,
            slope,
            intercept,
            stderr,
            violations,
        })
    }
}

fn key(s: &ZSample) -> (u64, u64, u64, RngStream) {
    (s.n.to_bits(), s.tube.to_bits(), s.replica, s.stream)
}

/// Exponent estimate from `Z_n` samples grouped by `n`. Replicas appearing
/// more than once (same `n`, tube, replica index and stream) are counted
/// once. A replica with `Z = 0` contributes 0 to the mean of `Z^λ` for every
/// `λ > 0`, so as `λ -> 0` the mean tends to `P(Z > 0)`.
pub fn estimate_xi(samples: &[ZSample], lambda: f64) -> Result<XiEstimate, ExponentError> {
    estimate_xi_with(samples, lambda, |s| s.value)
}

/// As [`estimate_xi`], using only the first half of the inner runs of every
/// replica.
pub fn estimate_xi_half_inner(samples: &[ZSample], lambda: f64) -> Result<XiEstimate, ExponentError> {
    estimate_xi_with(samples, lambda, |s| s.hits_half as f64 / (s.inner / 2).max(1) as f64)
}

fn estimate_xi_with(
    samples: &[ZSample],
    lambda: f64,
    value: impl Fn(&ZSample) -> f64,
) -> Result<XiEstimate, ExponentError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if samples.is_empty() {
        return Err(invalid("no samples"));
    }
    let k = samples[0].k;
    if samples.iter().any(|s| s.k != k) {
        return Err(invalid("samples mix different numbers of traces"));
    }
    let mut seen = FxHashSet::default();
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for s in samples {
        if !seen.insert(key(s)) {
            continue;
        }
        let z = value(s).clamp(0.0, 1.0);
        let v = if z > 0.0 { z.powf(lambda) } else { 0.0 };
        match groups.iter_mut().find(|g| g.0 == s.n) {
            Some(g) => g.1.push(v),
            None => groups.push((s.n, vec![v])),
        }
    }
    if groups.len() < 3 {
        return Err(invalid(format!(
            "{} distinct values of n, need at least 3",
            groups.len()
        )));
    }
    let mut points = Vec::new();
    let mut dropped = Vec::new();
    for (n, vals) in groups {
        let e = Estimate::from_values(&vals);
        if e.mean > 0.0 {
            points.push(XiPoint {
                n,
                a: -e.mean.ln(),
                stderr: e.stderr / e.mean,
                samples: e.samples,
            });
        } else {
            dropped.push(n);
        }
    }
    XiEstimate::fit(lambda, k, points, dropped)
}

/// Two-point tube extrapolation `2 a(t/2) - a(t)` at every `n` present in
/// both estimates; errors are combined as if independent.
pub fn extrapolate_tube(coarse: &XiEstimate, fine: &XiEstimate) -> Result<XiEstimate, ExponentError> {
    let points: Vec<XiPoint> = fine
        .points
        .iter()
        .filter_map(|f| {
            coarse.points.iter().find(|c| c.n == f.n).map(|c| XiPoint {
                n: f.n,
                a: 2.0 * f.a - c.a,
                stderr: (4.0 * f.stderr * f.stderr + c.stderr * c.stderr).sqrt(),
                samples: f.samples.min(c.samples),
            })
        })
        .collect();
    let mut dropped = coarse.dropped.clone();
    dropped.extend(fine.dropped.iter().filter(|n| !dropped.contains(n)).collect::<Vec<_>>());
    XiEstimate::fit(fine.lambda, fine.k, points, dropped)
}

/// Full exponent experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XiConfig {
    pub k: usize,
    pub lambda: f64,
    pub ns: Vec<f64>,
    pub outer: u64,
    pub inner: u64,
    /// Tube radius at scale `n` is `tube_scale * e^n`.
    pub tube_scale: f64,
    pub dt: f64,
    pub eps_ratio: f64,
    pub max_steps: u64,
    /// Also run at half the tube and extrapolate.
    pub extrapolate: bool,
}

impl Default for XiConfig {
    fn default() -> Self {
        Self {
            k: 1,
            lambda: 2.0,
            ns: vec![1.0, 1.5, 2.0, 2.5],
            outer: 2000,
            inner: 200,
            tube_scale: 2f64.powi(-8),
            dt: 1e-3,
            eps_ratio: 0.05,
            max_steps: 1_000_000,
            extrapolate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiReport {
    pub coarse: XiEstimate,
    pub fine: Option<XiEstimate>,
    pub extrapolated: Option<XiEstimate>,
    /// Headline estimate recomputed from half of the inner runs.
    pub half_inner: XiEstimate,
    pub slope: f64,
    pub stderr: f64,
    pub stalled: u64,
}

pub fn run_xi(cfg: &XiConfig, stream: &RngStream) -> Result<XiReport, ExponentError> {
    if !(cfg.tube_scale > 0.0) {
        return Err(invalid("tube_scale must be positive"));
    }
    let mut levels = Vec::new();
    for &n in &cfg.ns {
        let t = cfg.tube_scale * n.exp();
        levels.push(Level { n, tube: t });
        if cfg.extrapolate {
            levels.push(Level { n, tube: t / 2.0 });
        }
    }
    let params = ZParams {
        k: cfg.k,
        outer: cfg.outer,
        inner: cfg.inner,
        dt: cfg.dt,
        eps_ratio: cfg.eps_ratio,
        max_steps: cfg.max_steps,
    };
    let samples = sample_z_ladder(&levels, &params, stream)?;
    let stalled = samples.iter().map(|s| s.stalled).sum();
    let is_coarse = |s: &&ZSample| (s.tube - cfg.tube_scale * s.n.exp()).abs() <= 1e-12 * s.tube;
    let coarse_s: Vec<ZSample> = samples.iter().filter(is_coarse).copied().collect();
    let fine_s: Vec<ZSample> = samples.iter().filter(|s| !is_coarse(s)).copied().collect();
    let coarse = estimate_xi(&coarse_s, cfg.lambda)?;
    let (fine, extrapolated, half_inner) = if cfg.extrapolate {
        let fine = estimate_xi(&fine_s, cfg.lambda)?;
        let ext = extrapolate_tube(&coarse, &fine)?;
        let half = extrapolate_tube(
            &estimate_xi_half_inner(&coarse_s, cfg.lambda)?,
            &estimate_xi_half_inner(&fine_s, cfg.lambda)?,
        )?;
        (Some(fine), Some(ext), half)
    } else {
        (None, None, estimate_xi_half_inner(&coarse_s, cfg.lambda)?)
    };
    let head = extrapolated.as_ref().unwrap_or(&coarse);
    Ok(XiReport {
        slope: head.slope,
        stderr: head.stderr,
        coarse: coarse.clone(),
        fine,
        extrapolated: extrapolated.clone(),
        half_inner,
        stalled,
    })
}

/// Probability that a walk from `start` leaves `B(0, ball)` before leaving
/// the open cone, by walk on spheres in the intersection. Walks within `eps`
/// of the cone surface count as failures, so the estimate is biased low.
/// A cone of chordal radius 2 is the whole space.
pub fn cone_stay_probability(
    cone: &Cone,
    start: Vec3,
    ball: f64,
    eps: f64,
    samples: u64,
    stream: &RngStream,
) -> Estimate {
    let theta = cone.half_angle();
    let whole = cone.radius >= 2.0;
    let lateral = |y: Vec3| -> f64 {
        if whole {
            return f64::INFINITY;
        }
        let q = y - cone.vertex;
        let s = q.norm();
        if s == 0.0 {
            return 0.0;
        }
        let phi = (q.dot(cone.direction) / s).clamp(-1.0, 1.0).acos();
        if phi >= theta {
            return 0.0;
        }
        if theta - phi >= std::f64::consts::FRAC_PI_2 {
            s
        } else {
            s * (theta - phi).sin()
        }
    };
    let hits = (0..samples)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = stream.substream(i).rng();
            let mut y = start;
            for _ in 0..1_000_000 {
                let ro = ball - y.norm();
                if ro <= eps {
                    return true;
                }
                let dl = lateral(y);
                if dl <= eps {
                    return false;
                }
                y += unit_vector(&mut rng) * ro.min(dl);
            }
            false
        })
        .count() as u64;
    Estimate::proportion(hits, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AvoidFloorParams {
    pub k: usize,
    pub n_dyadic: u32,
    pub u1: f64,
    /// Traces run from the origin until they leave this radius.
    pub trace_radius: f64,
    pub dt: f64,
    pub direct_samples: u64,
    pub cone_samples: u64,
}

impl Default for AvoidFloorParams {
    fn default() -> Self {
        Self {
            k: 1,
            n_dyadic: 3,
            u1: 1.3,
            trace_radius: 2.0,
            dt: 1e-4,
            direct_samples: 400,
            cone_samples: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidFloorReport {
    pub start: Vec3,
    pub distance: f64,
    pub capture_eps: f64,
    pub direct: Estimate,
    /// Region used for the lower bound, if one was certified.
    pub cone: Option<Cone>,
    pub cone_forced: Estimate,
    /// `direct >= cone_forced - 3 sigma`.
    pub holds: bool,
    pub error: Option<String>,
}

/// Direct and cone-forced estimates of the probability that a walk from
/// `start` leaves the unit ball without coming within the capture distance
/// of the traces. The cone is the widest certified one from a ladder of
/// chordal radii down to `u1^-n`; its vertex sits behind `start` so that
/// `start` is interior.
pub fn avoid_floor_from(
    traces: &PolylineIndex,
    start: Vec3,
    p: &AvoidFloorParams,
    stream: &RngStream,
) -> AvoidFloorReport {
    let d = traces.distance(start);
    let eps = (d / 20.0).min(1e-2);
    let cfg = WosConfig {
        capture_eps: eps,
        outer_radius: 1.0,
        max_steps: 1_000_000,
    };
    let ds = stream.labeled("direct");
    let ok = (0..p.direct_samples)
        .into_par_iter()
        .filter(|&i| {
            walk_on_spheres_with(start, traces, &cfg, &mut ds.substream(i).rng()).1 == WosOutcome::OuterBoundary
        })
        .count() as u64;
    let direct = Estimate::proportion(ok, p.direct_samples);
    let mut report = AvoidFloorReport {
        start,
        distance: d,
        capture_eps: eps,
        direct,
        cone: None,
        cone_forced: Estimate::proportion(0, p.cone_samples.max(1)),
        holds: true,
        error: None,
    };
    let floor = p.u1.powi(-(p.n_dyadic as i32));
    let mut radii = vec![2.0, std::f64::consts::SQRT_2, 1.0, 0.7, 0.5, 0.35, 0.25];
    radii.retain(|&r| r > floor);
    radii.push(floor);
    let cs = stream.labeled("cone");
    for r in radii {
        let cone = if r >= 2.0 {
            // The whole ball is clear when every segment keeps its distance.
            let clear = traces.is_empty() || traces.distance(Vec3::ZERO) - 1.0 - traces.max_guard() > eps;
            if !clear {
                continue;
            }
            Cone {
                vertex: start,
                direction: Vec3::new(0.0, 0.0, 1.0),
                radius: 2.0,
                length: None,
            }
        } else {
            let q = ConeQuery {
                vertex: start,
                radius: r,
                reach: 2.0,
                preferred: None,
                container: None,
                lattice_covering: None,
            };
            let Some(v) = find_uncovered_cone_at(traces, &q) else {
                continue;
            };
            let back = 0.25 * d;
            let c = Cone {
                vertex: start - v * back,
                direction: v,
                radius: r,
                length: Some(2.0 + back),
            };
            if cone_clearance(traces, &c) <= eps {
                continue;
            }
            c
        };
        let margin = if cone.radius >= 2.0 {
            1.0
        } else {
            0.25 * d * chord_to_angle(cone.radius).sin()
        };
        let ce = (margin / 20.0).min(eps);
        report.cone_forced = cone_stay_probability(&cone, start, 1.0, ce, p.cone_samples, &cs);
        report.cone = Some(cone);
        break;
    }
    if report.cone.is_none() {
        report.error = Some("no certified cone".into());
    }
    let se = (direct.stderr.powi(2) + report.cone_forced.stderr.powi(2)).sqrt();
    report.holds = direct.mean >= report.cone_forced.mean - 3.0 * se;
    report
}

/// Frozen traces to `trace_radius` and a start at distance about `2^-n`
/// from the first one, near radius 1/2; then [`avoid_floor_from`].
pub fn conditional_avoid_floor(p: &AvoidFloorParams, stream: &RngStream) -> Result<AvoidFloorReport, ExponentError> {
    if p.k == 0 || p.n_dyadic == 0 || !(p.u1 > 1.0) || !(p.trace_radius > 1.0) || !(p.dt > 0.0) {
        return Err(invalid(format!("invalid avoid-floor parameters {p:?}")));
    }
    if p.direct_samples == 0 || p.cone_samples == 0 {
        return Err(invalid("sample counts must be positive"));
    }
    let paths: Vec<Path3D> = (0..p.k)
        .map(|i| {
            sample_until_exit(
                Vec3::ZERO,
                p.trace_radius,
                p.dt,
                &stream.labeled("trace").substream(i as u64),
            )
        })
        .collect();
    let idx = PolylineIndex::build(&paths, None);
    let z = paths[0]
        .points
        .iter()
        .copied()
        .find(|x| x.norm() >= 0.5)
        .unwrap_or(paths[0].end());
    let target = 0.5f64.powi(p.n_dyadic as i32);
    let mut rng = stream.labeled("start").rng();
    let mut best: Option<(f64, Vec3)> = None;
    for _ in 0..64 {
        let x = z + unit_vector(&mut rng) * target;
        if x.norm() >= 0.9 {
            continue;
        }
        let d = idx.distance(x);
        let score = (d / target).ln().abs();
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, x));
        }
    }
    let (_, x) = best.ok_or_else(|| invalid("no start point inside the ball"))?;
    Ok(avoid_floor_from(&idx, x, p, stream))
}

/// Uniform path from explicit points, for tests and callers with their own
/// traces.
pub fn uniform_dt(path: &Path3D) -> Option<f64> {
    match path.timing {
        Timing::Uniform { dt } => Some(dt),
        Timing::Explicit { .. } => None,
    }
}
