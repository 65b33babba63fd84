//! Layer Poisson kernels of slit domains, good-layer statistics, layered
//! coupling of two kernel chains, conditional separation experiments and the
//! separation error product.

use std::ops::RangeInclusive;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brownian::{walk_on_spheres_with, DistanceField, Path3D, Timing, WosConfig, WosOutcome};
use crate::geometry::{DirectionLattice, PolylineIndex, Vec3};
use crate::kernelfun::{extremal_tv, switching_constant, DiscreteKernel, ExtendedPositive, KernelError};
use crate::rng::{unit_vector, RngStream};
use crate::stats::Estimate;

#[derive(Debug, Error)]
pub enum SlitError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("kernels {0} and {1} are not composable")]
    NotComposable(usize, usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn invalid(m: impl Into<String>) -> SlitError {
    SlitError::InvalidArgument(m.into())
}

/// Spherical shell `inner < |x| < outer` minus a trace, with source points on
/// the sphere of radius `mid`. An empty trace gives the plain annulus.
#[derive(Debug, Clone, Copy)]
pub struct LayerSpec<'a> {
    pub index: i32,
    pub inner: f64,
    pub mid: f64,
    pub outer: f64,
    pub trace: &'a PolylineIndex,
}

impl<'a> LayerSpec<'a> {
    /// Layer `i` with radii `e^i < e^{i+1/2} < e^{i+1}`.
    pub fn new(index: i32, trace: &'a PolylineIndex) -> Self {
        let i = index as f64;
        Self {
            index,
            inner: i.exp(),
            mid: (i + 0.5).exp(),
            outer: (i + 1.0).exp(),
            trace,
        }
    }

    pub fn with_radii(
        index: i32,
        inner: f64,
        mid: f64,
        outer: f64,
        trace: &'a PolylineIndex,
    ) -> Result<Self, SlitError> {
        let l = Self {
            index,
            inner,
            mid,
            outer,
            trace,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), SlitError> {
        if !(self.inner > 0.0 && self.inner < self.mid && self.mid < self.outer && self.outer.is_finite()) {
            return Err(invalid(format!(
                "layer radii must satisfy 0 < {} < {} < {}",
                self.inner, self.mid, self.outer
            )));
        }
        Ok(())
    }
}

/// Absorbing set of a layer: the trace and the inner sphere.
struct LayerField<'a> {
    trace: &'a PolylineIndex,
    inner: f64,
}

impl DistanceField for LayerField<'_> {
    fn distance_capped(&self, p: Vec3, cap: f64) -> f64 {
        let di = (p.norm() - self.inner).max(0.0).min(cap);
        if self.trace.is_empty() {
            di
        } else {
            self.trace.distance_capped(p, di)
        }
    }
}

/// Equal-area partition of the unit sphere into latitude bands, each split
/// into equal longitude sectors. Band `k` covers `z_edges[k+1] <= z <=
/// z_edges[k]` and has `sectors[k]` cells; its height is `2 sectors[k] / C`,
/// so every cell has area `4π / C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub z_edges: Vec<f64>,
    pub sectors: Vec<usize>,
    offsets: Vec<usize>,
}

impl CellGrid {
    pub fn new(cells: usize) -> Result<Self, SlitError> {
        if cells == 0 {
            return Err(invalid("at least one cell is required"));
        }
        let bands = ((std::f64::consts::PI * cells as f64).sqrt() / 2.0)
            .round()
            .clamp(1.0, cells as f64) as usize;
        // Sector counts follow the band circumference, with at least one each.
        let w: Vec<f64> = (0..bands)
            .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / bands as f64).sin())
            .collect();
        let wsum: f64 = w.iter().sum();
        let spare = (cells - bands) as f64;
        let mut sectors: Vec<usize> = w.iter().map(|x| 1 + (spare * x / wsum).floor() as usize).collect();
        let mut rem: Vec<(f64, usize)> = w
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let q = spare * x / wsum;
                (q - q.floor(), k)
            })
            .collect();
        rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut left = cells - sectors.iter().sum::<usize>();
        for &(_, k) in rem.iter().cycle() {
            if left == 0 {
                break;
            }
            sectors[k] += 1;
            left -= 1;
        }
        let mut z_edges = vec![1.0];
        let mut offsets = vec![0];
        for &s in &sectors {
            let z = z_edges.last().unwrap() - 2.0 * s as f64 / cells as f64;
            z_edges.push(z);
            offsets.push(offsets.last().unwrap() + s);
        }
        *z_edges.last_mut().unwrap() = -1.0;
        Ok(Self {
            z_edges,
            sectors,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bands(&self) -> usize {
        self.sectors.len()
    }

    /// Cell containing the direction of `p`.
    pub fn locate(&self, p: Vec3) -> usize {
        let u = p.normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
        let b = self.bands();
        let k = self.z_edges[1..b].iter().take_while(|&&z| u.z < z).count();
        let s = self.sectors[k];
        let phi = u.y.atan2(u.x).rem_euclid(std::f64::consts::TAU);
        let j = ((phi / std::f64::consts::TAU * s as f64) as usize).min(s - 1);
        self.offsets[k] + j
    }

    /// Band index and sector index of a cell.
    pub fn band_of(&self, cell: usize) -> (usize, usize) {
        let k = self.offsets[1..].iter().take_while(|&&o| o <= cell).count();
        (k, cell - self.offsets[k])
    }

    /// Unit vector at the area center of a cell.
    pub fn center(&self, cell: usize) -> Vec3 {
        let (k, j) = self.band_of(cell);
        let z = 0.5 * (self.z_edges[k] + self.z_edges[k + 1]);
        let phi = std::f64::consts::TAU * (j as f64 + 0.5) / self.sectors[k] as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    }
}

/// Sampling parameters for one layer kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerParams {
    pub sources: usize,
    pub cells: usize,
    pub samples_per_source: u64,
    /// Pseudo-count added to every cell when the kernel is read.
    pub alpha: f64,
    /// Capture thickness relative to the inner radius.
    pub capture_rel: f64,
    pub max_steps: u64,
}

impl Default for LayerParams {
    fn default() -> Self {
        Self {
            sources: 16,
            cells: 16,
            samples_per_source: 400,
            alpha: 0.5,
            capture_rel: 1e-3,
            max_steps: 100_000,
        }
    }
}

impl LayerParams {
    pub fn validate(&self) -> Result<(), SlitError> {
        if self.sources == 0 || self.cells == 0 || self.samples_per_source == 0 || self.max_steps == 0 {
            return Err(invalid("sources, cells, samples and max_steps must be positive"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!(
                "alpha must be a finite nonnegative real, got {}",
                self.alpha
            )));
        }
        if !(self.capture_rel > 0.0 && self.capture_rel < 0.5) {
            return Err(invalid(format!(
                "capture_rel must lie in (0, 0.5), got {}",
                self.capture_rel
            )));
        }
        Ok(())
    }
}

/// Exit counts of walks from source points on the mid sphere to cells of the
/// outer sphere, conditioned on avoiding the inner sphere and the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalKernel {
    pub layer: i32,
    /// Inner, mid and outer radius.
    pub radii: [f64; 3],
    pub sources: Vec<Vec3>,
    pub grid: CellGrid,
    pub counts: Vec<Vec<u64>>,
    pub alpha: f64,
    pub samples_per_source: u64,
    pub inner_absorbed: Vec<u64>,
    pub slit_absorbed: Vec<u64>,
    pub stalled: Vec<u64>,
    /// Sources inside the capture region of the trace; their rows are empty.
    pub skipped: Vec<usize>,
}

impl EmpiricalKernel {
    /// Kernel with the given counts and no absorptions, for synthetic input.
    pub fn from_counts(counts: Vec<Vec<u64>>, alpha: f64) -> Result<Self, SlitError> {
        let cols = counts.first().map_or(0, |r| r.len());
        if counts.is_empty() || cols == 0 || counts.iter().any(|r| r.len() != cols) {
            return Err(invalid("counts must be a nonempty rectangular matrix"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid(format!("alpha must be a finite nonnegative real, got {alpha}")));
        }
        let s = counts.len();
        let samples = counts.iter().map(|r| r.iter().sum::<u64>()).max().unwrap_or(0);
        Ok(Self {
            layer: 0,
            radii: [1.0, 0.5f64.exp(), 1f64.exp()],
            sources: vec![Vec3::ZERO; s],
            grid: CellGrid::new(cols)?,
            counts,
            alpha,
            samples_per_source: samples,
            inner_absorbed: vec![0; s],
            slit_absorbed: vec![0; s],
            stalled: vec![0; s],
            skipped: Vec::new(),
        })
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Smoothed, normalized row, or `None` for skipped or empty rows.
    pub fn smoothed_row(&self, i: usize) -> Option<Vec<f64>> {
        if self.skipped.contains(&i) {
            return None;
        }
        let total = self.row_total(i) as f64 + self.alpha * self.counts[i].len() as f64;
        if total <= 0.0 {
            return None;
        }
        Some(
            self.counts[i]
                .iter()
                .map(|&c| (c as f64 + self.alpha) / total)
                .collect(),
        )
    }

    /// Smoothed kernel over the usable rows, labelled by source index.
    pub fn to_kernel(&self) -> Result<DiscreteKernel, SlitError> {
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for i in 0..self.counts.len() {
            if let Some(r) = self.smoothed_row(i) {
                labels.push(format!("s{i}"));
                rows.push(r);
            }
        }
        if rows.is_empty() {
            return Err(invalid("no usable rows"));
        }
        let cols = (0..self.grid.len()).map(|j| format!("c{j}")).collect();
        Ok(DiscreteKernel::new(labels, cols, rows)?)
    }

    /// Unsmoothed `P(exit in cell, no absorption)` per source, with every
    /// launched sample in the denominator.
    pub fn raw_probabilities(&self) -> Vec<Vec<f64>> {
        let n = self.samples_per_source.max(1) as f64;
        self.counts
            .iter()
            .map(|r| r.iter().map(|&c| c as f64 / n).collect())
            .collect()
    }
}

/// `count` points spread evenly over the sphere of radius `r`.
pub fn sphere_grid(count: usize, r: f64) -> Vec<Vec3> {
    DirectionLattice::fibonacci(count)
        .points
        .into_iter()
        .map(|u| u * r)
        .collect()
}

/// Empirical layer kernel from `params.sources` grid points on the mid
/// sphere.
pub fn estimate_layer_kernel(
    layer: &LayerSpec,
    params: &LayerParams,
    stream: &RngStream,
) -> Result<EmpiricalKernel, SlitError> {
    params.validate()?;
    let sources = sphere_grid(params.sources, layer.mid);
    estimate_layer_kernel_from(layer, &sources, params, stream)
}

/// Empirical layer kernel from explicit source points inside the shell.
/// `params.sources` is ignored.
pub fn estimate_layer_kernel_from(
    layer: &LayerSpec,
    sources: &[Vec3],
    params: &LayerParams,
    stream: &RngStream,
) -> Result<EmpiricalKernel, SlitError> {
    layer.validate()?;
    params.validate()?;
    if sources.is_empty() {
        return Err(invalid("at least one source is required"));
    }
    let eps = params.capture_rel * layer.inner;
    if let Some(s) = sources
        .iter()
        .find(|s| !(s.norm() > layer.inner + eps && s.norm() < layer.outer - eps))
    {
        return Err(invalid(format!("source {s:?} is not inside the shell")));
    }
    let grid = CellGrid::new(params.cells)?;
    let field = LayerField {
        trace: layer.trace,
        inner: layer.inner,
    };
    let cfg = WosConfig {
        capture_eps: eps,
        outer_radius: layer.outer,
        max_steps: params.max_steps,
    };
    let rows: Vec<(Vec<u64>, [u64; 3], bool)> = sources
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut counts = vec![0u64; grid.len()];
            let mut lost = [0u64; 3];
            if !layer.trace.is_empty() && layer.trace.distance_capped(s, 2.0 * eps) <= eps {
                return (counts, lost, true);
            }
            let mut rng = stream.substream(i as u64).rng();
            for _ in 0..params.samples_per_source {
                let (p, o) = walk_on_spheres_with(s, &field, &cfg, &mut rng);
                match o {
                    WosOutcome::OuterBoundary => counts[grid.locate(p)] += 1,
                    WosOutcome::SlitCapture if p.norm() - layer.inner <= eps => lost[0] += 1,
                    WosOutcome::SlitCapture => lost[1] += 1,
                    WosOutcome::StepCap => lost[2] += 1,
                }
            }
            (counts, lost, false)
        })
        .collect();
    let mut ek = EmpiricalKernel {
        layer: layer.index,
        radii: [layer.inner, layer.mid, layer.outer],
        sources: sources.to_vec(),
        grid,
        counts: Vec::with_capacity(rows.len()),
        alpha: params.alpha,
        samples_per_source: params.samples_per_source,
        inner_absorbed: Vec::with_capacity(rows.len()),
        slit_absorbed: Vec::with_capacity(rows.len()),
        stalled: Vec::with_capacity(rows.len()),
        skipped: Vec::new(),
    };
    for (i, (c, lost, skip)) in rows.into_iter().enumerate() {
        ek.counts.push(c);
        ek.inner_absorbed.push(lost[0]);
        ek.slit_absorbed.push(lost[1]);
        ek.stalled.push(lost[2]);
        if skip {
            ek.skipped.push(i);
        }
    }
    Ok(ek)
}

/// Switching constant of the smoothed kernel. A kernel with no usable rows
/// has no cross ratios and gets 1.
pub fn layer_switching_constant(ek: &EmpiricalKernel) -> ExtendedPositive {
    match ek.to_kernel() {
        Ok(k) => switching_constant(&k),
        Err(_) => ExtendedPositive::ONE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodLayerReport {
    pub layers: Vec<i32>,
    pub ks: Vec<ExtendedPositive>,
    pub threshold: f64,
    /// Fraction of layers with `K < threshold`, with its binomial stderr.
    pub fraction: Estimate,
}

impl GoodLayerReport {
    pub fn fraction_at(&self, m: f64) -> Estimate {
        let good = self.ks.iter().filter(|k| k.value() < m).count() as u64;
        Estimate::proportion(good, self.ks.len() as u64)
    }
}

/// Layer switching constants of `trace` for the layers in `layers` and the
/// fraction of them below `m`.
pub fn good_layer_fraction(
    trace: &Path3D,
    layers: RangeInclusive<i32>,
    m: f64,
    params: &LayerParams,
    stream: &RngStream,
) -> Result<GoodLayerReport, SlitError> {
    params.validate()?;
    if layers.is_empty() {
        return Err(invalid("empty layer range"));
    }
    if !(m > 0.0) {
        return Err(invalid(format!("threshold must be positive, got {m}")));
    }
    let reach = trace.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let top = (*layers.end() as f64 + 1.0).exp();
    if reach < top {
        return Err(invalid(format!(
            "trace reaches radius {reach}, below the outer layer radius {top}"
        )));
    }
    let idx = PolylineIndex::build(std::slice::from_ref(trace), None);
    let mut ks = Vec::new();
    let ids: Vec<i32> = layers.collect();
    for &i in &ids {
        let layer = LayerSpec::new(i, &idx);
        let ek = estimate_layer_kernel(&layer, params, &stream.labeled(&format!("layer{i}")))?;
        ks.push(layer_switching_constant(&ek));
    }
    let mut rep = GoodLayerReport {
        layers: ids,
        ks,
        threshold: m,
        fraction: Estimate::proportion(0, 0),
    };
    rep.fraction = rep.fraction_at(m);
    Ok(rep)
}

fn sample_index<R: Rng + ?Sized>(w: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Draw `(X, Y)` from the maximal coupling of two probability vectors.
pub fn sample_maximal_coupling<R: Rng + ?Sized>(a: &[f64], b: &[f64], rng: &mut R) -> (usize, usize) {
    let common: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.min(*y)).collect();
    let w: f64 = common.iter().sum();
    if rng.random::<f64>() < w {
        let y = sample_index(&common, w, rng);
        return (y, y);
    }
    let ra: Vec<f64> = a.iter().zip(&common).map(|(x, c)| (x - c).max(0.0)).collect();
    let rb: Vec<f64> = b.iter().zip(&common).map(|(y, c)| (y - c).max(0.0)).collect();
    let (ta, tb) = (ra.iter().sum(), rb.iter().sum());
    (sample_index(&ra, ta, rng), sample_index(&rb, tb, rng))
}

/// Chain of composable kernels with normalized rows.
#[derive(Debug, Clone)]
pub struct LayeredChain {
    rows: Vec<Vec<Vec<f64>>>,
}

impl LayeredChain {
    pub fn new(kernels: &[DiscreteKernel]) -> Result<Self, SlitError> {
        if kernels.is_empty() {
            return Err(invalid("at least one kernel is required"));
        }
        for (l, w) in kernels.windows(2).enumerate() {
            if w[0].cols() != w[1].rows() {
                return Err(SlitError::NotComposable(l, l + 1));
            }
        }
        let mut rows = Vec::with_capacity(kernels.len());
        for (l, k) in kernels.iter().enumerate() {
            let mut layer = Vec::with_capacity(k.rows());
            for (i, r) in k.values.iter().enumerate() {
                let s: f64 = r.iter().sum();
                if !(s > 0.0) {
                    return Err(invalid(format!("row {i} of kernel {l} has zero mass")));
                }
                layer.push(r.iter().map(|v| v / s).collect());
            }
            rows.push(layer);
        }
        Ok(Self { rows })
    }

    pub fn layers(&self) -> usize {
        self.rows.len()
    }

    /// Number of layers after which the two chains coincide, or `None` if
    /// they are still apart after the last one.
    pub fn run<R: Rng + ?Sized>(&self, starts: (usize, usize), rng: &mut R) -> Option<usize> {
        let (mut x, mut y) = starts;
        if x == y {
            return Some(0);
        }
        for (l, layer) in self.rows.iter().enumerate() {
            (x, y) = sample_maximal_coupling(&layer[x], &layer[y], rng);
            if x == y {
                return Some(l + 1);
            }
        }
        None
    }
}

/// One coupled run of two chains through the layers.
pub fn layered_coupling_sim(
    kernels: &[DiscreteKernel],
    starts: (usize, usize),
    stream: &RngStream,
) -> Result<Option<usize>, SlitError> {
    let chain = LayeredChain::new(kernels)?;
    check_starts(kernels, starts)?;
    Ok(chain.run(starts, &mut stream.rng()))
}

fn check_starts(kernels: &[DiscreteKernel], (a, b): (usize, usize)) -> Result<(), SlitError> {
    let n = kernels[0].rows();
    if a >= n || b >= n {
        return Err(invalid(format!("start indices ({a}, {b}) out of range for {n} rows")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub replicas: u64,
    /// `coupled_by[l]`: replicas coupled after at most `l` layers.
    pub coupled_by: Vec<u64>,
    pub not_coupled: Estimate,
    /// Product of the extremal total variations of the layers.
    pub product_bound: f64,
    /// Per-layer lower bound `2 / (1 + sqrt K)` on the coupling probability.
    pub layer_coupling_floor: Vec<f64>,
}

/// Monte Carlo law of the coupling layer over `replicas` independent runs.
pub fn coupling_experiment(
    kernels: &[DiscreteKernel],
    starts: (usize, usize),
    replicas: u64,
    stream: &RngStream,
) -> Result<CouplingReport, SlitError> {
    let chain = LayeredChain::new(kernels)?;
    check_starts(kernels, starts)?;
    if replicas == 0 {
        return Err(invalid("replicas must be positive"));
    }
    let outcomes: Vec<Option<usize>> = (0..replicas)
        .into_par_iter()
        .map(|r| chain.run(starts, &mut stream.substream(r).rng()))
        .collect();
    let m = chain.layers();
    let mut coupled_by = vec![0u64; m + 1];
    for o in outcomes.iter().flatten() {
        coupled_by[*o] += 1;
    }
    for l in 1..=m {
        coupled_by[l] += coupled_by[l - 1];
    }
    let apart = replicas - coupled_by[m];
    Ok(CouplingReport {
        replicas,
        coupled_by,
        not_coupled: Estimate::proportion(apart, replicas),
        product_bound: kernels.iter().map(extremal_tv).product(),
        layer_coupling_floor: kernels
            .iter()
            .map(|k| {
                let kv = switching_constant(k).value();
                if kv.is_infinite() {
                    0.0
                } else {
                    2.0 / (1.0 + kv.sqrt())
                }
            })
            .collect(),
    })
}

/// Which part of each trace forms the avoided set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubsetMode {
    Full,
    /// The first `fraction` of the samples of every trace.
    Prefix {
        fraction: f64,
    },
}

impl SubsetMode {
    fn fraction(self) -> f64 {
        match self {
            SubsetMode::Full => 1.0,
            SubsetMode::Prefix { fraction } => fraction,
        }
    }
}

fn prefix_path(p: &Path3D, fraction: f64) -> Option<Path3D> {
    let n = ((fraction * p.len() as f64).ceil() as usize).min(p.len());
    if n == 0 {
        return None;
    }
    let pts = p.points[..n].to_vec();
    match &p.timing {
        Timing::Uniform { dt } => Path3D::uniform(pts, *dt).ok(),
        Timing::Explicit { times } => Path3D::with_times(pts, times[..n].to_vec()).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CslParams {
    /// Thickening of the avoided set.
    pub capture_eps: f64,
    pub deltas: Vec<f64>,
    pub samples: u64,
    pub max_steps: u64,
}

impl Default for CslParams {
    fn default() -> Self {
        Self {
            capture_eps: 1e-3,
            deltas: vec![0.2, 0.1, 0.05, 0.02],
            samples: 400,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CslRow {
    pub subset: usize,
    pub start: Vec3,
    pub samples: u64,
    pub accepted: u64,
    pub stalled: u64,
    pub acceptance: f64,
    /// `P(dist(W(τ), A) > δ | accepted)` for each δ of the ladder.
    pub frequencies: Vec<Estimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CslTable {
    pub subsets: Vec<SubsetMode>,
    pub deltas: Vec<f64>,
    pub rows: Vec<CslRow>,
}

impl CslTable {
    pub fn row(&self, subset: usize, start: usize) -> &CslRow {
        let per = self.rows.len() / self.subsets.len().max(1);
        &self.rows[subset * per + start]
    }
}

/// Conditional separation experiment. For every start, walks run until they
/// leave the unit ball; a walk is rejected for a subset once it comes within
/// `capture_eps` of it. All subsets share one walk per sample whose steps
/// never exceed the distance to any subset still avoided, so for nested
/// subsets a rejection for the smaller one implies a rejection for the
/// larger one.
pub fn csl_experiment(
    traces: &[Path3D],
    subsets: &[SubsetMode],
    starts: &[Vec3],
    params: &CslParams,
    stream: &RngStream,
) -> Result<CslTable, SlitError> {
    if subsets.is_empty() || starts.is_empty() || params.samples == 0 || params.max_steps == 0 {
        return Err(invalid("subsets, starts, samples and max_steps must be nonempty"));
    }
    if !(params.capture_eps > 0.0 && params.capture_eps < 0.5) {
        return Err(invalid(format!(
            "capture_eps must lie in (0, 0.5), got {}",
            params.capture_eps
        )));
    }
    if params.deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(invalid("deltas must be nonnegative"));
    }
    for s in subsets {
        let f = s.fraction();
        if !(0.0..=1.0).contains(&f) {
            return Err(invalid(format!("prefix fraction {f} outside [0, 1]")));
        }
    }
    if let Some(x) = starts.iter().find(|x| !(x.norm() < 1.0 - params.capture_eps)) {
        return Err(invalid(format!("start {x:?} is not inside the unit ball")));
    }
    let indices: Vec<PolylineIndex> = subsets
        .iter()
        .map(|s| {
            let paths: Vec<Path3D> = traces.iter().filter_map(|p| prefix_path(p, s.fraction())).collect();
            PolylineIndex::build(&paths, None)
        })
        .collect();
    let eps = params.capture_eps;
    let dist = |i: usize, x: Vec3, cap: f64| -> f64 {
        if indices[i].is_empty() {
            cap
        } else {
            indices[i].distance_capped(x, cap)
        }
    };
    let ns = subsets.len();
    let mut rows = vec![Vec::with_capacity(starts.len()); ns];
    for (si, &x0) in starts.iter().enumerate() {
        let blocked: Vec<bool> = (0..ns).map(|i| dist(i, x0, 2.0 * eps) <= eps).collect();
        let sst = stream.substream(si as u64);
        // Per sample and subset: exit point when accepted; `None` when rejected;
        // the flag marks step-cap stalls.
        let outs: Vec<(Vec<Option<Vec3>>, bool)> = (0..params.samples)
            .into_par_iter()
            .map(|j| {
                let mut rng = sst.substream(j).rng();
                let mut alive: Vec<bool> = blocked.iter().map(|b| !b).collect();
                let mut exit = vec![None; ns];
                let mut x = x0;
                for _ in 0..params.max_steps {
                    if !alive.iter().any(|a| *a) {
                        return (exit, false);
                    }
                    let n = x.norm();
                    let ro = 1.0 - n;
                    if ro <= eps {
                        let p = if n > 0.0 { x / n } else { x };
                        for i in 0..ns {
                            if alive[i] {
                                exit[i] = Some(p);
                            }
                        }
                        return (exit, false);
                    }
                    let mut r = ro;
                    for (i, a) in alive.iter_mut().enumerate() {
                        if *a {
                            let d = dist(i, x, ro);
                            if d <= eps {
                                *a = false;
                            } else {
                                r = r.min(d);
                            }
                        }
                    }
                    if alive.iter().any(|a| *a) {
                        x += unit_vector(&mut rng) * r;
                    }
                }
                (exit, alive.iter().any(|a| *a))
            })
            .collect();
        for i in 0..ns {
            let mut accepted = 0u64;
            let mut stalled = 0u64;
            let mut hits = vec![0u64; params.deltas.len()];
            for (ex, st) in &outs {
                if *st && ex[i].is_none() && !blocked[i] {
                    stalled += 1;
                }
                if let Some(p) = ex[i] {
                    accepted += 1;
                    let d = dist(i, p, f64::INFINITY);
                    for (h, &delta) in hits.iter_mut().zip(&params.deltas) {
                        if d > delta {
                            *h += 1;
                        }
                    }
                }
            }
            let error = if blocked[i] {
                Some("start lies inside the thickened set".to_string())
            } else if accepted == 0 {
                Some("no accepted samples".to_string())
            } else {
                None
            };
            rows[i].push(CslRow {
                subset: i,
                start: x0,
                samples: params.samples,
                accepted,
                stalled,
                acceptance: accepted as f64 / params.samples as f64,
                frequencies: hits.iter().map(|&h| Estimate::proportion(h, accepted)).collect(),
                error,
            });
        }
    }
    Ok(CslTable {
        subsets: subsets.to_vec(),
        deltas: params.deltas.clone(),
        rows: rows.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationProduct {
    pub value: f64,
    /// Some factor was negative and replaced by 0.
    pub clamped: bool,
}

/// `Π_{m=m0}^{mmax} (1 - C² 9^m C2^{1.5^{m/2}} / C1^{m 1.1^m})`, with negative
/// factors clamped to 0. Terms are evaluated in log space.
pub fn separation_error_product(m0: u32, c: f64, c1: f64, c2: f64, mmax: u32) -> Result<SeparationProduct, SlitError> {
    if m0 == 0 || mmax < m0 {
        return Err(invalid(format!("need 1 <= m0 <= mmax, got {m0}, {mmax}")));
    }
    if !(c > 0.0 && c.is_finite()) || !(c1 > 0.0 && c1 < 1.0) || !(0.0..1.0).contains(&c2) {
        return Err(invalid(format!(
            "need C > 0, C1 in (0,1), C2 in [0,1), got {c}, {c1}, {c2}"
        )));
    }
    let mut log_sum = 0.0f64;
    let mut clamped = false;
    for m in m0..=mmax {
        let mf = m as f64;
        let g = 1.5f64.powf(mf / 2.0);
        let lt = if c2 == 0.0 || g.is_infinite() {
            f64::NEG_INFINITY
        } else {
            2.0 * c.ln() + mf * 9f64.ln() + g * c2.ln() - mf * 1.1f64.powf(mf) * c1.ln()
        };
        if lt >= 0.0 || lt.is_nan() {
            clamped = true;
            log_sum = f64::NEG_INFINITY;
            break;
        }
        log_sum += (-lt.exp()).ln_1p();
    }
    Ok(SeparationProduct {
        value: log_sum.exp(),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::{annulus_exit_prob, sample_until_exit};
    use crate::kernelfun::{convolve, extremal_tv_from_k, tv_distance, FiniteMeasure};
    use crate::stats::{chi_square, chi_square_quantile};
    use proptest::prelude::*;
    use rand::Rng;

    fn empty() -> PolylineIndex {
        PolylineIndex::build(&[], None)
    }

    // Annulus `a < |x| < b`: mass of the outer-sphere band `t0 < cos γ < t1`
    // (γ measured from the source direction) conditional on outer exit, from
    // the Legendre expansion of the Poisson kernel.
    fn annulus_band(a: f64, r: f64, b: f64, t0: f64, t1: f64) -> f64 {
        let rl = |l: i32| {
            let num = r.powi(l) - a.powi(2 * l + 1) * r.powi(-l - 1);
            let den = b.powi(l) - a.powi(2 * l + 1) * b.powi(-l - 1);
            num / den
        };
        let legendre = |t: f64, lmax: usize| {
            let mut p = vec![1.0, t];
            for l in 1..lmax {
                let next = ((2 * l + 1) as f64 * t * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
                p.push(next);
            }
            p
        };
        let lmax = 200;
        let (p0, p1) = (legendre(t0, lmax + 1), legendre(t1, lmax + 1));
        let mut s = rl(0) * (t1 - t0);
        for l in 1..lmax {
            let term = rl(l as i32) * ((p1[l + 1] - p1[l - 1]) - (p0[l + 1] - p0[l - 1]));
            s += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        0.5 * s / rl(0)
    }

    #[test]
    fn legendre_oracle_sanity() {
        let (a, r, b) = (1.0, 1.5, 2.5);
        assert!((annulus_band(a, r, b, -1.0, 1.0) - 1.0).abs() < 1e-12);
        // Without the inner sphere (a → 0) the kernel is the ball Poisson kernel.
        let bp = |t: f64| {
            let rho = r / b;
            (1.0 - rho * rho) / (1.0 + rho * rho - 2.0 * rho * t).powf(1.5)
        };
        let n = 20000;
        let integral: f64 = (0..n)
            .map(|i| {
                let t = 0.5 + 0.5 * (i as f64 + 0.5) / n as f64;
                bp(t) * 0.5 / n as f64
            })
            .sum::<f64>()
            * 0.5;
        assert!((annulus_band(1e-9, r, b, 0.5, 1.0) - integral).abs() < 1e-7);
    }

    #[test]
    fn grid_is_equal_area_partition() {
        for c in [1usize, 2, 7, 16, 64, 100] {
            let g = CellGrid::new(c).unwrap();
            assert_eq!(g.len(), c);
            for k in 0..g.bands() {
                let h = g.z_edges[k] - g.z_edges[k + 1];
                assert!((h - 2.0 * g.sectors[k] as f64 / c as f64).abs() < 1e-12);
            }
            for cell in 0..c {
                assert_eq!(g.locate(g.center(cell)), cell);
            }
        }
    }

    #[test]
    fn annulus_rows_match_legendre_kernel() {
        let idx = empty();
        let layer = LayerSpec::new(0, &idx);
        let params = LayerParams {
            cells: 24,
            samples_per_source: 40_000,
            ..Default::default()
        };
        let src = [Vec3::new(0.0, 0.0, layer.mid)];
        let ek = estimate_layer_kernel_from(&layer, &src, &params, &RngStream::new(11, 0)).unwrap();
        let g = &ek.grid;
        let probs: Vec<f64> = (0..g.len())
            .map(|c| {
                let (k, _) = g.band_of(c);
                annulus_band(layer.inner, layer.mid, layer.outer, g.z_edges[k + 1], g.z_edges[k]) / g.sectors[k] as f64
            })
            .collect();
        let chi = chi_square(&ek.counts[0], &probs);
        assert!(chi < chi_square_quantile(g.len() - 1, 3.09), "chi2 {chi}");
        // Outer exit frequency against the closed-form annulus law.
        let p_out = 1.0 - annulus_exit_prob(layer.inner, layer.mid, layer.outer).unwrap();
        let out = Estimate::proportion(ek.row_total(0), params.samples_per_source);
        assert!(
            out.within_sigma(p_out, 4.0) || (out.mean - p_out).abs() < 5e-3,
            "{out:?} vs {p_out}"
        );
        assert_eq!(
            ek.row_total(0) + ek.inner_absorbed[0] + ek.slit_absorbed[0] + ek.stalled[0],
            params.samples_per_source
        );
    }

    #[test]
    fn identical_sources_give_indistinguishable_rows() {
        let idx = empty();
        let layer = LayerSpec::new(-1, &idx);
        let params = LayerParams {
            cells: 8,
            samples_per_source: 5000,
            ..Default::default()
        };
        let s = Vec3::new(0.3, -0.2, 0.1).normalized().unwrap() * layer.mid;
        let ek = estimate_layer_kernel_from(&layer, &[s, s], &params, &RngStream::new(3, 0)).unwrap();
        // Two-sample chi-square homogeneity test.
        let (r0, r1) = (ek.row_total(0) as f64, ek.row_total(1) as f64);
        let mut chi = 0.0;
        for j in 0..8 {
            let (a, b) = (ek.counts[0][j] as f64, ek.counts[1][j] as f64);
            let e0 = (a + b) * r0 / (r0 + r1);
            let e1 = (a + b) * r1 / (r0 + r1);
            if e0 > 0.0 {
                chi += (a - e0).powi(2) / e0 + (b - e1).powi(2) / e1;
            }
        }
        assert!(chi < chi_square_quantile(7, 3.09), "chi2 {chi}");
        assert_ne!(ek.counts[0], ek.counts[1]);
    }

    #[test]
    fn zero_row_excluded_without_smoothing() {
        let ek = EmpiricalKernel::from_counts(vec![vec![3, 1], vec![0, 0], vec![1, 3]], 0.0).unwrap();
        let k = ek.to_kernel().unwrap();
        assert_eq!(k.rows(), 2);
        assert_eq!(k.row_labels, vec!["s0", "s2"]);
        assert!((layer_switching_constant(&ek).value() - 9.0).abs() < 1e-12);
        let ek = EmpiricalKernel::from_counts(vec![vec![3, 1], vec![0, 0]], 0.5).unwrap();
        assert_eq!(ek.to_kernel().unwrap().rows(), 2);
    }

    #[test]
    fn switching_constant_examples() {
        let uni = EmpiricalKernel::from_counts(vec![vec![5; 4]; 3], 0.0).unwrap();
        assert_eq!(layer_switching_constant(&uni).value(), 1.0);
        let ek = EmpiricalKernel::from_counts(vec![vec![9, 1], vec![1, 9]], 0.0).unwrap();
        assert!((layer_switching_constant(&ek).value() - 81.0).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for alpha in [0.0, 1.0, 10.0, 1e3, 1e6] {
            let ek = EmpiricalKernel::from_counts(vec![vec![9, 0], vec![1, 9]], alpha).unwrap();
            let k = layer_switching_constant(&ek).value();
            assert!(k <= prev);
            prev = k;
        }
        assert!(prev - 1.0 < 1e-4);
    }

    #[test]
    fn sources_inside_capture_are_skipped() {
        let trace = Path3D::uniform(vec![Vec3::new(1.5, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)], 1e-4).unwrap();
        let idx = PolylineIndex::build(&[trace], None);
        let layer = LayerSpec::new(0, &idx);
        let params = LayerParams {
            samples_per_source: 50,
            ..Default::default()
        };
        let src = [Vec3::new(1.6, 0.0, 0.0), Vec3::new(1.6, 0.1, 0.0)];
        let ek = estimate_layer_kernel_from(&layer, &src, &params, &RngStream::new(1, 0)).unwrap();
        assert_eq!(ek.skipped, vec![0]);
        assert_eq!(ek.row_total(0), 0);
        assert!(ek.slit_absorbed[1] > 0);
        assert_eq!(ek.to_kernel().unwrap().rows(), 1);
    }

    #[test]
    fn half_layers_compose_to_full_layer() {
        let idx = empty();
        let (a, r0, r1, r2) = (1.0, 1.3, 1.8, 2.5);
        // Coarse cells on the outer sphere, fine cells on the middle one so that
        // averaging the second stage over a cell costs little.
        let (cells, mid_cells) = (12, 192);
        let stream = RngStream::new(21, 0);
        let p = |c: usize, n: u64| LayerParams {
            cells: c,
            samples_per_source: n,
            ..Default::default()
        };
        let src = [Vec3::new(0.0, 0.0, r0)];
        let full_layer = LayerSpec::with_radii(0, a, r0, r2, &idx).unwrap();
        let n_full = 200_000;
        let full = estimate_layer_kernel_from(&full_layer, &src, &p(cells, n_full), &stream.labeled("full")).unwrap();
        let first_layer = LayerSpec::with_radii(0, a, r0, r1, &idx).unwrap();
        let n1 = 400_000;
        let first =
            estimate_layer_kernel_from(&first_layer, &src, &p(mid_cells, n1), &stream.labeled("first")).unwrap();
        // Second stage: sources spread uniformly over each middle cell.
        let grid = CellGrid::new(mid_cells).unwrap();
        let second_layer = LayerSpec::with_radii(0, a, r1, r2, &idx).unwrap();
        let (per, n_per) = (8usize, 250u64);
        let mut second = vec![vec![0.0; cells]; mid_cells];
        for (c, row) in second.iter_mut().enumerate() {
            let (k, j) = grid.band_of(c);
            let pts: Vec<Vec3> = (0..per)
                .map(|s| {
                    let f = (s as f64 + 0.5) / per as f64;
                    let g = ((s * 5) % per) as f64 / per as f64 + 0.5 / per as f64;
                    let z = grid.z_edges[k + 1] + (grid.z_edges[k] - grid.z_edges[k + 1]) * f;
                    let phi = std::f64::consts::TAU * (j as f64 + g) / grid.sectors[k] as f64;
                    let rr = (1.0 - z * z).sqrt();
                    Vec3::new(rr * phi.cos(), rr * phi.sin(), z) * r1
                })
                .collect();
            let ek =
                estimate_layer_kernel_from(&second_layer, &pts, &p(cells, n_per), &stream.substream(c as u64)).unwrap();
            for r in ek.raw_probabilities() {
                for (t, v) in row.iter_mut().zip(r) {
                    *t += v / per as f64;
                }
            }
        }
        let first_raw = DiscreteKernel::from_matrix(first.raw_probabilities()).unwrap();
        let second_k = DiscreteKernel::from_matrix(second).unwrap();
        let ones = FiniteMeasure::from_weights(vec![1.0; mid_cells]).unwrap();
        let comp = convolve(&first_raw, &second_k, &ones).unwrap();
        let cs: f64 = comp.values[0].iter().sum();
        let ft = full.row_total(0) as f64;
        let n2 = (per as u64 * n_per) as f64;
        for j in 0..cells {
            let pc = comp.values[0][j] / cs;
            let pf = full.counts[0][j] as f64 / ft;
            let var = pf * (1.0 - pf) * (1.0 / ft + 1.0 / (0.5 * n1 as f64) + 1.0 / n2);
            assert!(
                (pc - pf).abs() <= 3.0 * var.sqrt(),
                "cell {j}: composed {pc} vs full {pf}"
            );
        }
    }

    #[test]
    fn composed_layers_submultiplicative() {
        let s = RngStream::new(8, 0);
        let mut r = s.rng();
        for _ in 0..50 {
            let mk = |r: &mut rand_chacha::ChaCha8Rng| {
                EmpiricalKernel::from_counts(
                    (0..4)
                        .map(|_| (0..4).map(|_| r.random_range(0..30u64)).collect())
                        .collect(),
                    0.5,
                )
                .unwrap()
                .to_kernel()
                .unwrap()
            };
            let (p, q) = (mk(&mut r), mk(&mut r));
            let q = DiscreteKernel::from_matrix(q.values).unwrap();
            let p = DiscreteKernel::from_matrix(p.values).unwrap();
            let mu = FiniteMeasure::from_weights(vec![0.25; 4]).unwrap();
            let pq = convolve(&p, &q, &mu).unwrap();
            assert!(extremal_tv(&pq) <= extremal_tv(&p) * extremal_tv(&q) + 1e-12);
        }
    }

    fn random_kernel(r: &mut impl Rng, rows: usize, cols: usize) -> DiscreteKernel {
        DiscreteKernel::from_matrix(
            (0..rows)
                .map(|_| (0..cols).map(|_| 0.05 + r.random::<f64>()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn coupling_identical_starts_and_composability() {
        let mut r = RngStream::new(1, 1).rng();
        let k = random_kernel(&mut r, 3, 3);
        assert_eq!(
            layered_coupling_sim(std::slice::from_ref(&k), (1, 1), &RngStream::new(1, 0)).unwrap(),
            Some(0)
        );
        let bad = random_kernel(&mut r, 4, 3);
        assert!(matches!(
            layered_coupling_sim(&[k.clone(), bad], (0, 1), &RngStream::new(1, 0)),
            Err(SlitError::NotComposable(0, 1))
        ));
        assert!(layered_coupling_sim(&[k], (0, 5), &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn single_layer_coupling_is_one_minus_tv() {
        let mut r = RngStream::new(2, 1).rng();
        let k = random_kernel(&mut r, 3, 5);
        let row = |i: usize| FiniteMeasure::from_weights(k.values[i].clone()).unwrap();
        let tv = tv_distance(&row(0), &row(2)).unwrap();
        let rep = coupling_experiment(std::slice::from_ref(&k), (0, 2), 100_000, &RngStream::new(2, 0)).unwrap();
        let coupled = Estimate::proportion(rep.coupled_by[1], rep.replicas);
        assert!(coupled.within_sigma(1.0 - tv, 3.0), "{coupled:?} vs {}", 1.0 - tv);
        assert!(coupled.mean >= rep.layer_coupling_floor[0] - 3.0 * coupled.stderr);
    }

    #[test]
    fn non_coupling_below_product_bound() {
        let mut r = RngStream::new(3, 1).rng();
        for m in [4usize, 8] {
            let ks: Vec<DiscreteKernel> = (0..m).map(|_| random_kernel(&mut r, 4, 4)).collect();
            let rep = coupling_experiment(&ks, (0, 3), 20_000, &RngStream::new(3, m as u64)).unwrap();
            assert!(
                rep.not_coupled.mean <= rep.product_bound + 3.0 * rep.not_coupled.stderr,
                "{rep:?}"
            );
            assert!(rep.coupled_by.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn coupling_is_deterministic() {
        let mut r = RngStream::new(4, 1).rng();
        let ks: Vec<DiscreteKernel> = (0..3).map(|_| random_kernel(&mut r, 3, 3)).collect();
        let a = coupling_experiment(&ks, (0, 1), 1000, &RngStream::new(4, 0)).unwrap();
        let b = coupling_experiment(&ks, (0, 1), 1000, &RngStream::new(4, 0)).unwrap();
        assert_eq!(a, b);
    }

    fn trace(seed: u64) -> Path3D {
        sample_until_exit(Vec3::ZERO, 1.0, 1e-4, &RngStream::new(seed, 0))
    }

    #[test]
    fn csl_empty_set_accepts_everything() {
        let t = trace(1);
        let starts = [Vec3::new(0.2, 0.1, 0.0), Vec3::new(-0.3, 0.0, 0.2)];
        let params = CslParams {
            samples: 200,
            ..Default::default()
        };
        let tab = csl_experiment(
            &[t],
            &[SubsetMode::Prefix { fraction: 0.0 }],
            &starts,
            &params,
            &RngStream::new(5, 0),
        )
        .unwrap();
        for row in &tab.rows {
            assert_eq!(row.accepted, 200);
            assert_eq!(row.acceptance, 1.0);
            assert!(row.frequencies.iter().all(|f| f.mean == 1.0));
        }
    }

    #[test]
    fn csl_frequencies_antitone_and_nested_acceptance() {
        let ts = vec![trace(2), trace(3)];
        let subsets = [
            SubsetMode::Prefix { fraction: 0.3 },
            SubsetMode::Full,
            SubsetMode::Prefix { fraction: 0.6 },
        ];
        let starts = [
            Vec3::new(0.4, 0.0, 0.0),
            Vec3::new(0.0, -0.4, 0.1),
            Vec3::new(0.1, 0.1, 0.4),
        ];
        let params = CslParams {
            samples: 300,
            deltas: vec![0.2, 0.1, 0.05, 0.02, 0.0],
            ..Default::default()
        };
        let tab = csl_experiment(&ts, &subsets, &starts, &params, &RngStream::new(6, 0)).unwrap();
        for s in 0..3 {
            let (a, f, b) = (tab.row(0, s), tab.row(1, s), tab.row(2, s));
            if a.error.is_some() || f.error.is_some() || b.error.is_some() {
                continue;
            }
            assert!(
                a.accepted >= b.accepted && b.accepted >= f.accepted,
                "{a:?} {b:?} {f:?}"
            );
            for row in [a, f, b] {
                let fr: Vec<f64> = row.frequencies.iter().map(|e| e.mean).collect();
                assert!(fr.windows(2).all(|w| w[0] <= w[1]), "{fr:?}");
            }
        }
    }

    #[test]
    fn csl_start_inside_set_is_reported() {
        let t = trace(4);
        let x = t.points[t.len() / 2];
        let tab = csl_experiment(
            &[t],
            &[SubsetMode::Full],
            &[x],
            &CslParams::default(),
            &RngStream::new(7, 0),
        )
        .unwrap();
        assert_eq!(tab.rows[0].accepted, 0);
        assert!(tab.rows[0].error.is_some());
    }

    #[test]
    fn separation_product_examples() {
        let p = separation_error_product(1, 1.0, 0.5, 0.0, 50).unwrap();
        assert_eq!(p.value, 1.0);
        assert!(!p.clamped);
        let v = |m0| separation_error_product(m0, 1.0, 0.5, 0.5, 200).unwrap();
        let a = v(40);
        assert!(a.value > 0.0 && a.value <= 1.0);
        for m0 in 1..60 {
            assert!(v(m0 + 1).value >= v(m0).value);
        }
        assert!(v(5).clamped);
        for m0 in [40, 45, 60] {
            let x = separation_error_product(m0, 1.0, 0.5, 0.5, 200).unwrap().value;
            let y = separation_error_product(m0, 1.0, 0.5, 0.5, 400).unwrap().value;
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn separation_product_direct_evaluation() {
        // Parameters with non-negligible factors.
        let (c, c1, c2): (f64, f64, f64) = (1e-3, 0.99, 0.3);
        let mut direct = 1.0;
        for m in 10..=30u32 {
            let mf = m as f64;
            let t = c * c * 9f64.powi(m as i32) * c2.powf(1.5f64.powf(mf / 2.0)) / c1.powf(mf * 1.1f64.powf(mf));
            direct *= 1.0 - t;
        }
        let got = separation_error_product(10, c, c1, c2, 30).unwrap();
        assert!(!got.clamped);
        assert!(
            (got.value - direct).abs() < 1e-12 * direct.max(1e-300),
            "{} vs {direct}",
            got.value
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn good_fraction_monotone_in_threshold(ks in prop::collection::vec(1.0f64..1e4, 1..20), m1 in 1.0f64..1e4, m2 in 1.0f64..1e4) {
            let rep = GoodLayerReport {
                layers: (0..ks.len() as i32).collect(),
                ks: ks.iter().map(|&k| ExtendedPositive::new(k).unwrap()).collect(),
                threshold: 1.0,
                fraction: Estimate::proportion(0, 0),
            };
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            prop_assert!(rep.fraction_at(lo).mean <= rep.fraction_at(hi).mean);
            prop_assert_eq!(rep.fraction_at(f64::INFINITY).mean, 1.0);
        }

        #[test]
        fn maximal_coupling_sampler_marginals(seed in 0u64..1000) {
            let mut r = RngStream::new(seed, 9).rng();
            let a = [0.5, 0.3, 0.2];
            let b = [0.1, 0.3, 0.6];
            let (x, y) = sample_maximal_coupling(&a, &b, &mut r);
            prop_assert!(x < 3 && y < 3);
            // Residual supports are disjoint, so a mismatch never lands on a shared
            // excess cell.
            if x != y {
                prop_assert!(x == 0 && y == 2);
            }
        }
    }

    #[test]
    fn good_layer_fraction_runs_on_a_trace() {
        let t = trace(9);
        let params = LayerParams {
            sources: 6,
            cells: 6,
            samples_per_source: 100,
            ..Default::default()
        };
        let rep = good_layer_fraction(&t, -3..=-2, 1e300, &params, &RngStream::new(9, 0)).unwrap();
        assert_eq!(rep.ks.len(), 2);
        assert_eq!(rep.fraction.mean, 1.0);
        assert!(good_layer_fraction(&t, -3..=0, 10.0, &params, &RngStream::new(9, 0)).is_err());
    }

    #[test]
    fn extremal_tv_matches_k_on_smoothed_kernels() {
        let ek = EmpiricalKernel::from_counts(vec![vec![9, 1], vec![1, 9]], 0.0).unwrap();
        let k = layer_switching_constant(&ek);
        assert!((extremal_tv(&ek.to_kernel().unwrap()) - extremal_tv_from_k(k)).abs() < 1e-12);
    }
}
