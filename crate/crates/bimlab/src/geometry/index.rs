//! Exact nearest-distance queries against a set of polylines.
//!
//! Two accelerators share one segment array: a bounding-volume hierarchy
//! over contiguous runs of segments (polylines are spatially coherent, so
//! index order is a good split order) answers nearest-distance and range
//! queries, and a uniform-grid spatial hash answers fixed-radius sausage
//! membership. Both return exact answers; neither approximates.

use std::sync::OnceLock;

use rustc_hash::FxHashMap;

use super::{point_segment_distance2, Vec3};
use crate::brownian::Path3D;

const LEAF: usize = 8;
const NONE: u32 = u32::MAX;

/// Sampling guard `3 sqrt(dt log(1/dt))` for a step of duration `dt`
/// (the logarithm is floored at 1 so the guard stays monotone in `dt`).
pub fn sampling_guard(dt: f64) -> f64 {
    if !(dt > 0.0) {
        return 0.0;
    }
    3.0 * (dt * (1.0 / dt).ln().max(1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec3,
    pub b: Vec3,
    /// Duration of the step; zero for isolated points.
    pub dt: f64,
    pub path: u32,
}

impl Segment {
    pub fn guard(&self) -> f64 {
        sampling_guard(self.dt)
    }

    #[inline]
    pub fn distance2(&self, p: Vec3) -> f64 {
        point_segment_distance2(p, self.a, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    gmax: f64,
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

#[inline]
fn aabb_dist2(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let dx = (lo.x - p.x).max(0.0).max(p.x - hi.x);
    let dy = (lo.y - p.y).max(0.0).max(p.y - hi.y);
    let dz = (lo.z - p.z).max(0.0).max(p.z - hi.z);
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug)]
pub struct PolylineIndex {
    segs: Vec<Segment>,
    path_ranges: Vec<(usize, usize)>,
    nodes: Vec<Node>,
    cell: f64,
    grid: OnceLock<FxHashMap<[i32; 3], Vec<u32>>>,
}

impl PolylineIndex {
    /// Index the segments of `paths`. `cell` is the grid cell size; when
    /// absent the median segment length is used.
    pub fn build(paths: &[Path3D], cell: Option<f64>) -> Self {
        let mut segs = Vec::with_capacity(paths.iter().map(|p| p.points.len()).sum());
        let mut path_ranges = Vec::with_capacity(paths.len());
        for (pi, p) in paths.iter().enumerate() {
            let start = segs.len();
            if p.points.len() == 1 {
                segs.push(Segment {
                    a: p.points[0],
                    b: p.points[0],
                    dt: 0.0,
                    path: pi as u32,
                });
            }
            for i in 0..p.points.len().saturating_sub(1) {
                segs.push(Segment {
                    a: p.points[i],
                    b: p.points[i + 1],
                    dt: p.step_dt(i),
                    path: pi as u32,
                });
            }
            path_ranges.push((start, segs.len()));
        }
        Self::from_segments(segs, path_ranges, cell)
    }

    pub fn from_segments(segs: Vec<Segment>, path_ranges: Vec<(usize, usize)>, cell: Option<f64>) -> Self {
        let cell = cell.filter(|c| *c > 0.0 && c.is_finite()).unwrap_or_else(|| {
            let mut lens: Vec<f64> = segs.iter().map(|s| (s.b - s.a).norm()).filter(|l| *l > 0.0).collect();
            if lens.is_empty() {
                1.0
            } else {
                let mid = lens.len() / 2;
                *lens.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
            }
        });
        let mut idx = Self {
            segs,
            path_ranges,
            nodes: Vec::new(),
            cell,
            grid: OnceLock::new(),
        };
        if !idx.segs.is_empty() {
            idx.nodes.reserve(2 * idx.segs.len() / LEAF + 2);
            idx.build_node(0, idx.segs.len());
        }
        idx
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        let mut gmax = 0.0f64;
        for s in &self.segs[start..end] {
            lo = lo.min(s.a).min(s.b);
            hi = hi.max(s.a).max(s.b);
            gmax = gmax.max(s.guard());
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            lo,
            hi,
            gmax,
            start: start as u32,
            end: end as u32,
            left: NONE,
            right: NONE,
        });
        if end - start > LEAF {
            let mid = start + (end - start) / 2;
            let l = self.build_node(start, mid);
            let r = self.build_node(mid, end);
            self.nodes[id as usize].left = l;
            self.nodes[id as usize].right = r;
        }
        id
    }

    pub fn is_empty(&self) -> bool {
        self.segs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segs.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segs
    }

    pub fn num_paths(&self) -> usize {
        self.path_ranges.len()
    }

    /// Segment index range belonging to path `p`.
    pub fn path_range(&self, p: usize) -> (usize, usize) {
        self.path_ranges[p]
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Nearest segment among indices in `[lo, hi)` if closer than `cap`.
    pub fn nearest_in_range(&self, p: Vec3, lo: usize, hi: usize, cap: f64) -> Option<(f64, usize)> {
        if self.nodes.is_empty() || lo >= hi {
            return None;
        }
        let mut best2 = if cap.is_finite() { cap * cap } else { f64::INFINITY };
        let mut best_i = usize::MAX;
        let mut stack: [u32; 64] = [0; 64];
        let mut sp = 1usize;
        stack[0] = 0;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            let (ns, ne) = (node.start as usize, node.end as usize);
            if ne <= lo || ns >= hi || aabb_dist2(p, node.lo, node.hi) >= best2 {
                continue;
            }
            if node.left == NONE {
                for i in ns.max(lo)..ne.min(hi) {
                    let d2 = self.segs[i].distance2(p);
                    if d2 < best2 {
                        best2 = d2;
                        best_i = i;
                    }
                }
                continue;
            }
            let (l, r) = (node.left, node.right);
            let dl = aabb_dist2(p, self.nodes[l as usize].lo, self.nodes[l as usize].hi);
            let dr = aabb_dist2(p, self.nodes[r as usize].lo, self.nodes[r as usize].hi);
            let (near, far) = if dl <= dr { (l, r) } else { (r, l) };
            stack[sp] = far;
            stack[sp + 1] = near;
            sp += 2;
        }
        (best_i != usize::MAX).then(|| (best2.sqrt(), best_i))
    }

    pub fn nearest(&self, p: Vec3) -> Option<(f64, usize)> {
        self.nearest_in_range(p, 0, self.segs.len(), f64::INFINITY)
    }

    /// Exact distance to the segment set (infinite when empty).
    pub fn distance(&self, p: Vec3) -> f64 {
        self.nearest(p).map_or(f64::INFINITY, |(d, _)| d)
    }

    /// `min(distance, cap)`, exact below `cap`.
    pub fn distance_capped(&self, p: Vec3, cap: f64) -> f64 {
        self.nearest_in_range(p, 0, self.segs.len(), cap)
            .map_or(cap, |(d, _)| d)
    }

    /// `min(distance to segments [lo, hi), cap)`.
    pub fn distance_in_range(&self, p: Vec3, lo: usize, hi: usize, cap: f64) -> f64 {
        self.nearest_in_range(p, lo, hi, cap).map_or(cap, |(d, _)| d)
    }

    /// Indices of all segments within distance `r` of `p`.
    pub fn segments_within(&self, p: Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let r2 = r * r;
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if aabb_dist2(p, node.lo, node.hi) > r2 {
                continue;
            }
            if node.left == NONE {
                for i in node.start as usize..node.end as usize {
                    if self.segs[i].distance2(p) <= r2 {
                        out.push(i);
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
        out
    }

    /// Largest sampling guard over all segments.
    pub fn max_guard(&self) -> f64 {
        self.nodes.first().map_or(0.0, |n| n.gmax)
    }

    /// Walk the segments that come within `reach + guard` of `center`,
    /// reporting whole subtrees as blobs `(blob_center, blob_radius,
    /// max_guard)` once `(blob_radius + max_guard) <= kappa * distance`,
    /// and individual segments otherwise.
    pub(crate) fn visit_clusters(
        &self,
        center: Vec3,
        reach: f64,
        kappa: f64,
        mut on_blob: impl FnMut(Vec3, f64, f64),
        mut on_segment: impl FnMut(&Segment),
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            let lim = reach + node.gmax;
            if aabb_dist2(center, node.lo, node.hi) > lim * lim {
                continue;
            }
            let c = (node.lo + node.hi) * 0.5;
            let rad = (node.hi - node.lo).norm() * 0.5;
            let d = (c - center).norm();
            if rad + node.gmax <= kappa * d {
                on_blob(c, rad, node.gmax);
                continue;
            }
            if node.left == NONE {
                for s in &self.segs[node.start as usize..node.end as usize] {
                    on_segment(s);
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
    }

    /// Depth-first search for a segment satisfying `hit`, skipping nodes for
    /// which `prune(center, radius, max_guard)` holds. Returns early on the
    /// first hit.
    pub(crate) fn any_segment(
        &self,
        center: Vec3,
        reach: f64,
        mut prune: impl FnMut(Vec3, f64, f64) -> bool,
        mut hit: impl FnMut(&Segment) -> bool,
    ) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            let lim = reach + node.gmax;
            if aabb_dist2(center, node.lo, node.hi) > lim * lim {
                continue;
            }
            let c = (node.lo + node.hi) * 0.5;
            let rad = (node.hi - node.lo).norm() * 0.5;
            if prune(c, rad, node.gmax) {
                continue;
            }
            if node.left == NONE {
                if self.segs[node.start as usize..node.end as usize].iter().any(&mut hit) {
                    return true;
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
        false
    }

    fn grid(&self) -> &FxHashMap<[i32; 3], Vec<u32>> {
        self.grid.get_or_init(|| {
            let mut g: FxHashMap<[i32; 3], Vec<u32>> = FxHashMap::default();
            for (i, s) in self.segs.iter().enumerate() {
                let lo = self.cell_of(s.a.min(s.b));
                let hi = self.cell_of(s.a.max(s.b));
                for cx in lo[0]..=hi[0] {
                    for cy in lo[1]..=hi[1] {
                        for cz in lo[2]..=hi[2] {
                            g.entry([cx, cy, cz]).or_default().push(i as u32);
                        }
                    }
                }
            }
            g
        })
    }

    #[inline]
    fn cell_of(&self, p: Vec3) -> [i32; 3] {
        let c = |v: f64| (v / self.cell).floor().clamp(-1e9, 1e9) as i32;
        [c(p.x), c(p.y), c(p.z)]
    }

    /// Sausage membership: exact test of `distance(p) <= r`.
    pub fn within(&self, p: Vec3, r: f64) -> bool {
        if self.segs.is_empty() || !(r >= 0.0) {
            return false;
        }
        let reach = (r / self.cell).ceil();
        if reach > 4.0 {
            return self.distance_capped(p, r * 2.0 + 1.0) <= r;
        }
        let reach = reach as i32;
        let grid = self.grid();
        let c = self.cell_of(p);
        let r2 = r * r;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(list) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if list.iter().any(|&i| self.segs[i as usize].distance2(p) <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// `true` iff `p` lies in the closed `r`-sausage of the indexed segments.
pub fn sausage_contains(idx: &PolylineIndex, r: f64, p: Vec3) -> bool {
    idx.within(p, r)
}
