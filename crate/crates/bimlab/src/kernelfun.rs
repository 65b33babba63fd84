//! Exact functionals on finite nonnegative kernels: switching constant,
//! weighted and extremal total variation, convolution, averaging, maximal
//! coupling and the fixed-point lower bound.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("fixed point did not converge after {0} iterations")]
    NoConvergence(u64),
}

/// Real number in `[1, ∞]`. Serializes `∞` as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ExtendedPositive(f64);

impl ExtendedPositive {
    pub const ONE: ExtendedPositive = ExtendedPositive(1.0);
    pub const INFINITY: ExtendedPositive = ExtendedPositive(f64::INFINITY);

    pub fn new(v: f64) -> Result<Self, KernelError> {
        if v >= 1.0 {
            Ok(Self(v))
        } else {
            Err(KernelError::InvalidArgument(format!("{v} is not in [1, inf]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for ExtendedPositive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for ExtendedPositive {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedPositive {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = ExtendedPositive;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number >= 1 or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                ExtendedPositive::new(v).map_err(E::custom)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                match v {
                    "inf" | "infinity" | "Infinity" => Ok(ExtendedPositive::INFINITY),
                    _ => Err(E::custom(format!("unexpected string {v:?}"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn check_unique(labels: &[String], what: &str) -> Result<(), String> {
    let mut sorted: Vec<&String> = labels.iter().collect();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(format!("duplicate {what} label"));
    }
    Ok(())
}

/// Nonnegative finite matrix `p(x, y)` with labelled rows `E` and columns `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel")]
pub struct DiscreteKernel {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    #[serde(default)]
    row_labels: Option<Vec<String>>,
    #[serde(default)]
    col_labels: Option<Vec<String>>,
    values: Vec<Vec<f64>>,
}

impl TryFrom<RawKernel> for DiscreteKernel {
    type Error = KernelError;

    fn try_from(r: RawKernel) -> Result<Self, KernelError> {
        let rows = r.values.len();
        let cols = r.values.first().map_or(0, |v| v.len());
        DiscreteKernel::new(
            r.row_labels.unwrap_or_else(|| default_labels(rows)),
            r.col_labels.unwrap_or_else(|| default_labels(cols)),
            r.values,
        )
    }
}

impl DiscreteKernel {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        let bad = |m: String| KernelError::InvalidKernel(m);
        if row_labels.is_empty() || col_labels.is_empty() {
            return Err(bad("kernel needs at least one row and one column".into()));
        }
        if values.len() != row_labels.len() {
            return Err(bad(format!(
                "{} rows for {} row labels",
                values.len(),
                row_labels.len()
            )));
        }
        check_unique(&row_labels, "row").map_err(bad)?;
        check_unique(&col_labels, "column").map_err(bad)?;
        for (i, row) in values.iter().enumerate() {
            if row.len() != col_labels.len() {
                return Err(bad(format!(
                    "row {i} has {} entries, expected {}",
                    row.len(),
                    col_labels.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(bad(format!("entry {v} in row {i} is not a finite nonnegative real")));
            }
        }
        Ok(Self {
            row_labels,
            col_labels,
            values,
        })
    }

    /// Kernel with labels `0, 1, ...`.
    pub fn from_matrix(values: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        let rows = values.len();
        let cols = values.first().map_or(0, |v| v.len());
        Self::new(default_labels(rows), default_labels(cols), values)
    }

    pub fn from_json(s: &str) -> Result<Self, KernelError> {
        serde_json::from_str(s).map_err(|e| KernelError::InvalidKernel(e.to_string()))
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x][y]
    }
}

/// Finite nonnegative measure on a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct FiniteMeasure {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    #[serde(default)]
    labels: Option<Vec<String>>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for FiniteMeasure {
    type Error = KernelError;

    fn try_from(r: RawMeasure) -> Result<Self, KernelError> {
        let n = r.weights.len();
        FiniteMeasure::new(r.labels.unwrap_or_else(|| default_labels(n)), r.weights)
    }
}

impl FiniteMeasure {
    pub fn new(labels: Vec<String>, weights: Vec<f64>) -> Result<Self, KernelError> {
        let bad = |m: String| KernelError::InvalidMeasure(m);
        if labels.len() != weights.len() {
            return Err(bad(format!("{} weights for {} labels", weights.len(), labels.len())));
        }
        check_unique(&labels, "measure").map_err(bad)?;
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(bad(format!("weight {w} is not a finite nonnegative real")));
        }
        if !weights.iter().sum::<f64>().is_finite() {
            return Err(bad("total mass overflows".into()));
        }
        Ok(Self { labels, weights })
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self, KernelError> {
        let n = weights.len();
        Self::new(default_labels(n), weights)
    }

    pub fn from_json(s: &str) -> Result<Self, KernelError> {
        serde_json::from_str(s).map_err(|e| KernelError::InvalidMeasure(e.to_string()))
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Cross-ratio supremum for one ordered pair of rows, `max_y(a/b) / min_y(a/b)`
/// on the common support, or `∞` when the supports differ.
fn row_pair_ratio(a: &[f64], b: &[f64]) -> f64 {
    let (mut a_only, mut b_only, mut any_a, mut any_b) = (false, false, false, false);
    let (mut hi, mut lo) = (0.0f64, f64::INFINITY);
    for (&u, &v) in a.iter().zip(b) {
        any_a |= u > 0.0;
        any_b |= v > 0.0;
        match (u > 0.0, v > 0.0) {
            (true, false) => a_only = true,
            (false, true) => b_only = true,
            (true, true) => {
                let q = u / v;
                hi = hi.max(q);
                lo = lo.min(q);
            }
            _ => {}
        }
    }
    if (a_only && any_b) || (b_only && any_a) {
        return f64::INFINITY;
    }
    if hi > 0.0 {
        (hi / lo).max(1.0)
    } else {
        1.0
    }
}

/// Switching constant `K(p)`: the largest cross-ratio
/// `p(x1,y1) p(x2,y2) / (p(x1,y2) p(x2,y1))` over all 2×2 submatrices, with
/// `0/0` counted as 1 and positive/0 as `∞`.
///
/// For a fixed pair of rows the supremum over columns factorizes into
/// `max (p1/p2) / min (p1/p2)` over the common support, which gives
/// `O(|E|^2 |F|)` work instead of enumerating column pairs.
pub fn switching_constant(p: &DiscreteKernel) -> ExtendedPositive {
    let mut k = 1.0f64;
    for i in 0..p.rows() {
        for j in i + 1..p.rows() {
            k = k.max(row_pair_ratio(&p.values[i], &p.values[j]));
            if k.is_infinite() {
                return ExtendedPositive::INFINITY;
            }
        }
    }
    ExtendedPositive(k)
}

/// Literal enumeration of all 2×2 submatrices.
pub fn switching_constant_exhaustive(p: &DiscreteKernel) -> ExtendedPositive {
    let mut k = 1.0f64;
    for x1 in 0..p.rows() {
        for x2 in 0..p.rows() {
            for y1 in 0..p.cols() {
                for y2 in 0..p.cols() {
                    let num = p.get(x1, y1) * p.get(x2, y2);
                    let den = p.get(x1, y2) * p.get(x2, y1);
                    if num > 0.0 {
                        k = k.max(if den > 0.0 { num / den } else { f64::INFINITY });
                    }
                }
            }
        }
    }
    ExtendedPositive(k)
}

fn check_measure_on(labels: &[String], mu: &FiniteMeasure, what: &str) -> Result<(), KernelError> {
    if labels != mu.labels.as_slice() {
        return Err(KernelError::LabelMismatch(format!(
            "{what}: measure labels differ from kernel labels"
        )));
    }
    Ok(())
}

/// `T_μ(p)`: half the largest `μ`-weighted L1 distance between normalized
/// rows, over rows with positive normalizer.
pub fn weighted_tv(p: &DiscreteKernel, mu: &FiniteMeasure) -> Result<f64, KernelError> {
    check_measure_on(&p.col_labels, mu, "weighted_tv")?;
    if !(mu.mass() > 0.0) {
        return Err(KernelError::InvalidMeasure("measure has zero total mass".into()));
    }
    let norms: Vec<f64> = p
        .values
        .iter()
        .map(|row| row.iter().zip(&mu.weights).map(|(a, w)| a * w).sum())
        .collect();
    let valid: Vec<usize> = (0..p.rows()).filter(|&i| norms[i] > 0.0).collect();
    let mut best = 0.0f64;
    for (a, &i) in valid.iter().enumerate() {
        for &j in &valid[a + 1..] {
            let s: f64 = (0..p.cols())
                .map(|y| (p.get(i, y) / norms[i] - p.get(j, y) / norms[j]).abs() * mu.weights[y])
                .sum();
            best = best.max(0.5 * s);
        }
    }
    Ok(best.min(1.0))
}

/// `R(p) = 1 - 2 / (1 + sqrt(K(p)))`.
pub fn extremal_tv(p: &DiscreteKernel) -> f64 {
    extremal_tv_from_k(switching_constant(p))
}

pub fn extremal_tv_from_k(k: ExtendedPositive) -> f64 {
    if k.is_infinite() {
        1.0
    } else {
        1.0 - 2.0 / (1.0 + k.value().sqrt())
    }
}

/// Lower-bound oracle for `R(p)`: the best weighted total variation over two
/// rows against the two-point measures `μ(y1) = ε + sqrt(p12 p22)`,
/// `μ(y2) = ε + sqrt(p11 p21)`, over all row pairs, ordered column pairs and
/// ε in the ladder.
pub fn extremal_tv_oracle(p: &DiscreteKernel, eps_ladder: &[f64]) -> Result<f64, KernelError> {
    if eps_ladder.is_empty() || eps_ladder.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(KernelError::InvalidArgument(
            "ladder must be nonempty and positive".into(),
        ));
    }
    let mut best = 0.0f64;
    for x1 in 0..p.rows() {
        for x2 in x1 + 1..p.rows() {
            for y1 in 0..p.cols() {
                for y2 in 0..p.cols() {
                    if y1 == y2 {
                        continue;
                    }
                    let (p11, p12) = (p.get(x1, y1), p.get(x1, y2));
                    let (p21, p22) = (p.get(x2, y1), p.get(x2, y2));
                    for &eps in eps_ladder {
                        let m1 = eps + (p12 * p22).sqrt();
                        let m2 = eps + (p11 * p21).sqrt();
                        let n1 = p11 * m1 + p12 * m2;
                        let n2 = p21 * m1 + p22 * m2;
                        if !(n1 > 0.0 && n2 > 0.0) {
                            continue;
                        }
                        let tv = 0.5 * ((p11 / n1 - p21 / n2).abs() * m1 + (p12 / n1 - p22 / n2).abs() * m2);
                        best = best.max(tv);
                    }
                }
            }
        }
    }
    Ok(best.min(1.0))
}

/// `(p * q)(μ)(x, z) = Σ_y p(x, y) q(y, z) μ(y)`.
pub fn convolve(p: &DiscreteKernel, q: &DiscreteKernel, mu: &FiniteMeasure) -> Result<DiscreteKernel, KernelError> {
    if p.col_labels != q.row_labels {
        return Err(KernelError::LabelMismatch("columns of p differ from rows of q".into()));
    }
    check_measure_on(&p.col_labels, mu, "convolve")?;
    let values = p
        .values
        .iter()
        .map(|row| {
            let mut out = vec![0.0; q.cols()];
            for (y, (&a, &w)) in row.iter().zip(&mu.weights).enumerate() {
                let c = a * w;
                if c != 0.0 {
                    for (o, &b) in out.iter_mut().zip(&q.values[y]) {
                        *o += c * b;
                    }
                }
            }
            out
        })
        .collect();
    DiscreteKernel::new(p.row_labels.clone(), q.col_labels.clone(), values)
}

/// `r(x, z) = Σ_y q(y, z) μ(x, {y})`, with the family of measures given as
/// the kernel `family(x, y) = μ(x, {y})`.
pub fn row_average(q: &DiscreteKernel, family: &DiscreteKernel) -> Result<DiscreteKernel, KernelError> {
    if family.col_labels != q.row_labels {
        return Err(KernelError::LabelMismatch(
            "averaging measures are not on the rows of q".into(),
        ));
    }
    let ones = FiniteMeasure::new(q.row_labels.clone(), vec![1.0; q.rows()])?;
    convolve(family, q, &ones)
}

/// Total variation distance between the normalizations of `mu` and `nu`.
pub fn tv_distance(mu: &FiniteMeasure, nu: &FiniteMeasure) -> Result<f64, KernelError> {
    let (a, b) = normalized_pair(mu, nu)?;
    Ok(0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

fn normalized_pair(mu: &FiniteMeasure, nu: &FiniteMeasure) -> Result<(Vec<f64>, Vec<f64>), KernelError> {
    if mu.labels != nu.labels {
        return Err(KernelError::LabelMismatch(
            "measures live on different label sets".into(),
        ));
    }
    let (ma, mb) = (mu.mass(), nu.mass());
    if !(ma > 0.0 && mb > 0.0) {
        return Err(KernelError::InvalidMeasure("zero-mass measure".into()));
    }
    Ok((
        mu.weights.iter().map(|w| w / ma).collect(),
        nu.weights.iter().map(|w| w / mb).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub labels: Vec<String>,
    /// `joint[i][j] = P(X = i, Y = j)`.
    pub joint: Vec<Vec<f64>>,
    pub tv: f64,
}

impl Coupling {
    pub fn diagonal_mass(&self) -> f64 {
        (0..self.joint.len()).map(|i| self.joint[i][i]).sum()
    }
}

/// Maximal coupling: the diagonal carries `min(μ_i, ν_i)` and the residual
/// masses are coupled independently.
pub fn maximal_coupling(mu: &FiniteMeasure, nu: &FiniteMeasure) -> Result<Coupling, KernelError> {
    let (a, b) = normalized_pair(mu, nu)?;
    let n = a.len();
    let diag: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
    let ea: Vec<f64> = a.iter().zip(&diag).map(|(x, d)| x - d).collect();
    let eb: Vec<f64> = b.iter().zip(&diag).map(|(y, d)| y - d).collect();
    let tv = 0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let mut joint = vec![vec![0.0; n]; n];
    for i in 0..n {
        joint[i][i] = diag[i];
    }
    if tv > 0.0 {
        for i in 0..n {
            if ea[i] > 0.0 {
                for j in 0..n {
                    joint[i][j] += ea[i] * eb[j] / tv;
                }
            }
        }
    }
    Ok(Coupling {
        labels: mu.labels.clone(),
        joint,
        tv,
    })
}

/// `(1 - a) / (1 + (K - 1) a)`.
pub fn tricky_bound(a: f64, k: ExtendedPositive) -> Result<f64, KernelError> {
    if !(0.0..1.0).contains(&a) {
        return Err(KernelError::InvalidArgument(format!("a = {a} outside [0, 1)")));
    }
    if a == 0.0 {
        return Ok(1.0);
    }
    if k.is_infinite() {
        return Ok(0.0);
    }
    Ok((1.0 - a) / (1.0 + (k.value() - 1.0) * a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrickyReport {
    pub holds: bool,
    /// Leakage constant `max_x Σ_y p(x,y) ν(y,E) μ(y)`.
    pub a: f64,
    pub k: ExtendedPositive,
    pub bound: f64,
    pub iterations: u64,
    /// Fixed point `r`.
    pub r: Vec<f64>,
    /// `min_x (Σ_y p(x,y) s(y) μ(y) - bound r(x))`.
    pub min_slack: f64,
}

/// Solves `r(x) = Σ_y p(x,y) (Σ_z ν(y,z) r(z)) μ(y) + Σ_y p(x,y) s(y) μ(y)`
/// by fixed-point iteration (sup-norm step below `1e-12`, at most `10^6`
/// steps) and checks `Σ_y p(x,y) s(y) μ(y) >= tricky_bound(a, K(p)) r(x)`.
/// `nu` has rows `F` and columns `E`. The comparison allows a relative
/// rounding slack of `1e-9`.
pub fn verify_tricky(
    p: &DiscreteKernel,
    nu: &DiscreteKernel,
    s: &[f64],
    mu: &FiniteMeasure,
) -> Result<TrickyReport, KernelError> {
    check_measure_on(&p.col_labels, mu, "verify_tricky")?;
    if nu.row_labels != p.col_labels || nu.col_labels != p.row_labels {
        return Err(KernelError::LabelMismatch("nu must be a kernel from F to E".into()));
    }
    if s.len() != p.cols() || s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(KernelError::InvalidArgument(
            "s must be nonnegative with one value per column".into(),
        ));
    }
    let (ne, nf) = (p.rows(), p.cols());
    let nu_mass: Vec<f64> = nu.values.iter().map(|r| r.iter().sum()).collect();
    let a = (0..ne)
        .map(|x| (0..nf).map(|y| p.get(x, y) * nu_mass[y] * mu.weights[y]).sum::<f64>())
        .fold(0.0f64, f64::max);
    if a >= 1.0 {
        return Err(KernelError::InvalidArgument(format!(
            "leakage a = {a} >= 1, not a contraction"
        )));
    }
    let base: Vec<f64> = (0..ne)
        .map(|x| (0..nf).map(|y| p.get(x, y) * s[y] * mu.weights[y]).sum())
        .collect();
    let mut r = base.clone();
    let cap = 1_000_000u64;
    let mut iterations = 0u64;
    loop {
        let g: Vec<f64> = (0..nf).map(|y| (0..ne).map(|z| nu.get(y, z) * r[z]).sum()).collect();
        let next: Vec<f64> = (0..ne)
            .map(|x| base[x] + (0..nf).map(|y| p.get(x, y) * g[y] * mu.weights[y]).sum::<f64>())
            .collect();
        iterations += 1;
        let diff = next.iter().zip(&r).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        r = next;
        if diff < 1e-12 {
            break;
        }
        if iterations >= cap {
            return Err(KernelError::NoConvergence(cap));
        }
    }
    let k = switching_constant(p);
    let bound = tricky_bound(a, k)?;
    let scale = r.iter().fold(1.0f64, |m, v| m.max(*v));
    let min_slack = (0..ne).map(|x| base[x] - bound * r[x]).fold(f64::INFINITY, f64::min);
    Ok(TrickyReport {
        holds: min_slack >= -1e-9 * scale,
        a,
        k,
        bound,
        iterations,
        r,
        min_slack,
    })
}

/// Slack of `1 - ν(min(f,g)) <= (1 - ν(f)) + (1 - ν(g)) + ν(|f' - g'|)/2`
/// for `f <= f'`, `g <= g'` with `ν(f') = ν(g') = 1` (right side minus left).
pub fn min_max_slack(nu: &[f64], f: &[f64], fp: &[f64], g: &[f64], gp: &[f64]) -> Result<f64, KernelError> {
    let n = nu.len();
    if [f.len(), fp.len(), g.len(), gp.len()].iter().any(|&l| l != n) {
        return Err(KernelError::InvalidArgument("vectors must have equal length".into()));
    }
    let int = |h: &dyn Fn(usize) -> f64| (0..n).map(|i| h(i) * nu[i]).sum::<f64>();
    let lhs = 1.0 - int(&|i| f[i].min(g[i]));
    let rhs = (1.0 - int(&|i| f[i])) + (1.0 - int(&|i| g[i])) + 0.5 * int(&|i| (fp[i] - gp[i]).abs());
    Ok(rhs - lhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k(v: Vec<Vec<f64>>) -> DiscreteKernel {
        DiscreteKernel::from_matrix(v).unwrap()
    }

    fn m(w: Vec<f64>) -> FiniteMeasure {
        FiniteMeasure::from_weights(w).unwrap()
    }

    #[test]
    fn switching_constant_examples() {
        assert_eq!(
            switching_constant(&k(vec![vec![1.0, 1.0], vec![1.0, 1.0]])).value(),
            1.0
        );
        assert_eq!(
            switching_constant(&k(vec![vec![1.0, 1.0], vec![1.0, 2.0]])).value(),
            2.0
        );
        assert!(switching_constant(&k(vec![vec![1.0, 0.0], vec![0.0, 1.0]])).is_infinite());
        // Zero row: all numerators vanish.
        assert_eq!(
            switching_constant(&k(vec![vec![1.0, 3.0], vec![0.0, 0.0]])).value(),
            1.0
        );
    }

    #[test]
    fn weighted_tv_examples() {
        let half = m(vec![0.5, 0.5]);
        assert_eq!(
            weighted_tv(&k(vec![vec![1.0, 2.0], vec![1.0, 2.0]]), &half).unwrap(),
            0.0
        );
        assert!((weighted_tv(&k(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), &half).unwrap() - 1.0).abs() < 1e-15);
        assert!((weighted_tv(&k(vec![vec![2.0, 2.0], vec![1.0, 3.0]]), &half).unwrap() - 0.25).abs() < 1e-15);
        assert!(weighted_tv(&k(vec![vec![1.0]]), &m(vec![0.0])).is_err());
    }

    #[test]
    fn extremal_examples() {
        assert_eq!(extremal_tv(&k(vec![vec![3.0, 3.0], vec![3.0, 3.0]])), 0.0);
        let p = k(vec![vec![1.0, 1.0], vec![1.0, 2.0]]);
        let want = 3.0 - 2.0 * 2f64.sqrt();
        assert!((extremal_tv(&p) - want).abs() < 1e-15);
        let o = extremal_tv_oracle(&p, &[1e-3, 1e-6, 1e-9]).unwrap();
        assert!((o - want).abs() < 1e-6);
        assert!(o <= extremal_tv(&p) + 1e-15);
        assert_eq!(extremal_tv(&k(vec![vec![1.0, 0.0], vec![0.0, 1.0]])), 1.0);
        assert_eq!(
            extremal_tv_oracle(&k(vec![vec![2.0, 2.0], vec![2.0, 2.0]]), &[1e-9]).unwrap(),
            0.0
        );
    }

    #[test]
    fn convolve_examples() {
        let id = k(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(convolve(&id, &id, &m(vec![1.0, 1.0])).unwrap().values, id.values);
        let row = k(vec![vec![1.0, 1.0]]);
        let col = k(vec![vec![1.0], vec![1.0]]);
        assert_eq!(
            convolve(&row, &col, &m(vec![1.0, 1.0])).unwrap().values,
            vec![vec![2.0]]
        );
        assert!(convolve(&row, &row, &m(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn coupling_examples() {
        let c = maximal_coupling(&m(vec![0.5, 0.5]), &m(vec![0.5, 0.5])).unwrap();
        assert_eq!(c.diagonal_mass(), 1.0);
        let c = maximal_coupling(&m(vec![1.0, 0.0]), &m(vec![0.0, 1.0])).unwrap();
        assert_eq!(c.diagonal_mass(), 0.0);
        let c = maximal_coupling(&m(vec![0.7, 0.3]), &m(vec![0.4, 0.6])).unwrap();
        assert!((c.diagonal_mass() - 0.7).abs() < 1e-15);
        assert!((c.tv - 0.3).abs() < 1e-15);
        assert!(maximal_coupling(&m(vec![0.0, 0.0]), &m(vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn tricky_examples() {
        assert_eq!(tricky_bound(0.0, ExtendedPositive::new(5.0).unwrap()).unwrap(), 1.0);
        assert_eq!(tricky_bound(0.5, ExtendedPositive::ONE).unwrap(), 0.5);
        assert!((tricky_bound(0.5, ExtendedPositive::new(2.0).unwrap()).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(tricky_bound(1.0, ExtendedPositive::ONE).is_err());
        let p = k(vec![vec![1.0, 2.0], vec![0.5, 1.0]]);
        let zero_nu = k(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let mu = m(vec![0.3, 0.2]);
        let rep = verify_tricky(&p, &zero_nu, &[1.0, 2.0], &mu).unwrap();
        assert!(rep.holds);
        assert_eq!(rep.a, 0.0);
        assert!(rep.min_slack.abs() < 1e-15);
        let rep = verify_tricky(&p, &zero_nu, &[0.0, 0.0], &mu).unwrap();
        assert!(rep.holds && rep.r.iter().all(|v| *v == 0.0));
        let heavy = k(vec![vec![5.0, 5.0], vec![5.0, 5.0]]);
        assert!(verify_tricky(&p, &heavy, &[1.0, 1.0], &mu).is_err());
    }

    #[test]
    fn json_round_trips() {
        let p = k(vec![vec![1.0, 2.0]]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(DiscreteKernel::from_json(&s).unwrap(), p);
        assert!(DiscreteKernel::from_json(r#"{"values":[[1,-1]]}"#).is_err());
        assert!(DiscreteKernel::from_json(r#"{"values":[[1],[1,2]]}"#).is_err());
        assert!(DiscreteKernel::from_json(r#"{"values":[]}"#).is_err());
        assert!(DiscreteKernel::from_json(r#"{"values":[[1]],"extra":1}"#).is_err());
        assert!(FiniteMeasure::from_json(r#"{"weights":[1,2],"labels":["a","a"]}"#).is_err());
        let e: ExtendedPositive = serde_json::from_str("\"inf\"").unwrap();
        assert!(e.is_infinite());
        assert_eq!(serde_json::to_string(&e).unwrap(), "\"inf\"");
        assert!(serde_json::from_str::<ExtendedPositive>("0.5").is_err());
    }

    fn kernel_strategy() -> impl Strategy<Value = DiscreteKernel> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            prop::collection::vec(
                prop::collection::vec(prop_oneof![3 => 0.01f64..1.0, 1 => Just(0.0)], c),
                r,
            )
            .prop_map(|v| DiscreteKernel::from_matrix(v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn fast_switching_constant_matches_enumeration(p in kernel_strategy()) {
            let a = switching_constant(&p).value();
            let b = switching_constant_exhaustive(&p).value();
            prop_assert!(a == b || (a - b).abs() <= 1e-12 * b);
        }

        #[test]
        fn oracle_never_exceeds_identity(p in kernel_strategy()) {
            prop_assert!(extremal_tv_oracle(&p, &[1e-3, 1e-6]).unwrap() <= extremal_tv(&p) + 1e-12);
        }

        #[test]
        fn coupling_marginals(w in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8)) {
            let a: Vec<f64> = w.iter().map(|x| x.0 + 1e-3).collect();
            let b: Vec<f64> = w.iter().map(|x| x.1 + 1e-3).collect();
            let c = maximal_coupling(&m(a.clone()), &m(b.clone())).unwrap();
            let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
            for i in 0..a.len() {
                let row: f64 = c.joint[i].iter().sum();
                let col: f64 = c.joint.iter().map(|r| r[i]).sum();
                prop_assert!((row - a[i] / sa).abs() < 1e-12);
                prop_assert!((col - b[i] / sb).abs() < 1e-12);
            }
            prop_assert!((c.diagonal_mass() - (1.0 - c.tv)).abs() < 1e-12);
        }

        #[test]
        fn bhp_ratio_bounded_by_k(p in kernel_strategy(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..p.cols()).map(|_| rng.random::<f64>()).collect();
            let g: Vec<f64> = (0..p.cols()).map(|_| rng.random::<f64>()).collect();
            let u: Vec<f64> = p.values.iter().map(|r| r.iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
            let v: Vec<f64> = p.values.iter().map(|r| r.iter().zip(&g).map(|(a, b)| a * b).sum()).collect();
            let kk = switching_constant(&p).value();
            for i in 0..u.len() {
                for j in 0..u.len() {
                    let den = u[j] * v[i];
                    if den > 0.0 {
                        prop_assert!(u[i] * v[j] / den <= kk * (1.0 + 1e-12));
                    }
                }
            }
        }
    }
}
