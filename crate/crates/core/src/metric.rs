//! Coherence and causal distances between processes, plus the zero-lag
//! correlation baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{coherence_unclamped, spectral_matrix, Ensemble, SpectralMatrix, WelchConfig};
use crate::wiener::{all_factors, causal_wiener, causal_wiener_with};

/// Tolerance used when checking the triangle inequality on estimated spectra.
pub const ESTIMATE_TRIANGLE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    Noncausal,
    Causal,
    Correlation,
    CausalMin,
}

impl DistanceKind {
    pub fn is_symmetric(self) -> bool {
        !matches!(self, DistanceKind::Causal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Noncausal => "noncausal",
            DistanceKind::Causal => "causal",
            DistanceKind::Correlation => "correlation",
            DistanceKind::CausalMin => "causal-min",
        }
    }
}

/// Square matrix of non-negative weights between labeled series.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    values: Vec<Vec<f64>>,
    kind: DistanceKind,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>, kind: DistanceKind) -> Result<Self> {
        let n = labels.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "distance matrix must be {n}x{n} to match its labels"
            )));
        }
        for i in 0..n {
            if values[i][i] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "diagonal entry for '{}' is {}, expected 0",
                    labels[i], values[i][i]
                )));
            }
            for j in 0..n {
                let v = values[i][j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "entry ({}, {}) = {v} is negative or non-finite",
                        labels[i], labels[j]
                    )));
                }
                if kind.is_symmetric() && v != values[j][i] {
                    return Err(Error::InvalidInput(format!(
                        "{} matrix is not symmetric at ({}, {})",
                        kind.as_str(),
                        labels[i],
                        labels[j]
                    )));
                }
                if kind == DistanceKind::Noncausal && v > 1.0 + 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "coherence distance ({}, {}) = {v} exceeds 1",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        Ok(Self { labels, values, kind })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Same values under a different label order: entry `(a, b)` of the result
    /// is entry `(perm[a], perm[b])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let labels = perm.iter().map(|&p| self.labels[p].clone()).collect();
        let values = perm
            .iter()
            .map(|&a| perm.iter().map(|&b| self.values[a][b]).collect())
            .collect();
        Self::new(labels, values, self.kind)
    }
}

/// `+1` at `(j, i)` means `i` drives `j`; `-1` the reverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionMatrix {
    labels: Vec<String>,
    values: Vec<Vec<i8>>,
    ties: Vec<Vec<bool>>,
}

impl DirectionMatrix {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, j: usize, i: usize) -> i8 {
        self.values[j][i]
    }

    pub fn is_tie(&self, j: usize, i: usize) -> bool {
        self.ties[j][i]
    }

    pub fn tie_count(&self) -> usize {
        let n = self.labels.len();
        (0..n).flat_map(|j| (j + 1..n).map(move |i| (j, i))).filter(|&(j, i)| self.ties[j][i]).count()
    }
}

/// A triple where `d(i, k) > d(i, j) + d(j, k) + tol`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriangleViolation {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub excess: f64,
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn symmetric_from_pairs(n: usize, pairs: &[(usize, usize)], values: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]; n];
    for (&(i, j), &v) in pairs.iter().zip(values) {
        out[i][j] = v;
        out[j][i] = v;
    }
    out
}

/// `d(i, j) = sqrt((1/2pi) int (1 - C_ij))`, clamped to `[0, 1]`.
///
/// Panics if an index is out of range.
pub fn coherence_distance(s: &SpectralMatrix, i: usize, j: usize) -> f64 {
    assert!(i < s.n() && j < s.n(), "series index out of range");
    if i == j {
        return 0.0;
    }
    let (a, b) = (i.min(j), i.max(j));
    let gap: Vec<f64> = coherence_unclamped(s, a, b).iter().map(|c| 1.0 - c).collect();
    s.grid().integrate(&gap).max(0.0).sqrt().min(1.0)
}

pub fn distance_matrix(s: &SpectralMatrix) -> DistanceMatrix {
    let pairs = upper_pairs(s.n());
    let values: Vec<f64> = pairs.par_iter().map(|&(i, j)| coherence_distance(s, i, j)).collect();
    DistanceMatrix {
        labels: s.labels().to_vec(),
        values: symmetric_from_pairs(s.n(), &pairs, &values),
        kind: DistanceKind::Noncausal,
    }
}

/// `d_C(j | i)`: square root of the whitened causal Wiener cost of modeling
/// `x_j` from `x_i`.
pub fn causal_distance(s: &SpectralMatrix, j: usize, i: usize) -> Result<f64> {
    Ok(causal_wiener(s, j, i)?.cost.max(0.0).sqrt())
}

/// Entry `(j, i)` is `d_C(j | i)`; rows are targets.
pub fn causal_distance_matrix(s: &SpectralMatrix) -> Result<DistanceMatrix> {
    let n = s.n();
    let factors = all_factors(s)?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (j, i)))
        .collect();
    let costs = pairs
        .par_iter()
        .map(|&(j, i)| causal_wiener_with(s, j, i, &factors[i], &factors[j]).map(|sol| sol.cost))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![vec![0.0; n]; n];
    for (&(j, i), c) in pairs.iter().zip(costs) {
        values[j][i] = c.max(0.0).sqrt();
    }
    DistanceMatrix::new(s.labels().to_vec(), values, DistanceKind::Causal)
}

/// Symmetric weights `min(DC(j,i), DC(i,j))` and the direction that achieves them.
/// Exact ties orient the pair so that the higher index drives the lower one.
pub fn causal_edge_weights(dc: &DistanceMatrix) -> Result<(DistanceMatrix, DirectionMatrix)> {
    let n = dc.n();
    let mut w = vec![vec![0.0; n]; n];
    let mut h = vec![vec![0i8; n]; n];
    let mut ties = vec![vec![false; n]; n];
    for (lo, hi) in upper_pairs(n) {
        let (a, b) = (dc.get(lo, hi), dc.get(hi, lo));
        let m = a.min(b);
        w[lo][hi] = m;
        w[hi][lo] = m;
        let sign = if a <= b { 1 } else { -1 };
        h[lo][hi] = sign;
        h[hi][lo] = -sign;
        if a == b {
            ties[lo][hi] = true;
            ties[hi][lo] = true;
        }
    }
    let weights = DistanceMatrix::new(dc.labels().to_vec(), w, DistanceKind::CausalMin)?;
    Ok((
        weights,
        DirectionMatrix {
            labels: dc.labels().to_vec(),
            values: h,
            ties,
        },
    ))
}

/// `sqrt(2 (1 - rho))` with `rho` the zero-lag sample correlation.
pub fn correlation_distance_matrix(ens: &Ensemble) -> Result<DistanceMatrix> {
    let n = ens.n_series();
    let centered: Vec<Vec<f64>> = ens
        .series()
        .iter()
        .map(|s| {
            let m = s.mean();
            s.samples().iter().map(|v| v - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::DegenerateSeries(ens.get(i).label().to_string()));
    }
    let pairs = upper_pairs(n);
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let rho = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            // Rounding can leave identical series a few ulps short of rho = 1.
            let rho = if 1.0 - rho < 8.0 * f64::EPSILON { 1.0 } else { rho };
            (2.0 * (1.0 - rho)).sqrt()
        })
        .collect();
    DistanceMatrix::new(ens.labels(), symmetric_from_pairs(n, &pairs, &values), DistanceKind::Correlation)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0 + 1.0;
        for &p in &order[start..end] {
            ranks[p] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation over the strict upper triangles of two symmetric
/// matrices. `None` when fewer than two pairs exist or one side is constant.
pub fn spearman_index(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<Option<f64>> {
    if a.labels() != b.labels() {
        return Err(Error::ShapeMismatch("matrices have different labels".into()));
    }
    for m in [a, b] {
        if !m.kind().is_symmetric() {
            return Err(Error::InvalidInput(format!(
                "spearman index needs symmetric matrices, got {}",
                m.kind().as_str()
            )));
        }
    }
    let pairs = upper_pairs(a.n());
    if pairs.len() < 2 {
        return Ok(None);
    }
    let va: Vec<f64> = pairs.iter().map(|&(i, j)| a.get(i, j)).collect();
    let vb: Vec<f64> = pairs.iter().map(|&(i, j)| b.get(i, j)).collect();
    Ok(pearson(&average_ranks(&va), &average_ranks(&vb)))
}

/// Mean of the coherence distance matrices of consecutive non-overlapping
/// windows; a trailing partial window is dropped.
pub fn windowed_average_distance(
    ens: &Ensemble,
    window_length: usize,
    cfg: &WelchConfig,
) -> Result<DistanceMatrix> {
    if window_length == 0 {
        return Err(Error::InvalidParameter("window length must be positive".into()));
    }
    let count = ens.len() / window_length;
    if count == 0 {
        return Err(Error::InsufficientData {
            label: ens.get(0).label().to_string(),
            reason: format!("length {} is shorter than one window ({window_length})", ens.len()),
        });
    }
    let n = ens.n_series();
    let mut sum = vec![vec![0.0; n]; n];
    for w in 0..count {
        let part = ens.window(w * window_length, window_length)?;
        let d = distance_matrix(&spectral_matrix(&part, cfg)?);
        for (row, drow) in sum.iter_mut().zip(d.rows()) {
            for (s, v) in row.iter_mut().zip(drow) {
                *s += v;
            }
        }
    }
    for row in sum.iter_mut() {
        for v in row.iter_mut() {
            *v /= count as f64;
        }
    }
    DistanceMatrix::new(ens.labels(), sum, DistanceKind::Noncausal)
}

/// All ordered triples breaking the triangle inequality by more than `tol`.
pub fn triangle_violations(d: &DistanceMatrix, tol: f64) -> Vec<TriangleViolation> {
    let n = d.n();
    let mut out = Vec::new();
    for i in 0..n {
        for k in i + 1..n {
            for j in 0..n {
                if j == i || j == k {
                    continue;
                }
                let excess = d.get(i, k) - d.get(i, j) - d.get(j, k);
                if excess > tol {
                    out.push(TriangleViolation { i, j, k, excess });
                }
            }
        }
    }
    out
}
