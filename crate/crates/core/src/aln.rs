//! Acyclic linear networks: random generation, simulation, exact spectra and
//! topology-recovery experiments against the known ground truth.

use std::collections::{BTreeSet, HashSet};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{causal_distance_matrix, distance_matrix};
use crate::signal::{spectral_matrix, Ensemble, FrequencyGrid, SpectralMatrix, TimeSeries, WelchConfig};
use crate::topology::{
    build_polytree, miso_blanket_topology, minimum_spanning_tree, prufer_tree, DirectedEdge, Polytree,
    DEFAULT_BLANKET_THRESHOLD,
};

/// Shortest series [`simulate`] accepts.
pub const MIN_SIM_LENGTH: usize = 1024;
/// Default largest number of taps per link.
pub const DEFAULT_LINK_ORDER: usize = 3;
/// Default range of node noise variances.
pub const DEFAULT_NOISE_RANGE: (f64, f64) = (0.5, 1.5);

const MIN_LEADING_TAP: f64 = 0.2;

/// FIR link `G(z) = sum_p taps[p] z^-(delay + p)` from `parent` into `child`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub parent: usize,
    pub child: usize,
    pub delay: usize,
    pub taps: Vec<f64>,
}

impl LinkSpec {
    pub fn support(&self) -> usize {
        self.delay + self.taps.len()
    }

    pub fn response(&self, grid: FrequencyGrid) -> Vec<Complex64> {
        grid.fir_response(self.delay as isize, &self.taps)
    }
}

/// Network description. Node `j` is driven by its own noise of variance
/// `noise_variances[j]`, optionally colored by the MA taps `noise_shaping[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlnSpec {
    pub nodes: Vec<String>,
    pub edges: Vec<LinkSpec>,
    pub noise_variances: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_shaping: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl AlnSpec {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InvalidInput("network has no nodes".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.nodes.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate node label '{dup}'")));
        }
        for e in &self.edges {
            if e.parent >= n || e.child >= n {
                return Err(Error::UnknownNode(format!("link {} -> {} outside {n} nodes", e.parent, e.child)));
            }
            if e.taps.is_empty() || e.taps.iter().any(|t| !t.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "link {} -> {} needs finite taps",
                    self.nodes[e.parent], self.nodes[e.child]
                )));
            }
            if e.taps.iter().all(|&t| t == 0.0) {
                return Err(Error::InvalidInput(format!(
                    "link {} -> {} is identically zero",
                    self.nodes[e.parent], self.nodes[e.child]
                )));
            }
        }
        self.polytree()?;
        if self.noise_variances.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} noise variances for {n} nodes",
                self.noise_variances.len()
            )));
        }
        if let Some(j) = self.noise_variances.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise variance of '{}' must be finite and >= 0",
                self.nodes[j]
            )));
        }
        if let Some(shaping) = &self.noise_shaping {
            if shaping.len() != n {
                return Err(Error::ShapeMismatch(format!("{} noise filters for {n} nodes", shaping.len())));
            }
            if let Some(j) = shaping.iter().position(|t| t.is_empty() || t.iter().any(|v| !v.is_finite())) {
                return Err(Error::InvalidInput(format!(
                    "noise filter of '{}' needs finite taps",
                    self.nodes[j]
                )));
            }
        }
        Ok(())
    }

    /// Ground-truth graph; edge weights are unused and set to zero.
    pub fn polytree(&self) -> Result<Polytree> {
        let edges = self
            .edges
            .iter()
            .map(|e| DirectedEdge {
                parent: e.parent,
                child: e.child,
                weight: 0.0,
                tie: false,
            })
            .collect();
        Polytree::new(self.nodes.clone(), edges)
    }

    /// Longest impulse response among links and noise filters.
    pub fn max_support(&self) -> usize {
        let links = self.edges.iter().map(LinkSpec::support).max().unwrap_or(0);
        let noise = self
            .noise_shaping
            .as_ref()
            .map(|s| s.iter().map(Vec::len).max().unwrap_or(0))
            .unwrap_or(0);
        links.max(noise)
    }

    /// The same network with node `perm[a]` of `self` stored at position `a`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut inverse = vec![usize::MAX; n];
        for (a, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::InvalidParameter("not a permutation".into()));
            }
            inverse[p] = a;
        }
        if perm.len() != n {
            return Err(Error::InvalidParameter("not a permutation".into()));
        }
        Ok(Self {
            nodes: perm.iter().map(|&p| self.nodes[p].clone()).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| LinkSpec {
                    parent: inverse[e.parent],
                    child: inverse[e.child],
                    ..e.clone()
                })
                .collect(),
            noise_variances: perm.iter().map(|&p| self.noise_variances[p]).collect(),
            noise_shaping: self
                .noise_shaping
                .as_ref()
                .map(|s| perm.iter().map(|&p| s[p].clone()).collect()),
            seed: self.seed,
        })
    }

    /// Per-node noise power spectra.
    pub fn noise_spectra(&self, grid: FrequencyGrid) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|j| {
                let var = self.noise_variances[j];
                match &self.noise_shaping {
                    Some(s) => grid.fir_response(0, &s[j]).iter().map(|h| var * h.norm_sqr()).collect(),
                    None => vec![var; grid.len()],
                }
            })
            .collect()
    }
}

pub fn node_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("X{i}")).collect()
}

fn random_taps(rng: &mut ChaCha8Rng, max_taps: usize) -> Vec<f64> {
    let len = rng.random_range(1..=max_taps);
    loop {
        let taps: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if taps.iter().any(|t| t.abs() >= MIN_LEADING_TAP) {
            return taps;
        }
    }
}

/// Random polytree network: uniform labeled tree, fair-coin orientations and
/// one-sample delays, random FIR links and white noises.
pub fn generate_polytree_aln(
    n: usize,
    seed: u64,
    link_order_range: usize,
    noise_variance_range: (f64, f64),
) -> Result<AlnSpec> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("a network needs at least 2 nodes, got {n}")));
    }
    if link_order_range == 0 {
        return Err(Error::InvalidParameter("links need at least one tap".into()));
    }
    let (lo, hi) = noise_variance_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise variance range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let edges = prufer_tree(&seq, n)?
        .into_iter()
        .map(|(a, b)| {
            let (parent, child) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            let delay = usize::from(rng.random_bool(0.5));
            let taps = random_taps(&mut rng, link_order_range);
            LinkSpec {
                parent,
                child,
                delay,
                taps,
            }
        })
        .collect();
    let noise_variances = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    let spec = AlnSpec {
        nodes: node_labels(n),
        edges,
        noise_variances,
        noise_shaping: None,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Simulated node outputs; `burn_in` leading samples were discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub series: Vec<TimeSeries>,
    pub burn_in: usize,
    pub seed: u64,
}

impl SimResult {
    pub fn ensemble(&self) -> Result<Ensemble> {
        Ensemble::new(self.series.clone())
    }
}

fn convolve_into(out: &mut [f64], input: &[f64], delay: usize, taps: &[f64]) {
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (p, tap) in taps.iter().enumerate() {
            let lag = delay + p;
            if lag <= t {
                acc += tap * input[t - lag];
            }
        }
        *o += acc;
    }
}

/// Draws independent Gaussian noise per node (one ChaCha stream per node, stream 0 left to the generator) and
/// evaluates the network in topological order.
pub fn simulate(spec: &AlnSpec, length: usize, seed: u64) -> Result<SimResult> {
    spec.validate()?;
    if length < MIN_SIM_LENGTH {
        return Err(Error::InvalidParameter(format!(
            "simulation length must be >= {MIN_SIM_LENGTH}, got {length}"
        )));
    }
    let n = spec.n();
    let burn_in = 4 * spec.max_support();
    let total = length + burn_in;
    let tree = spec.polytree()?;
    let mut x: Vec<Vec<f64>> = vec![Vec::new(); n];
    for j in tree.topological_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64 + 1);
        let sd = spec.noise_variances[j].sqrt();
        let white: Vec<f64> = (0..total)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        let mut out = vec![0.0; total];
        match &spec.noise_shaping {
            Some(s) => convolve_into(&mut out, &white, 0, &s[j]),
            None => out.copy_from_slice(&white),
        }
        for e in spec.edges.iter().filter(|e| e.child == j) {
            convolve_into(&mut out, &x[e.parent], e.delay, &e.taps);
        }
        x[j] = out;
    }
    let series = x
        .into_iter()
        .zip(&spec.nodes)
        .map(|(v, label)| TimeSeries::new(label.clone(), v[burn_in..].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimResult { series, burn_in, seed })
}

/// Total transfer functions `H[a][s]` from noise `s` to node `a`.
pub fn path_transfer_functions(spec: &AlnSpec, grid: FrequencyGrid) -> Result<Vec<Vec<Vec<Complex64>>>> {
    spec.validate()?;
    let n = spec.n();
    let k = grid.len();
    let zero = vec![Complex64::new(0.0, 0.0); k];
    let mut h = vec![vec![zero; n]; n];
    for j in spec.polytree()?.topological_order() {
        h[j][j] = vec![Complex64::new(1.0, 0.0); k];
        for e in spec.edges.iter().filter(|e| e.child == j) {
            let g = e.response(grid);
            for s in 0..n {
                let upstream = h[e.parent][s].clone();
                for ((acc, up), gv) in h[j][s].iter_mut().zip(&upstream).zip(&g) {
                    *acc += gv * up;
                }
            }
        }
    }
    Ok(h)
}

/// Exact spectral matrix of the network outputs on `grid`.
pub fn analytic_spectra(spec: &AlnSpec, grid: FrequencyGrid) -> Result<SpectralMatrix> {
    let h = path_transfer_functions(spec, grid)?;
    SpectralMatrix::from_mixture(spec.nodes.clone(), grid, &h, &spec.noise_spectra(grid))
}

/// A node pair and noise source lacking a common support interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifiabilityViolation {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub passed: bool,
    pub violation_count: usize,
    /// The first violations in `(i, j, k)` order.
    pub violations: Vec<IdentifiabilityViolation>,
}

const REPORTED_VIOLATIONS: usize = 100;
const IDENTIFIABILITY_EPS: f64 = 1e-10;
const SUPPORT_RUN: usize = 3;

/// Pairs whose tree path has no collider, i.e. pairs with a common ancestor
/// or an ancestral relation. Other pairs are uncorrelated by construction.
fn trek_pairs(tree: &Polytree) -> Vec<(usize, usize)> {
    let n = tree.n();
    let skeleton = tree.skeleton();
    let directed = tree.directed_edge_set();
    let mut out = Vec::new();
    for i in 0..n {
        // Walk from i, tracking whether an edge into the current node has been seen.
        let mut stack = vec![(i, usize::MAX, false)];
        while let Some((v, from, entered)) = stack.pop() {
            if v >= i {
                out.push((i, v));
            }
            for w in skeleton.neighbors(v) {
                if w == from {
                    continue;
                }
                let into_w = directed.contains(&(v, w));
                // A step out of v against the arrow after having entered v along one
                // makes v a collider.
                if entered && !into_w {
                    continue;
                }
                stack.push((w, v, into_w));
            }
        }
    }
    out.sort_unstable();
    out
}

/// For every correlated node pair `(i, j)` and noise `k`, requires
/// `|Phi_ij| * phi_k > eps` on at least three consecutive grid points.
pub fn check_identifiability(spec: &AlnSpec, grid: FrequencyGrid) -> Result<IdentifiabilityReport> {
    let s = analytic_spectra(spec, grid)?;
    let noise = spec.noise_spectra(grid);
    let pairs = trek_pairs(&spec.polytree()?);
    let kk = grid.len();
    let max_cross = pairs
        .iter()
        .flat_map(|&(i, j)| s.entry(i, j).iter().map(|v| v.norm()))
        .fold(0.0, f64::max);
    let max_noise = noise.iter().flatten().copied().fold(0.0, f64::max);
    let eps = IDENTIFIABILITY_EPS * max_cross * max_noise;
    let mut violations = Vec::new();
    let mut count = 0;
    for &(i, j) in &pairs {
        let cross = s.entry(i, j);
        for (k, phi) in noise.iter().enumerate() {
            let mut run = 0;
            let mut ok = false;
            // Wrap around so that intervals through w = -pi count.
            for idx in 0..kk + SUPPORT_RUN - 1 {
                let p = idx % kk;
                if cross[p].norm() * phi[p] > eps {
                    run += 1;
                    if run >= SUPPORT_RUN {
                        ok = true;
                        break;
                    }
                } else {
                    run = 0;
                }
            }
            if !ok {
                count += 1;
                if violations.len() < REPORTED_VIOLATIONS {
                    violations.push(IdentifiabilityViolation { i, j, k });
                }
            }
        }
    }
    Ok(IdentifiabilityReport {
        passed: count == 0,
        violation_count: count,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Analytic,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    MstCoherence,
    PolytreeCausal,
    MisoBlanket,
}

/// Outcome of one recovery experiment. Edges are `[a, b]` label pairs;
/// undirected pairs are sorted by node index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub seed: u64,
    pub n: usize,
    pub mode: Mode,
    pub pipeline: Pipeline,
    pub identifiable: bool,
    pub true_edges: Vec<[String; 2]>,
    pub recovered_undirected: Vec<[String; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered_directed: Option<Vec<[String; 2]>>,
    pub precision: f64,
    pub recall: f64,
    /// Share of correctly recovered edges that are also correctly oriented.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction_accuracy: Option<f64>,
    pub ties: usize,
    pub floor_events: usize,
}

fn label_pairs(labels: &[String], pairs: impl IntoIterator<Item = (usize, usize)>) -> Vec<[String; 2]> {
    pairs
        .into_iter()
        .map(|(a, b)| [labels[a].clone(), labels[b].clone()])
        .collect()
}

/// Builds spectra for `spec` (exact or Welch from a simulation), runs one
/// pipeline and scores it against the true topology.
pub fn run_recovery(
    spec: &AlnSpec,
    mode: Mode,
    pipeline: Pipeline,
    length: usize,
    seed: u64,
    welch: &WelchConfig,
) -> Result<RecoveryReport> {
    spec.validate()?;
    let truth = spec.polytree()?;
    let s = match mode {
        Mode::Analytic => analytic_spectra(spec, welch.grid)?,
        Mode::Simulated => spectral_matrix(&simulate(spec, length, seed)?.ensemble()?, welch)?,
    };
    let identifiable = check_identifiability(spec, welch.grid)?.passed;
    let d = distance_matrix(&s);
    let (undirected, directed, ties) = match pipeline {
        Pipeline::MstCoherence => (minimum_spanning_tree(&d)?.edge_set(), None, 0),
        Pipeline::PolytreeCausal => {
            let p = build_polytree(&causal_distance_matrix(&s)?)?;
            (p.skeleton().edge_set(), Some(p.directed_edge_set()), p.tie_count())
        }
        Pipeline::MisoBlanket => (
            miso_blanket_topology(&s, &d, DEFAULT_BLANKET_THRESHOLD)?.edge_set(),
            None,
            0,
        ),
    };
    let true_undirected = truth.skeleton().edge_set();
    let hits = undirected.intersection(&true_undirected).count();
    let precision = if undirected.is_empty() {
        1.0
    } else {
        hits as f64 / undirected.len() as f64
    };
    let recall = hits as f64 / true_undirected.len().max(1) as f64;
    let true_directed = truth.directed_edge_set();
    let direction_accuracy = directed.as_ref().and_then(|dir: &BTreeSet<(usize, usize)>| {
        let matched: Vec<&(usize, usize)> = dir
            .iter()
            .filter(|(p, c)| true_undirected.contains(&(*p.min(c), *p.max(c))))
            .collect();
        (!matched.is_empty())
            .then(|| matched.iter().filter(|e| true_directed.contains(e)).count() as f64 / matched.len() as f64)
    });
    let labels = &spec.nodes;
    Ok(RecoveryReport {
        seed,
        n: spec.n(),
        mode,
        pipeline,
        identifiable,
        true_edges: label_pairs(labels, true_directed.iter().copied()),
        recovered_undirected: label_pairs(labels, undirected),
        recovered_directed: directed.map(|d| label_pairs(labels, d)),
        precision,
        recall,
        direction_accuracy,
        ties,
        floor_events: s.floor_events().iter().sum(),
    })
}
