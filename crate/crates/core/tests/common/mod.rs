//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64;
use polyscope::signal::{FrequencyGrid, SpectralMatrix};
use rand::Rng;

pub fn labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("X{i}")).collect()
}

/// `sum_k taps[k] e^{-jw(offset + k)}` evaluated directly.
pub fn fir(grid: FrequencyGrid, offset: i64, taps: &[f64]) -> Vec<Complex64> {
    grid.omegas()
        .map(|w| {
            taps.iter()
                .enumerate()
                .map(|(k, &t)| Complex64::from_polar(t, -w * (offset + k as i64) as f64))
                .sum()
        })
        .collect()
}

/// Rational spectrum `scale |1 + b e^{-jw}|^2 / |1 - a e^{-jw}|^2`.
pub fn rational_psd<R: Rng>(grid: FrequencyGrid, rng: &mut R) -> Vec<f64> {
    let a: f64 = rng.random_range(-0.7..0.7);
    let b: f64 = rng.random_range(-0.9..0.9);
    let scale: f64 = rng.random_range(0.2..3.0);
    grid.omegas()
        .map(|w| scale * (1.0 + b * b + 2.0 * b * w.cos()) / (1.0 + a * a - 2.0 * a * w.cos()))
        .collect()
}

pub fn random_gain<R: Rng>(grid: FrequencyGrid, rng: &mut R) -> Vec<Complex64> {
    let offset = rng.random_range(-3i64..4);
    let len = rng.random_range(1..5);
    let taps: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    fir(grid, offset, &taps)
}

/// `n` processes driven by `sources` independent rational noises through FIR
/// gains; each process has its own source plus others with probability `p`.
pub fn random_network<R: Rng>(grid: FrequencyGrid, n: usize, sources: usize, p: f64, rng: &mut R) -> SpectralMatrix {
    let psd: Vec<Vec<f64>> = (0..sources).map(|_| rational_psd(grid, rng)).collect();
    let zero = vec![Complex64::new(0.0, 0.0); grid.len()];
    let gains: Vec<Vec<Vec<Complex64>>> = (0..n)
        .map(|i| {
            (0..sources)
                .map(|s| {
                    if s == i % sources || rng.random_bool(p) {
                        random_gain(grid, rng)
                    } else {
                        zero.clone()
                    }
                })
                .collect()
        })
        .collect();
    SpectralMatrix::from_mixture(labels(n), grid, &gains, &psd).unwrap()
}

/// Roots of `c[0] z^q + c[1] z^{q-1} + ... + c[q]` from the companion matrix.
pub fn polynomial_roots(c: &[f64]) -> Vec<Complex64> {
    let q = c.len() - 1;
    if q == 0 {
        return Vec::new();
    }
    let mut m = DMatrix::<f64>::zeros(q, q);
    for k in 0..q {
        m[(0, k)] = -c[k + 1] / c[0];
    }
    for k in 1..q {
        m[(k, k - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Expands `lead * prod (1 - r z^-1)` into real coefficients of `z^-k`.
fn expand(lead: f64, roots: &[Complex64]) -> Vec<f64> {
    let mut poly = vec![Complex64::new(lead, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (k, &p) in poly.iter().enumerate() {
            next[k] += p;
            next[k + 1] -= p * r;
        }
        poly = next;
    }
    poly.iter().map(|c| c.re).collect()
}

/// Minimum-phase MA factor of `|B(e^{-jw})|^2` with `B(z) = sum b[k] z^-k`, by
/// reflecting the zeros outside the unit circle. The leading tap is positive.
pub fn minimum_phase_oracle(b: &[f64]) -> Vec<f64> {
    let mut lead = b[0].abs();
    let roots: Vec<Complex64> = polynomial_roots(b)
        .into_iter()
        .map(|r| {
            if r.norm() > 1.0 {
                lead *= r.norm();
                1.0 / r.conj()
            } else {
                r
            }
        })
        .collect();
    expand(lead, &roots)
}

/// Random real MA polynomial of order `q` with zeros at radii in
/// `[0.2, 0.85]`, some reflected outside the unit circle.
pub fn random_ma<R: Rng>(q: usize, rng: &mut R) -> Vec<f64> {
    let mut roots = Vec::new();
    while roots.len() < q {
        let mut radius = rng.random_range(0.2..0.85);
        if rng.random_bool(0.5) {
            radius = 1.0 / radius;
        }
        if q - roots.len() >= 2 && rng.random_bool(0.6) {
            let angle = rng.random_range(0.1..std::f64::consts::PI - 0.1);
            let r = Complex64::from_polar(radius, angle);
            roots.push(r);
            roots.push(r.conj());
        } else {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            roots.push(Complex64::new(sign * radius, 0.0));
        }
    }
    let lead = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    expand(lead, &roots)
}

/// Minimum spanning tree by enumerating every `(n-1)`-edge subset.
pub fn brute_force_mst(w: &[Vec<f64>]) -> BTreeSet<(usize, usize)> {
    let n = w.len();
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut best: Option<(f64, BTreeSet<(usize, usize)>)> = None;
    let k = n - 1;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let chosen: Vec<(usize, usize)> = idx.iter().map(|&i| edges[i]).collect();
        if spans(n, &chosen) {
            let total: f64 = chosen.iter().map(|&(a, b)| w[a][b]).sum();
            if best.as_ref().is_none_or(|(t, _)| total < *t) {
                best = Some((total, chosen.into_iter().collect()));
            }
        }
        // Next combination in lexicographic order.
        let mut p = k;
        while p > 0 && idx[p - 1] == edges.len() - k + p - 1 {
            p -= 1;
        }
        if p == 0 {
            break;
        }
        idx[p - 1] += 1;
        for q in p..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
    best.map(|(_, e)| e).unwrap_or_default()
}

fn spans(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    true
}
