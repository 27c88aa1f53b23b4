//! Time-series containers, seasonal detrending and Welch spectral estimation.
//!
//! Spectra follow the convention `Phi_xy(w) = sum_tau R_xy(tau) e^{-j w tau}` with
//! `R_xy(tau) = E[x(t) y(t + tau)]`. If `y = H x` then `Phi_xy = H Phi_x`, and the
//! first argument is the conjugated one: `Phi_xy = conj(Phi_yx)`.
//!
//! All spectra live on a shared [`FrequencyGrid`] of `K` points
//! `w_k = -pi + 2 pi k / K`. Integrals over `[-pi, pi]` normalized by `1/(2 pi)`
//! reduce to plain grid means.

use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// Default number of grid points.
pub const DEFAULT_GRID_SIZE: usize = 1024;

/// Relative floor applied to auto-spectra before any division.
pub const SPECTRAL_FLOOR: f64 = 1e-12;

/// Uniform frequency grid on `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrequencyGrid {
    size: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            size: DEFAULT_GRID_SIZE,
        }
    }
}

impl FrequencyGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size < 8 || size % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "grid size must be even and >= 8, got {size}"
            )));
        }
        Ok(Self { size })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn omega(&self, k: usize) -> f64 {
        -PI + 2.0 * PI * k as f64 / self.size as f64
    }

    pub fn omegas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).map(move |k| self.omega(k))
    }

    /// Grid index of `-w_k`.
    pub fn mirror(&self, k: usize) -> usize {
        (self.size - k) % self.size
    }

    /// DFT bin holding grid point `k`.
    pub(crate) fn fft_bin(&self, k: usize) -> usize {
        (k + self.size / 2) % self.size
    }

    /// `(1/2pi) * sum_k f(w_k) * (2pi/K)`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.size);
        values.iter().sum::<f64>() / self.size as f64
    }

    pub fn integrate_complex(&self, values: &[Complex64]) -> Complex64 {
        debug_assert_eq!(values.len(), self.size);
        values.iter().sum::<Complex64>() / self.size as f64
    }

    pub(crate) fn to_fft_order(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.size];
        for (k, v) in values.iter().enumerate() {
            out[self.fft_bin(k)] = *v;
        }
        out
    }

    pub(crate) fn from_fft_order(&self, values: &[Complex64]) -> Vec<Complex64> {
        (0..self.size).map(|k| values[self.fft_bin(k)]).collect()
    }

    /// Exact samples of the DTFT of a finite impulse response whose first tap sits
    /// at time index `offset`.
    pub fn fir_response(&self, offset: isize, taps: &[f64]) -> Vec<Complex64> {
        let k = self.size as isize;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (n, &t) in taps.iter().enumerate() {
            let idx = (offset + n as isize).rem_euclid(k) as usize;
            buf[idx].re += t;
        }
        fft::forward(&mut buf);
        self.from_fft_order(&buf)
    }

    /// Constant response.
    pub fn constant(&self, value: Complex64) -> Vec<Complex64> {
        vec![value; self.size]
    }
}

/// A labeled real-valued series sampled at unit rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    label: String,
    samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(label: impl Into<String>, samples: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if samples.is_empty() {
            return Err(Error::InsufficientData {
                label,
                reason: "series is empty".into(),
            });
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "series '{label}' has a non-finite sample at index {pos}"
            )));
        }
        Ok(Self { label, samples })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    /// Population variance (divides by `len`).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.len() as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// `N >= 2` aligned series with unique labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    series: Vec<TimeSeries>,
}

impl Ensemble {
    pub fn new(series: Vec<TimeSeries>) -> Result<Self> {
        if series.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "an ensemble needs at least 2 series, got {}",
                series.len()
            )));
        }
        let len = series[0].len();
        let mut seen = HashSet::new();
        for s in &series {
            if s.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "series '{}' has length {} but '{}' has length {}",
                    s.label(),
                    s.len(),
                    series[0].label(),
                    len
                )));
            }
            if !seen.insert(s.label().to_string()) {
                return Err(Error::InvalidInput(format!("duplicate label '{}'", s.label())));
            }
        }
        Ok(Self { series })
    }

    /// Number of samples per series.
    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn series(&self) -> &[TimeSeries] {
        &self.series
    }

    pub fn get(&self, i: usize) -> &TimeSeries {
        &self.series[i]
    }

    pub fn labels(&self) -> Vec<String> {
        self.series.iter().map(|s| s.label().to_string()).collect()
    }

    /// Sub-ensemble of samples `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::InsufficientData {
                label: self.series[0].label().to_string(),
                reason: format!("window {start}..{} exceeds length {}", start + len, self.len()),
            });
        }
        let series = self
            .series
            .iter()
            .map(|s| TimeSeries::new(s.label(), s.samples()[start..start + len].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(series)
    }
}

/// Complex spectrum sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: FrequencyGrid,
    values: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "spectrum has {} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Real non-negative spectrum.
    pub fn from_real(grid: FrequencyGrid, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// `(1/2pi) * integral`, i.e. the lag-zero covariance.
    pub fn integral(&self) -> Complex64 {
        self.grid.integrate_complex(&self.values)
    }
}

/// Hermitian matrix of (cross-)power spectral densities.
#[derive(Debug, Clone)]
pub struct SpectralMatrix {
    labels: Vec<String>,
    grid: FrequencyGrid,
    data: Vec<Complex64>,
    auto: Vec<Vec<f64>>,
    floor: f64,
    floor_events: Vec<usize>,
}

impl SpectralMatrix {
    /// Builds the matrix from a function evaluated on `i <= j` only; the lower
    /// triangle is the exact conjugate and the diagonal is forced real.
    pub fn from_upper<F>(labels: Vec<String>, grid: FrequencyGrid, entry: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Vec<Complex64> + Sync,
    {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidInput("spectral matrix needs at least one series".into()));
        }
        let k = grid.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let computed: Vec<Vec<Complex64>> = pairs.par_iter().map(|&(i, j)| entry(i, j)).collect();
        let mut data = vec![Complex64::new(0.0, 0.0); n * n * k];
        for (&(i, j), values) in pairs.iter().zip(computed) {
            if values.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "entry ({i},{j}) has {} values for a grid of {k}",
                    values.len()
                )));
            }
            let base = (i * n + j) * k;
            let mirror = (j * n + i) * k;
            for (idx, v) in values.iter().enumerate() {
                if i == j {
                    data[base + idx] = Complex64::new(v.re, 0.0);
                } else {
                    data[base + idx] = *v;
                    data[mirror + idx] = v.conj();
                }
            }
        }
        Self::finish(labels, grid, data)
    }

    /// Spectra of processes `x_p = sum_s gains[p][s] e_s` driven by uncorrelated
    /// sources with power spectra `source_psd[s]`:
    /// `Phi_ab = sum_s conj(gains[a][s]) gains[b][s] psd[s]`.
    pub fn from_mixture(
        labels: Vec<String>,
        grid: FrequencyGrid,
        gains: &[Vec<Vec<Complex64>>],
        source_psd: &[Vec<f64>],
    ) -> Result<Self> {
        let n = labels.len();
        if gains.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} gain rows for {n} processes",
                gains.len()
            )));
        }
        let sources = source_psd.len();
        for (p, row) in gains.iter().enumerate() {
            if row.len() != sources {
                return Err(Error::ShapeMismatch(format!(
                    "process {p} has {} gains for {sources} sources",
                    row.len()
                )));
            }
            if row.iter().any(|g| g.len() != grid.len()) {
                return Err(Error::ShapeMismatch(format!("process {p} gain off-grid")));
            }
        }
        if let Some(s) = source_psd
            .iter()
            .position(|psd| psd.len() != grid.len() || psd.iter().any(|v| *v < 0.0 || !v.is_finite()))
        {
            return Err(Error::InvalidSpectrum(format!(
                "source {s} power spectrum is off-grid, negative or non-finite"
            )));
        }
        Self::from_upper(labels, grid, |a, b| {
            (0..grid.len())
                .map(|k| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for s in 0..sources {
                        acc += gains[a][s][k].conj() * gains[b][s][k] * source_psd[s][k];
                    }
                    acc
                })
                .collect()
        })
    }

    fn finish(labels: Vec<String>, grid: FrequencyGrid, data: Vec<Complex64>) -> Result<Self> {
        let n = labels.len();
        let k = grid.len();
        let mut max_diag = 0.0f64;
        for i in 0..n {
            let base = (i * n + i) * k;
            for v in &data[base..base + k] {
                if !(v.re >= 0.0) {
                    return Err(Error::InvalidSpectrum(format!(
                        "auto-spectrum of '{}' is negative or non-finite",
                        labels[i]
                    )));
                }
                max_diag = max_diag.max(v.re);
            }
        }
        let floor = (SPECTRAL_FLOOR * max_diag).max(f64::MIN_POSITIVE);
        let mut floor_events = vec![0usize; n];
        let auto = (0..n)
            .map(|i| {
                let base = (i * n + i) * k;
                data[base..base + k]
                    .iter()
                    .map(|v| {
                        if v.re < floor {
                            floor_events[i] += 1;
                            floor
                        } else {
                            v.re
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            labels,
            grid,
            data,
            auto,
            floor,
            floor_events,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    /// `Phi_ij` on the grid.
    pub fn entry(&self, i: usize, j: usize) -> &[Complex64] {
        let n = self.n();
        let k = self.grid.len();
        let base = (i * n + j) * k;
        &self.data[base..base + k]
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.entry(i, j)[k]
    }

    pub fn spectrum(&self, i: usize, j: usize) -> Spectrum {
        Spectrum {
            grid: self.grid,
            values: self.entry(i, j).to_vec(),
        }
    }

    /// Floored auto-spectrum of series `i`.
    pub fn auto(&self, i: usize) -> &[f64] {
        &self.auto[i]
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Number of grid points at which each auto-spectrum was floored.
    pub fn floor_events(&self) -> &[usize] {
        &self.floor_events
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::UnknownNode(format!(
                "index {i} out of range for {} series",
                self.n()
            )));
        }
        Ok(())
    }

    /// Matrix restricted to `indices` (in the given order).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            self.check_index(i)?;
        }
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        Self::from_upper(labels, self.grid, |a, b| self.entry(indices[a], indices[b]).to_vec())
    }
}

/// Coherence values in `[0, 1]` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceCurve {
    grid: FrequencyGrid,
    values: Vec<f64>,
}

impl CoherenceCurve {
    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.grid.integrate(&self.values)
    }
}

/// Welch estimator settings. The segment length equals the grid size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub grid: FrequencyGrid,
    /// Minimum number of averaged segments; all segments that fit are used.
    pub segments: usize,
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            grid: FrequencyGrid::default(),
            segments: 8,
            overlap: 0.5,
        }
    }
}

impl WelchConfig {
    pub fn new(grid: FrequencyGrid, segments: usize, overlap: f64) -> Result<Self> {
        let cfg = Self {
            grid,
            segments,
            overlap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::InvalidParameter("segments must be >= 1".into()));
        }
        if !(0.0..=0.9).contains(&self.overlap) {
            return Err(Error::InvalidParameter(format!(
                "overlap must lie in [0, 0.9], got {}",
                self.overlap
            )));
        }
        Ok(())
    }

    pub fn segment_length(&self) -> usize {
        self.grid.len()
    }

    pub fn hop(&self) -> usize {
        let l = self.segment_length() as f64;
        ((l * (1.0 - self.overlap)).round() as usize).max(1)
    }

    /// Smallest series length that yields the required number of segments.
    pub fn min_length(&self) -> usize {
        self.segment_length() + (self.segments - 1) * self.hop()
    }

    fn segment_count(&self, label: &str, len: usize) -> Result<usize> {
        self.validate()?;
        let l = self.segment_length();
        if len < l {
            return Err(Error::InsufficientData {
                label: label.to_string(),
                reason: format!("length {len} is shorter than one segment ({l})"),
            });
        }
        let count = (len - l) / self.hop() + 1;
        if count < self.segments {
            return Err(Error::InsufficientData {
                label: label.to_string(),
                reason: format!(
                    "length {len} gives {count} segments, {} required (need {} samples)",
                    self.segments,
                    self.min_length()
                ),
            });
        }
        Ok(count)
    }
}

fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Windowed DFTs of every Welch segment, in grid order.
struct SegmentSpectra {
    segments: Vec<Vec<Complex64>>,
    window_energy: f64,
}

fn segment_spectra(x: &TimeSeries, cfg: &WelchConfig) -> Result<SegmentSpectra> {
    let count = cfg.segment_count(x.label(), x.len())?;
    let l = cfg.segment_length();
    let hop = cfg.hop();
    let window = hann(l);
    let window_energy: f64 = window.iter().map(|w| w * w).sum();
    let mean = x.mean();
    let samples = x.samples();
    let segments = (0..count)
        .map(|s| {
            let start = s * hop;
            let mut buf: Vec<Complex64> = samples[start..start + l]
                .iter()
                .zip(&window)
                .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
                .collect();
            fft::forward(&mut buf);
            cfg.grid.from_fft_order(&buf)
        })
        .collect();
    Ok(SegmentSpectra {
        segments,
        window_energy,
    })
}

fn average_cross(a: &SegmentSpectra, b: &SegmentSpectra, k: usize) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); k];
    for (sa, sb) in a.segments.iter().zip(&b.segments) {
        for ((o, xa), xb) in acc.iter_mut().zip(sa).zip(sb) {
            *o += xa.conj() * xb;
        }
    }
    let scale = 1.0 / (a.segments.len() as f64 * a.window_energy);
    acc.iter_mut().for_each(|v| *v *= scale);
    acc
}

/// Seasonal-trend removal by a centered moving mean with zero padding.
///
/// `S(n) = (1/w) sum_{i=-h}^{w-h-1} y(n+i)` with `h = floor(w/2)` and `y = 0` outside
/// the record; returns `y - S`. The within-window periodic component is kept.
pub fn detrend_seasonal(y: &TimeSeries, window: usize) -> Result<TimeSeries> {
    if window < 2 {
        return Err(Error::InvalidParameter(format!(
            "detrend window must be >= 2, got {window}"
        )));
    }
    let samples = y.samples();
    let n = samples.len() as isize;
    let half = (window / 2) as isize;
    let upper = window as isize - half - 1;
    let inv = 1.0 / window as f64;
    let out = (0..n)
        .map(|t| {
            let lo = (t - half).max(0);
            let hi = (t + upper).min(n - 1);
            let sum: f64 = if lo <= hi {
                samples[lo as usize..=hi as usize].iter().sum()
            } else {
                0.0
            };
            samples[t as usize] - sum * inv
        })
        .collect();
    TimeSeries::new(y.label(), out)
}

/// Averaged windowed cross-periodogram estimate of `Phi_xy`.
///
/// Each series is mean-subtracted first. Scaling is such that the grid mean of
/// `Phi_xx` equals the windowed sample variance.
pub fn welch_cross_spectrum(x: &TimeSeries, y: &TimeSeries, cfg: &WelchConfig) -> Result<Spectrum> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "'{}' has length {} but '{}' has length {}",
            x.label(),
            x.len(),
            y.label(),
            y.len()
        )));
    }
    let sx = segment_spectra(x, cfg)?;
    let values = if x == y {
        average_cross(&sx, &sx, cfg.grid.len())
    } else {
        let sy = segment_spectra(y, cfg)?;
        average_cross(&sx, &sy, cfg.grid.len())
    };
    Spectrum::new(cfg.grid, values)
}

/// Welch estimates of every `Phi_ij` of the ensemble.
pub fn spectral_matrix(ens: &Ensemble, cfg: &WelchConfig) -> Result<SpectralMatrix> {
    let per_series = ens
        .series()
        .par_iter()
        .map(|s| segment_spectra(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let k = cfg.grid.len();
    SpectralMatrix::from_upper(ens.labels(), cfg.grid, |i, j| {
        average_cross(&per_series[i], &per_series[j], k)
    })
}

pub(crate) fn coherence_unclamped(s: &SpectralMatrix, i: usize, j: usize) -> Vec<f64> {
    let (ai, aj) = (s.auto(i), s.auto(j));
    s.entry(j, i)
        .iter()
        .zip(ai.iter().zip(aj))
        .map(|(c, (pi, pj))| c.norm_sqr() / (pi * pj))
        .collect()
}

/// `C_ij(w) = |Phi_ji|^2 / (Phi_i Phi_j)`, clamped to `[0, 1]`.
pub fn coherence_function(s: &SpectralMatrix, i: usize, j: usize) -> Result<CoherenceCurve> {
    s.check_index(i)?;
    s.check_index(j)?;
    let values = if i == j {
        vec![1.0; s.grid().len()]
    } else {
        coherence_unclamped(s, i, j)
            .into_iter()
            .map(|c| c.clamp(0.0, 1.0))
            .collect()
    };
    Ok(CoherenceCurve {
        grid: s.grid(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(label: &str, len: usize, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        TimeSeries::new(label, v).unwrap()
    }

    fn grid(k: usize) -> FrequencyGrid {
        FrequencyGrid::new(k).unwrap()
    }

    #[test]
    fn grid_rejects_odd_or_small() {
        assert!(FrequencyGrid::new(7).is_err());
        assert!(FrequencyGrid::new(6).is_err());
        assert!(FrequencyGrid::new(9).is_err());
        let g = grid(8);
        assert_eq!(g.omega(0), -PI);
        assert_eq!(g.mirror(0), 0);
        assert_eq!(g.mirror(1), 7);
        assert!((g.omega(4)).abs() < 1e-15);
    }

    #[test]
    fn fir_response_matches_direct_sum() {
        let g = grid(16);
        let taps = [0.3, -1.2, 0.7];
        let resp = g.fir_response(-1, &taps);
        for (k, w) in g.omegas().enumerate() {
            let direct: Complex64 = taps
                .iter()
                .enumerate()
                .map(|(n, t)| Complex64::from_polar(*t, -w * (n as f64 - 1.0)))
                .sum();
            assert!((resp[k] - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn timeseries_validation() {
        assert!(TimeSeries::new("a", vec![]).is_err());
        assert!(TimeSeries::new("a", vec![1.0, f64::NAN]).is_err());
        let a = TimeSeries::new("a", vec![1.0, 2.0]).unwrap();
        let b = TimeSeries::new("a", vec![1.0, 2.0]).unwrap();
        let c = TimeSeries::new("c", vec![1.0]).unwrap();
        assert!(Ensemble::new(vec![a.clone()]).is_err());
        assert!(Ensemble::new(vec![a.clone(), b]).is_err());
        assert!(Ensemble::new(vec![a, c]).is_err());
    }

    #[test]
    fn detrend_constant_interior_is_zero() {
        let y = TimeSeries::new("y", vec![3.5; 100]).unwrap();
        let x = detrend_seasonal(&y, 24).unwrap();
        assert!(x.samples()[50].abs() < 1e-12);
    }

    #[test]
    fn detrend_constant_near_start() {
        // offsets -12..=11 around index 1: in-range indices 0..=12 -> 13 terms
        let c = 2.0;
        let y = TimeSeries::new("y", vec![c; 100]).unwrap();
        let x = detrend_seasonal(&y, 24).unwrap();
        assert!((x.samples()[1] - (c - 13.0 / 24.0 * c)).abs() < 1e-12);
    }

    #[test]
    fn detrend_removes_nothing_from_full_period_sinusoid() {
        let y: Vec<f64> = (0..200).map(|n| (2.0 * PI * n as f64 / 24.0 + 0.3).sin()).collect();
        let y = TimeSeries::new("y", y).unwrap();
        let x = detrend_seasonal(&y, 24).unwrap();
        for t in [30, 77, 150] {
            assert!((x.samples()[t] - y.samples()[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn detrend_rejects_small_window() {
        let y = TimeSeries::new("y", vec![1.0; 4]).unwrap();
        assert!(matches!(detrend_seasonal(&y, 1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn detrend_is_linear() {
        let y1 = white("a", 500, 1);
        let y2 = white("a", 500, 2);
        let (a, b) = (1.7, -0.4);
        let combo: Vec<f64> = y1
            .samples()
            .iter()
            .zip(y2.samples())
            .map(|(u, v)| a * u + b * v)
            .collect();
        let lhs = detrend_seasonal(&TimeSeries::new("a", combo).unwrap(), 24).unwrap();
        let d1 = detrend_seasonal(&y1, 24).unwrap();
        let d2 = detrend_seasonal(&y2, 24).unwrap();
        for t in 0..500 {
            let rhs = a * d1.samples()[t] + b * d2.samples()[t];
            assert!((lhs.samples()[t] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn welch_white_noise_is_flat() {
        let cfg = WelchConfig::new(grid(64), 8, 0.5).unwrap();
        let mut means = Vec::new();
        for seed in 0..10 {
            let x = white("x", 64 * 200, seed);
            let s = welch_cross_spectrum(&x, &x, &cfg).unwrap();
            assert!(s.values().iter().all(|v| v.im == 0.0 && v.re >= 0.0));
            means.push(s.values().iter().map(|v| v.re).sum::<f64>() / 64.0);
        }
        let m = means.iter().sum::<f64>() / means.len() as f64;
        assert!((m - 1.0).abs() < 0.05, "mean level {m}");
    }

    #[test]
    fn welch_auto_spectrum_integrates_to_variance() {
        let cfg = WelchConfig::new(grid(128), 1, 0.5).unwrap();
        let x = white("x", 128 * 64, 9);
        let s = welch_cross_spectrum(&x, &x, &cfg).unwrap();
        let var = s.integral().re;
        assert!((var - x.variance()).abs() / x.variance() < 0.05);
    }

    #[test]
    fn welch_identical_series_have_unit_coherence() {
        let cfg = WelchConfig::new(grid(64), 8, 0.5).unwrap();
        let x = white("x", cfg.min_length() * 2, 3);
        let y = TimeSeries::new("y", x.samples().to_vec()).unwrap();
        let ens = Ensemble::new(vec![x, y]).unwrap();
        let s = spectral_matrix(&ens, &cfg).unwrap();
        assert_eq!(s.entry(0, 1), s.entry(0, 0));
        let c = coherence_function(&s, 0, 1).unwrap();
        assert!(c.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn welch_independent_coherence_bias() {
        let cfg = WelchConfig::new(grid(64), 8, 0.5).unwrap();
        let len = cfg.min_length();
        let mut total = 0.0;
        for seed in 0..20 {
            let x = white("x", len, 100 + seed);
            let y = white("y", len, 200 + seed);
            let s = spectral_matrix(&Ensemble::new(vec![x, y]).unwrap(), &cfg).unwrap();
            total += coherence_function(&s, 0, 1).unwrap().mean();
        }
        let mean = total / 20.0;
        // Hann 50% overlap correlates neighboring segments, pushing the bias above 1/8.
        assert!((mean - 0.125).abs() < 0.5 * 0.125, "mean coherence {mean}");
    }

    #[test]
    fn welch_rejects_short_series() {
        let cfg = WelchConfig::new(grid(64), 8, 0.5).unwrap();
        let x = white("x", 63, 1);
        assert!(matches!(
            welch_cross_spectrum(&x, &x, &cfg),
            Err(Error::InsufficientData { .. })
        ));
        let x = white("x", cfg.min_length() - 1, 1);
        assert!(matches!(
            welch_cross_spectrum(&x, &x, &cfg),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn spectral_matrix_is_hermitian_and_independent_is_small() {
        let cfg = WelchConfig::new(grid(64), 8, 0.5).unwrap();
        let len = cfg.min_length();
        let ens = Ensemble::new(vec![white("a", len, 1), white("b", len, 2), white("c", len, 3)]).unwrap();
        let s = spectral_matrix(&ens, &cfg).unwrap();
        let mut ratio = 0.0;
        let mut count = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..64 {
                    assert_eq!(s.at(i, j, k), s.at(j, i, k).conj());
                    if i != j {
                        ratio += s.at(i, j, k).norm_sqr() / (s.auto(i)[k] * s.auto(j)[k]);
                        count += 1.0;
                    }
                }
            }
        }
        assert!(ratio / count < 0.2);
    }

    #[test]
    fn analytic_coherence_cases() {
        let g = grid(64);
        let one = vec![1.0; 64];
        let unit = g.constant(Complex64::new(1.0, 0.0));
        let zero = g.constant(Complex64::new(0.0, 0.0));
        // y = x + v
        let s = SpectralMatrix::from_mixture(
            vec!["x".into(), "y".into()],
            g,
            &[vec![unit.clone(), zero.clone()], vec![unit.clone(), unit.clone()]],
            &[one.clone(), one.clone()],
        )
        .unwrap();
        let c = coherence_function(&s, 1, 0).unwrap();
        assert!(c.values().iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(coherence_function(&s, 0, 0).unwrap().values().iter().all(|&v| v == 1.0));

        // y = h x noiseless, with h an MA filter
        let h = g.fir_response(0, &[1.0, -0.6, 0.2]);
        let s = SpectralMatrix::from_mixture(
            vec!["x".into(), "y".into()],
            g,
            &[vec![unit.clone()], vec![h]],
            &[one.clone()],
        )
        .unwrap();
        let c = coherence_function(&s, 0, 1).unwrap();
        assert!(c.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn coherence_is_symmetric_exactly() {
        let cfg = WelchConfig::new(grid(32), 4, 0.5).unwrap();
        let len = cfg.min_length() + 17;
        let ens = Ensemble::new(vec![white("a", len, 5), white("b", len, 6)]).unwrap();
        let s = spectral_matrix(&ens, &cfg).unwrap();
        let a = coherence_function(&s, 0, 1).unwrap();
        let b = coherence_function(&s, 1, 0).unwrap();
        assert_eq!(a, b);
        for v in coherence_unclamped(&s, 0, 1) {
            assert!(v <= 1.0 + 1e-6 && v >= 0.0);
        }
    }

    #[test]
    fn parseval_on_analytic_spectrum() {
        // MA(2): x = (1 + 0.5 z^-1 - 0.3 z^-2) e, unit e => Var = 1 + 0.25 + 0.09
        let g = grid(1024);
        let h = g.fir_response(0, &[1.0, 0.5, -0.3]);
        let psd: Vec<f64> = h.iter().map(|v| v.norm_sqr()).collect();
        let var = g.integrate(&psd);
        assert!((var - 1.34).abs() / 1.34 < 1e-6);
    }

    #[test]
    fn floor_is_recorded() {
        let g = grid(8);
        let psd = vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0];
        let unit = g.constant(Complex64::new(1.0, 0.0));
        let s = SpectralMatrix::from_mixture(
            vec!["a".into(), "b".into()],
            g,
            &[vec![unit.clone(), g.constant(Complex64::new(0.0, 0.0))], vec![g.constant(Complex64::new(0.0, 0.0)), unit]],
            &[psd, vec![1.0; 8]],
        )
        .unwrap();
        assert_eq!(s.floor_events(), &[2, 0]);
        assert!((s.floor() - 2e-12).abs() < 1e-24);
        assert!(s.auto(0).iter().all(|&v| v > 0.0));
    }
}
