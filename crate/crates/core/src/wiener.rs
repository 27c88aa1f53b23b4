//! Non-causal, causal and multi-input Wiener filters on the frequency grid.
//!
//! Filters are stored by their frequency response; an impulse response is attached
//! by inverse DFT over a finite window. The orientation convention is that of
//! [`crate::signal`]: for `y = H x` the filter returned for target `y` and input `x`
//! is `H` itself.

use std::borrow::Cow;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::{FrequencyGrid, SpectralMatrix, Spectrum, TimeSeries, SPECTRAL_FLOOR};

/// Energy fraction beyond the impulse window above which a truncation warning is due.
pub const TRUNCATION_WARNING: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Finite impulse response; `taps[n]` is the coefficient of `z^-(offset + n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub offset: isize,
    pub taps: Vec<f64>,
}

impl ImpulseResponse {
    pub fn last_index(&self) -> isize {
        self.offset + self.taps.len() as isize - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    grid: FrequencyGrid,
    response: Vec<Complex64>,
    impulse: Option<ImpulseResponse>,
    truncation: f64,
}

impl TransferFunction {
    /// FIR filter; the response is the exact DTFT of the taps.
    pub fn from_taps(grid: FrequencyGrid, offset: isize, taps: Vec<f64>) -> Self {
        let response = grid.fir_response(offset, &taps);
        Self {
            grid,
            response,
            impulse: Some(ImpulseResponse { offset, taps }),
            truncation: 0.0,
        }
    }

    pub fn from_response(grid: FrequencyGrid, response: Vec<Complex64>) -> Result<Self> {
        if response.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} response values for a grid of {}",
                response.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            response,
            impulse: None,
            truncation: 0.0,
        })
    }

    pub fn zero(grid: FrequencyGrid) -> Self {
        Self::from_taps(grid, 0, Vec::new())
    }

    /// Attaches the impulse response restricted to time indices
    /// `offset..offset + len`, computed by inverse DFT of the response.
    pub fn with_impulse_window(mut self, offset: isize, len: usize) -> Self {
        let k = self.grid.len();
        let mut buf = self.grid.to_fft_order(&self.response);
        fft::inverse(&mut buf);
        let total: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        let len = len.min(k);
        let taps: Vec<f64> = (0..len)
            .map(|n| buf[(offset + n as isize).rem_euclid(k as isize) as usize].re)
            .collect();
        let kept: f64 = taps.iter().map(|t| t * t).sum();
        self.truncation = if total > 0.0 {
            (1.0 - kept / total).max(0.0)
        } else {
            0.0
        };
        self.impulse = Some(ImpulseResponse { offset, taps });
        self
    }

    /// Default window for two-sided filters: `[-K/4, K/4)`.
    pub fn with_centered_impulse(self) -> Self {
        let k = self.grid.len();
        self.with_impulse_window(-((k / 4) as isize), k / 2)
    }

    /// Default window for causal filters: `[0, K/2)`.
    pub fn with_causal_impulse(self) -> Self {
        let k = self.grid.len();
        self.with_impulse_window(0, k / 2)
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    pub fn response(&self) -> &[Complex64] {
        &self.response
    }

    pub fn impulse(&self) -> Option<&ImpulseResponse> {
        self.impulse.as_ref()
    }

    /// Fraction of impulse-response energy outside the attached window.
    pub fn truncation_fraction(&self) -> f64 {
        self.truncation
    }

    pub fn is_causal(&self) -> bool {
        self.impulse.as_ref().is_some_and(|h| h.offset >= 0)
    }

    /// Root-mean-square magnitude of the response over the grid.
    pub fn rms(&self) -> f64 {
        let sq: Vec<f64> = self.response.iter().map(|v| v.norm_sqr()).collect();
        self.grid.integrate(&sq).sqrt()
    }
}

/// Optimal filters for one target plus the minimized cost.
#[derive(Debug, Clone)]
pub struct WienerSolution {
    pub target: usize,
    pub inputs: Vec<usize>,
    pub filters: Vec<TransferFunction>,
    pub cost: f64,
    pub residual_spectrum: Spectrum,
}

impl WienerSolution {
    pub fn filter_for(&self, input: usize) -> Option<&TransferFunction> {
        self.inputs.iter().position(|&i| i == input).map(|p| &self.filters[p])
    }
}

fn check_problem(s: &SpectralMatrix, target: usize, inputs: &[usize]) -> Result<()> {
    s.check_index(target)?;
    if inputs.is_empty() {
        return Err(Error::InvalidParameter("input set is empty".into()));
    }
    for (p, &i) in inputs.iter().enumerate() {
        s.check_index(i)?;
        if i == target {
            return Err(Error::InvalidParameter(format!(
                "target {target} cannot be its own input"
            )));
        }
        if inputs[..p].contains(&i) {
            return Err(Error::InvalidParameter(format!("input {i} listed twice")));
        }
    }
    Ok(())
}

/// Input spectral matrix at grid point `k` with floored diagonal.
fn input_block(s: &SpectralMatrix, inputs: &[usize], k: usize) -> DMatrix<Complex64> {
    let m = inputs.len();
    DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            Complex64::new(s.auto(inputs[a])[k], 0.0)
        } else {
            s.at(inputs[a], inputs[b], k)
        }
    })
}

/// Per-frequency solution of `Phi_xx W = Phi_xy` for inputs `x` and target `y`.
pub(crate) fn solve_normal_equations(
    s: &SpectralMatrix,
    target: usize,
    inputs: &[usize],
) -> Result<Vec<Vec<Complex64>>> {
    let grid = s.grid();
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let a = input_block(s, inputs, k);
            let max_diag = (0..inputs.len()).map(|d| a[(d, d)].re).fold(0.0, f64::max);
            let b = nalgebra::DVector::from_fn(inputs.len(), |r, _| s.at(inputs[r], target, k));
            let chol = a
                .cholesky()
                .ok_or(Error::IllConditioned {
                    index: k,
                    omega: grid.omega(k),
                })?;
            let l = chol.l_dirty();
            let min_pivot = (0..inputs.len()).map(|d| l[(d, d)].norm_sqr()).fold(f64::INFINITY, f64::min);
            if min_pivot < 1e-12 * max_diag {
                return Err(Error::IllConditioned {
                    index: k,
                    omega: grid.omega(k),
                });
            }
            Ok(chol.solve(&b).iter().copied().collect())
        })
        .collect()
}

/// MISO Wiener filter of `target` from `inputs`: `W(w) = Phi_x(w)^-1 Phi_xy(w)`.
///
/// The cost is the unweighted error variance `(1/2pi) int Phi_e`.
pub fn noncausal_wiener(s: &SpectralMatrix, target: usize, inputs: &[usize]) -> Result<WienerSolution> {
    check_problem(s, target, inputs)?;
    let grid = s.grid();
    let per_freq = solve_normal_equations(s, target, inputs)?;
    let auto = s.auto(target);
    let residual: Vec<f64> = per_freq
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let explained: f64 = w
                .iter()
                .zip(inputs)
                .map(|(wa, &a)| (s.at(a, target, k).conj() * wa).re)
                .sum();
            (auto[k] - explained).max(0.0)
        })
        .collect();
    let filters = (0..inputs.len())
        .map(|a| {
            let response = per_freq.iter().map(|w| w[a]).collect();
            TransferFunction::from_response(grid, response).map(TransferFunction::with_centered_impulse)
        })
        .collect::<Result<Vec<_>>>()?;
    let cost = grid.integrate(&residual);
    Ok(WienerSolution {
        target,
        inputs: inputs.to_vec(),
        filters,
        cost,
        residual_spectrum: Spectrum::from_real(grid, &residual)?,
    })
}

fn factor_values(phi: &[f64], grid: FrequencyGrid) -> Vec<Complex64> {
    let k = grid.len();
    let logs: Vec<Complex64> = phi.iter().map(|v| Complex64::new(v.ln(), 0.0)).collect();
    let mut cep = grid.to_fft_order(&logs);
    fft::inverse(&mut cep);
    let half = k / 2;
    let mut folded = vec![ZERO; k];
    folded[0] = Complex64::new(cep[0].re / 2.0, 0.0);
    for n in 1..half {
        folded[n] = Complex64::new(cep[n].re, 0.0);
    }
    folded[half] = Complex64::new(cep[half].re / 2.0, 0.0);
    fft::forward(&mut folded);
    let g: Vec<Complex64> = folded.iter().map(|v| v.exp()).collect();
    grid.from_fft_order(&g)
}

fn floored_real(phi: &Spectrum) -> Result<Vec<f64>> {
    let values = phi.values();
    let max = values.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
    let grid = phi.grid();
    for (k, v) in values.iter().enumerate() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::InvalidSpectrum(format!("non-finite value at grid index {k}")));
        }
        if v.im.abs() > 1e-9 * max.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidSpectrum(format!("non-real value at grid index {k}")));
        }
        if v.re < 0.0 {
            return Err(Error::InvalidSpectrum(format!("negative value at grid index {k}")));
        }
        let mirror = values[grid.mirror(k)].re;
        if (v.re - mirror).abs() > 1e-9 * max {
            return Err(Error::InvalidSpectrum(format!(
                "spectrum is not even in frequency at grid index {k}"
            )));
        }
    }
    if max == 0.0 {
        return Err(Error::InvalidSpectrum("spectrum vanishes identically".into()));
    }
    let floor = SPECTRAL_FLOOR * max;
    Ok(values.iter().map(|v| v.re.max(floor)).collect())
}

/// Minimum-phase spectral factor `F^-1` with `|F^-1|^2 = phi`, by the real-cepstrum
/// construction. The returned filter is causal with a positive leading tap.
pub fn spectral_factorize(phi: &Spectrum) -> Result<TransferFunction> {
    let values = floored_real(phi)?;
    let g = factor_values(&values, phi.grid());
    Ok(TransferFunction::from_response(phi.grid(), g)?.with_causal_impulse())
}

/// Zeroes the taps at negative time indices.
pub fn causal_truncate(h: &TransferFunction) -> TransferFunction {
    let base = match h.impulse() {
        Some(_) => Cow::Borrowed(h),
        None => Cow::Owned(h.clone().with_centered_impulse()),
    };
    let impulse = base.impulse().expect("impulse attached");
    if impulse.offset >= 0 {
        return base.into_owned();
    }
    let skip = (-impulse.offset) as usize;
    let taps = impulse.taps.iter().skip(skip).copied().collect();
    TransferFunction::from_taps(h.grid(), 0, taps)
}

/// `{B}_C` evaluated through a full-length circular impulse response.
fn causal_part(grid: FrequencyGrid, bracket: Vec<Complex64>) -> Result<Vec<Complex64>> {
    let k = grid.len();
    let full = TransferFunction::from_response(grid, bracket)?.with_impulse_window(-((k / 2) as isize), k);
    Ok(causal_truncate(&full).response)
}

/// Spectral factors `G_i` (minimum phase, `|G_i|^2 = Phi_i`) for every series.
pub(crate) fn all_factors(s: &SpectralMatrix) -> Result<Vec<Vec<Complex64>>> {
    (0..s.n())
        .into_par_iter()
        .map(|i| {
            let phi = Spectrum::from_real(s.grid(), s.auto(i))?;
            Ok(factor_values(&floored_real(&phi)?, s.grid()))
        })
        .collect()
}

/// Causal filter of target `j` from input `i`. With `gj` present the error is
/// whitened by `F_j = 1/G_j`; without it the plain error variance is minimized.
fn causal_response(
    s: &SpectralMatrix,
    j: usize,
    i: usize,
    gi: &[Complex64],
    gj: Option<&[Complex64]>,
) -> Result<Vec<Complex64>> {
    let grid = s.grid();
    let cross = s.entry(i, j);
    let bracket: Vec<Complex64> = (0..grid.len())
        .map(|k| {
            let b = cross[k] / gi[k].conj();
            match gj {
                Some(gj) => b / gj[k],
                None => b,
            }
        })
        .collect();
    let truncated = causal_part(grid, bracket)?;
    Ok((0..grid.len())
        .map(|k| {
            let w = truncated[k] / gi[k];
            match gj {
                Some(gj) => w * gj[k],
                None => w,
            }
        })
        .collect())
}

fn error_spectrum(s: &SpectralMatrix, j: usize, i: usize, w: &[Complex64]) -> Vec<f64> {
    let (aj, ai) = (s.auto(j), s.auto(i));
    let (ji, ij) = (s.entry(j, i), s.entry(i, j));
    (0..w.len())
        .map(|k| {
            let v = aj[k] - (w[k] * ji[k]).re - (w[k].conj() * ij[k]).re + w[k].norm_sqr() * ai[k];
            v.max(0.0)
        })
        .collect()
}

pub(crate) fn causal_wiener_with(
    s: &SpectralMatrix,
    j: usize,
    i: usize,
    gi: &[Complex64],
    gj: &[Complex64],
) -> Result<WienerSolution> {
    let grid = s.grid();
    let w = causal_response(s, j, i, gi, Some(gj))?;
    let aj = s.auto(j);
    let residual: Vec<f64> = error_spectrum(s, j, i, &w)
        .iter()
        .zip(aj)
        .map(|(e, p)| e / p)
        .collect();
    let cost = grid.integrate(&residual);
    let filter = TransferFunction::from_response(grid, w)?.with_causal_impulse();
    Ok(WienerSolution {
        target: j,
        inputs: vec![i],
        filters: vec![filter],
        cost,
        residual_spectrum: Spectrum::from_real(grid, &residual)?,
    })
}

/// Causal Wiener filter modeling `x_j` from `x_i`,
/// `W = F_j^-1 {F_j Phi_ij / G_i*}_C / G_i` with `Phi_i = G_i G_i*`.
///
/// The cost is `E[(F_j (x_j - W x_i))^2]`, which equals 1 for the zero filter.
pub fn causal_wiener(s: &SpectralMatrix, j: usize, i: usize) -> Result<WienerSolution> {
    check_problem(s, j, &[i])?;
    let grid = s.grid();
    let gi = factor_values(&floored_real(&Spectrum::from_real(grid, s.auto(i))?)?, grid);
    let gj = factor_values(&floored_real(&Spectrum::from_real(grid, s.auto(j))?)?, grid);
    causal_wiener_with(s, j, i, &gi, &gj)
}

/// Output of [`apply_filter`]; the first `leading_transient` and last
/// `trailing_transient` samples depend on values outside the record.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSeries {
    pub series: TimeSeries,
    pub leading_transient: usize,
    pub trailing_transient: usize,
}

/// Time-domain convolution with the attached impulse response, zero outside the record.
pub fn apply_filter(h: &TransferFunction, x: &TimeSeries) -> Result<FilteredSeries> {
    let imp = h
        .impulse()
        .ok_or_else(|| Error::InvalidInput("filter has no impulse response".into()))?;
    let input = x.samples();
    let n = input.len() as isize;
    let out: Vec<f64> = (0..n)
        .map(|t| {
            imp.taps
                .iter()
                .enumerate()
                .filter_map(|(p, tap)| {
                    let src = t - (imp.offset + p as isize);
                    (0..n).contains(&src).then(|| tap * input[src as usize])
                })
                .sum()
        })
        .collect();
    let leading = imp.last_index().max(0) as usize;
    let trailing = (-imp.offset).max(0) as usize;
    Ok(FilteredSeries {
        series: TimeSeries::new(x.label(), out)?,
        leading_transient: leading.min(x.len()),
        trailing_transient: trailing.min(x.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid() -> FrequencyGrid {
        FrequencyGrid::new(256).unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// Two processes: x with psd `phi_x`, y = h x (+ optional unit white noise).
    fn pair(h: Vec<Complex64>, phi_x: Vec<f64>, noise: f64) -> SpectralMatrix {
        let g = grid();
        SpectralMatrix::from_mixture(
            vec!["x".into(), "y".into()],
            g,
            &[vec![g.constant(c(1.0)), g.constant(c(0.0))], vec![h, g.constant(c(1.0))]],
            &[phi_x, vec![noise; g.len()]],
        )
        .unwrap()
    }

    fn random_ma(rng: &mut ChaCha8Rng, order: usize) -> Vec<f64> {
        let mut taps: Vec<f64> = (0..=order).map(|_| rng.random_range(-1.0..1.0)).collect();
        taps[0] = 1.0;
        taps
    }

    #[test]
    fn noncausal_static_gain() {
        let g = grid();
        let s = pair(g.constant(c(3.0)), vec![1.0; g.len()], 0.0);
        let sol = noncausal_wiener(&s, 1, &[0]).unwrap();
        assert!(sol.filters[0].response().iter().all(|v| (v - c(3.0)).norm() < 1e-12));
        assert!(sol.cost.abs() < 1e-10);
    }

    #[test]
    fn noncausal_pure_delay() {
        let g = grid();
        let s = pair(g.fir_response(3, &[1.0]), vec![1.0; g.len()], 0.0);
        let sol = noncausal_wiener(&s, 1, &[0]).unwrap();
        for (k, w) in g.omegas().enumerate() {
            assert!((sol.filters[0].response()[k] - Complex64::from_polar(1.0, -3.0 * w)).norm() < 1e-10);
        }
        assert!(sol.cost.abs() < 1e-10);
        let imp = sol.filters[0].impulse().unwrap();
        let idx = (3 - imp.offset) as usize;
        assert!((imp.taps[idx] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn noncausal_chain_matches_dense_oracle() {
        // X1 -> X2 -> X3 with unit noises; G21 = 0.8 - 0.3 z^-1, G32 = 0.5 z^-1 + 0.4 z^-2
        let g = grid();
        let g21 = g.fir_response(0, &[0.8, -0.3]);
        let g32 = g.fir_response(1, &[0.5, 0.4]);
        let one = g.constant(c(1.0));
        let zero = g.constant(c(0.0));
        let h31: Vec<Complex64> = g32.iter().zip(&g21).map(|(a, b)| a * b).collect();
        let s = SpectralMatrix::from_mixture(
            vec!["X1".into(), "X2".into(), "X3".into()],
            g,
            &[
                vec![one.clone(), zero.clone(), zero.clone()],
                vec![g21.clone(), one.clone(), zero.clone()],
                vec![h31, g32.clone(), one.clone()],
            ],
            &[vec![1.0; g.len()], vec![1.0; g.len()], vec![1.0; g.len()]],
        )
        .unwrap();
        let sol = noncausal_wiener(&s, 2, &[0, 1]).unwrap();
        for k in 0..g.len() {
            // Cramer's rule on the 2x2 normal equations
            let (a11, a12, a21, a22) = (s.at(0, 0, k), s.at(0, 1, k), s.at(1, 0, k), s.at(1, 1, k));
            let (b1, b2) = (s.at(0, 2, k), s.at(1, 2, k));
            let det = a11 * a22 - a12 * a21;
            let w1 = (b1 * a22 - a12 * b2) / det;
            let w2 = (a11 * b2 - a21 * b1) / det;
            assert!((sol.filters[0].response()[k] - w1).norm() < 1e-9);
            assert!((sol.filters[1].response()[k] - w2).norm() < 1e-9);
            assert!(w1.norm() < 1e-6);
            assert!((w2 - g32[k]).norm() < 1e-9);
        }
        // residual equals the own-noise variance
        assert!((sol.cost - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noncausal_orthogonality_and_cost_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = grid();
        for _ in 0..10 {
            let n = 4;
            let gains: Vec<Vec<Vec<Complex64>>> = (0..n)
                .map(|_| (0..n).map(|_| g.fir_response(0, &random_ma(&mut rng, 2))).collect())
                .collect();
            let psd: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.5..2.0); g.len()]).collect();
            let labels = (0..n).map(|i| format!("x{i}")).collect();
            let s = SpectralMatrix::from_mixture(labels, g, &gains, &psd).unwrap();
            let inputs = [0, 2, 3];
            let sol = noncausal_wiener(&s, 1, &inputs).unwrap();
            assert!((sol.cost - sol.residual_spectrum.integral().re).abs() < 1e-8);
            for k in 0..g.len() {
                for &a in &inputs {
                    let mut r = s.at(a, 1, k);
                    for (p, &b) in inputs.iter().enumerate() {
                        r -= sol.filters[p].response()[k] * s.at(a, b, k);
                    }
                    assert!(r.norm() <= 1e-8 * s.auto(a)[k]);
                }
                assert!(sol.residual_spectrum.values()[k].re >= 0.0);
            }
        }
    }

    #[test]
    fn noncausal_ignores_common_weighting() {
        // Filtering every process by the same Q scales all spectra by |Q|^2.
        let g = grid();
        let h = g.fir_response(-1, &[0.3, 1.0, -0.5]);
        let s = pair(h.clone(), vec![1.0; g.len()], 0.7);
        let q = g.fir_response(0, &[1.0, 0.6]);
        let q2: Vec<f64> = q.iter().map(|v| v.norm_sqr()).collect();
        let s_weighted = SpectralMatrix::from_mixture(
            vec!["x".into(), "y".into()],
            g,
            &[vec![q.clone(), g.constant(c(0.0))], vec![h.iter().zip(&q).map(|(a, b)| a * b).collect(), q.clone()]],
            &[vec![1.0; g.len()], vec![0.7; g.len()]],
        )
        .unwrap();
        let w = noncausal_wiener(&s, 1, &[0]).unwrap();
        let wq = noncausal_wiener(&s_weighted, 1, &[0]).unwrap();
        for k in 0..g.len() {
            assert!((w.filters[0].response()[k] - wq.filters[0].response()[k]).norm() < 1e-10);
            let weighted_residual = w.residual_spectrum.values()[k].re * q2[k];
            assert!((weighted_residual - wq.residual_spectrum.values()[k].re).abs() < 1e-10);
        }
    }

    #[test]
    fn noncausal_rejects_bad_inputs_and_singular_blocks() {
        let g = grid();
        let s = pair(g.constant(c(1.0)), vec![1.0; g.len()], 0.0);
        assert!(matches!(noncausal_wiener(&s, 1, &[]), Err(Error::InvalidParameter(_))));
        assert!(matches!(noncausal_wiener(&s, 1, &[1]), Err(Error::InvalidParameter(_))));
        assert!(noncausal_wiener(&s, 1, &[5]).is_err());
        // x and y identical -> singular input block when both are inputs
        let s3 = SpectralMatrix::from_mixture(
            vec!["x".into(), "y".into(), "z".into()],
            g,
            &[vec![g.constant(c(1.0))], vec![g.constant(c(1.0))], vec![g.constant(c(2.0))]],
            &[vec![1.0; g.len()]],
        )
        .unwrap();
        assert!(matches!(
            noncausal_wiener(&s3, 2, &[0, 1]),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn factorize_constant() {
        let g = grid();
        let f = spectral_factorize(&Spectrum::from_real(g, &vec![4.0; g.len()]).unwrap()).unwrap();
        let imp = f.impulse().unwrap();
        assert_eq!(imp.offset, 0);
        assert!((imp.taps[0] - 2.0).abs() < 1e-12);
        assert!(imp.taps[1..].iter().all(|t| t.abs() < 1e-12));
    }

    #[test]
    fn factorize_ma1() {
        let g = grid();
        let b = g.fir_response(0, &[1.0, 0.5]);
        let phi: Vec<f64> = b.iter().map(|v| v.norm_sqr()).collect();
        let f = spectral_factorize(&Spectrum::from_real(g, &phi).unwrap()).unwrap();
        let imp = f.impulse().unwrap();
        assert!((imp.taps[0] - 1.0).abs() < 1e-9);
        assert!((imp.taps[1] - 0.5).abs() < 1e-9);
        assert!(imp.taps[2..].iter().all(|t| t.abs() < 1e-9));
        for (k, v) in f.response().iter().enumerate() {
            assert!((v.norm_sqr() - phi[k]).abs() <= 1e-10 * phi[k]);
        }
    }

    #[test]
    fn factorize_rejects_invalid() {
        let g = FrequencyGrid::new(8).unwrap();
        let neg = Spectrum::from_real(g, &[1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0, 1.0]).unwrap();
        assert!(matches!(spectral_factorize(&neg), Err(Error::InvalidSpectrum(_))));
        let mut v = vec![Complex64::new(1.0, 0.0); 8];
        v[3] = Complex64::new(1.0, 0.5);
        let cplx = Spectrum::new(g, v).unwrap();
        assert!(matches!(spectral_factorize(&cplx), Err(Error::InvalidSpectrum(_))));
    }

    #[test]
    fn truncate_examples() {
        let g = grid();
        let h = TransferFunction::from_taps(g, -1, vec![1.0, 1.0, 1.0]);
        let t = causal_truncate(&h);
        assert_eq!(t.impulse().unwrap(), &ImpulseResponse { offset: 0, taps: vec![1.0, 1.0] });
        let expected = g.fir_response(0, &[1.0, 1.0]);
        assert_eq!(t.response(), expected.as_slice());

        let causal = TransferFunction::from_taps(g, 2, vec![0.5, -0.25]);
        assert_eq!(causal_truncate(&causal), causal);

        let anti = TransferFunction::from_taps(g, -3, vec![1.0, 2.0]);
        let t = causal_truncate(&anti);
        assert!(t.impulse().unwrap().taps.is_empty());
        assert!(t.response().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn truncate_is_idempotent() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let taps: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = TransferFunction::from_taps(g, -4, taps);
            let once = causal_truncate(&h);
            let twice = causal_truncate(&once);
            assert_eq!(once, twice);
            // response-only input goes through the default window
            let r = TransferFunction::from_response(g, h.response().to_vec()).unwrap();
            let t = causal_truncate(&r);
            assert_eq!(causal_truncate(&t), t);
            for (a, b) in t.impulse().unwrap().taps.iter().zip(&once.impulse().unwrap().taps) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_delay_and_advance() {
        let g = grid();
        let one = vec![1.0; g.len()];
        // y(t) = x(t-1)
        let s = pair(g.fir_response(1, &[1.0]), one.clone(), 0.0);
        let sol = causal_wiener(&s, 1, 0).unwrap();
        let imp = sol.filters[0].impulse().unwrap();
        assert_eq!(imp.offset, 0);
        assert!((imp.taps[1] - 1.0).abs() < 1e-9);
        assert!(imp.taps[0].abs() < 1e-9);
        assert!(sol.cost.abs() < 1e-9);

        // y(t) = x(t+1): nothing causal helps
        let s = pair(g.fir_response(-1, &[1.0]), one, 0.0);
        let sol = causal_wiener(&s, 1, 0).unwrap();
        assert!(sol.filters[0].rms() < 1e-9);
        assert!((sol.cost - 1.0).abs() < 1e-9);
        // and x(t) = y(t-1) is exact the other way round
        let back = causal_wiener(&s, 0, 1).unwrap();
        assert!(back.cost.abs() < 1e-9);
    }

    fn ar1_advance(a: f64) -> SpectralMatrix {
        let g = grid();
        let inv: Vec<Complex64> = g.fir_response(0, &[1.0, -a]).iter().map(|v| v.inv()).collect();
        let adv: Vec<Complex64> = g.fir_response(-1, &[1.0]).iter().zip(&inv).map(|(d, h)| d * h).collect();
        SpectralMatrix::from_mixture(vec!["x".into(), "y".into()], g, &[vec![inv], vec![adv]], &[vec![1.0; g.len()]]).unwrap()
    }

    #[test]
    fn classical_one_step_predictor_matches_least_squares() {
        // Unweighted causal Wiener: predicting x(t+1) from x(..t) for AR(1) gives 0.8.
        let a = 0.8;
        let s = ar1_advance(a);
        let g = s.grid();
        let gi = factor_values(s.auto(0), g);
        let w = causal_response(&s, 1, 0, &gi, None).unwrap();
        assert!(w.iter().all(|v| (v - c(a)).norm() < 1e-9));

        // least-squares fit of x(t+1) on x(t), x(t-1) from simulated data
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = vec![0.0f64; 200_000];
        for t in 1..x.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[t] = a * x[t - 1] + e;
        }
        let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t in 1..x.len() - 1 {
            s00 += x[t] * x[t];
            s01 += x[t] * x[t - 1];
            s11 += x[t - 1] * x[t - 1];
            r0 += x[t + 1] * x[t];
            r1 += x[t + 1] * x[t - 1];
        }
        let det = s00 * s11 - s01 * s01;
        let b0 = (r0 * s11 - s01 * r1) / det;
        let b1 = (s00 * r1 - s01 * r0) / det;
        assert!((b0 - a).abs() < 0.01 && b1.abs() < 0.01);
    }

    #[test]
    fn whitened_causal_filter_on_ar1_advance() {
        // With the F_j weighting the whitened target is an innovation: nothing causal helps.
        let s = ar1_advance(0.8);
        let sol = causal_wiener(&s, 1, 0).unwrap();
        assert!(sol.filters[0].rms() < 1e-8);
        assert!((sol.cost - 1.0).abs() < 1e-8);
    }

    #[test]
    fn causal_cost_dominates_whitened_noncausal_cost() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let h = g.fir_response(rng.random_range(-2i64..2) as isize, &random_ma(&mut rng, 3));
            let shape = g.fir_response(0, &[1.0, rng.random_range(-0.7..0.7)]);
            let phi: Vec<f64> = shape.iter().map(|v| v.norm_sqr()).collect();
            let s = pair(h, phi, rng.random_range(0.1..2.0));
            for (j, i) in [(1, 0), (0, 1)] {
                let causal = causal_wiener(&s, j, i).unwrap();
                let coh = crate::signal::coherence_function(&s, i, j).unwrap();
                let whitened_noncausal = 1.0 - coh.mean();
                assert!(causal.cost >= whitened_noncausal - 1e-8);
                assert!(causal.cost <= 1.0 + 1e-8);
                assert!((causal.cost - causal.residual_spectrum.integral().re).abs() < 1e-8);
                assert!(causal.filters[0].is_causal());
            }
        }
    }

    #[test]
    fn apply_filter_examples() {
        let g = FrequencyGrid::new(8).unwrap();
        let x = TimeSeries::new("x", vec![1.0, 2.0, 3.0]).unwrap();
        let id = TransferFunction::from_taps(g, 0, vec![1.0]);
        assert_eq!(apply_filter(&id, &x).unwrap().series, x);

        let delay = TransferFunction::from_taps(g, 1, vec![1.0]);
        let out = apply_filter(&delay, &x).unwrap();
        assert_eq!(out.series.samples(), &[0.0, 1.0, 2.0]);
        assert_eq!(out.leading_transient, 1);

        let ma = TransferFunction::from_taps(g, 0, vec![1.0, 0.5]);
        let imp = TimeSeries::new("d", vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(apply_filter(&ma, &imp).unwrap().series.samples(), &[1.0, 0.5, 0.0, 0.0]);

        let no_impulse = TransferFunction::from_response(g, g.constant(c(1.0))).unwrap();
        assert!(apply_filter(&no_impulse, &x).is_err());
    }

    #[test]
    fn impulse_window_matches_response_for_short_filters() {
        let g = grid();
        let h = TransferFunction::from_response(g, g.fir_response(-2, &[0.1, 0.2, 1.0, -0.4])).unwrap();
        let h = h.with_centered_impulse();
        assert!(h.truncation_fraction() < 1e-12);
        let imp = h.impulse().unwrap();
        let again = g.fir_response(imp.offset, &imp.taps);
        for (a, b) in again.iter().zip(h.response()) {
            assert!((a - b).norm() <= 1e-8 * b.norm().max(1e-300) + 1e-12);
        }
    }
}
