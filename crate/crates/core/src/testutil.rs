//! Random analytic spectra shared by unit tests.

use num_complex::Complex64;
use rand::Rng;

use crate::signal::{FrequencyGrid, SpectralMatrix};

pub(crate) fn labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("X{i}")).collect()
}

/// Positive rational spectrum `|1 + a e^{-jw}|^2 * scale`.
pub(crate) fn random_psd<R: Rng>(grid: FrequencyGrid, rng: &mut R) -> Vec<f64> {
    let a: f64 = rng.random_range(-0.8..0.8);
    let scale: f64 = rng.random_range(0.3..2.0);
    grid.omegas()
        .map(|w| scale * (1.0 + a * a + 2.0 * a * w.cos()))
        .collect()
}

pub(crate) fn random_fir<R: Rng>(grid: FrequencyGrid, rng: &mut R) -> Vec<Complex64> {
    let offset = rng.random_range(-2i64..3) as isize;
    let len = rng.random_range(1..4);
    let taps: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    grid.fir_response(offset, &taps)
}

/// `n` processes, each a random FIR mixture of `sources` independent colored
/// noises; the mixing density `p` controls how many gains are nonzero.
pub(crate) fn random_mixture<R: Rng>(
    grid: FrequencyGrid,
    n: usize,
    sources: usize,
    p: f64,
    rng: &mut R,
) -> SpectralMatrix {
    let psd: Vec<Vec<f64>> = (0..sources).map(|_| random_psd(grid, rng)).collect();
    let gains: Vec<Vec<Vec<Complex64>>> = (0..n)
        .map(|proc| {
            (0..sources)
                .map(|s| {
                    if s == proc % sources || rng.random_bool(p) {
                        random_fir(grid, rng)
                    } else {
                        vec![Complex64::new(0.0, 0.0); grid.len()]
                    }
                })
                .collect()
        })
        .collect();
    SpectralMatrix::from_mixture(labels(n), grid, &gains, &psd).unwrap()
}
