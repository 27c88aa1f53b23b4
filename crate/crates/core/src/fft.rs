//! Thin wrapper over `rustfft` with a per-thread planner cache.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place forward DFT, `X[m] = sum_n x[n] e^{-j 2 pi m n / K}`.
pub(crate) fn forward(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// In-place inverse DFT including the `1/K` normalization.
pub(crate) fn inverse(buf: &mut [Complex64]) {
    let n = buf.len();
    plan(n, true).process(buf);
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}
