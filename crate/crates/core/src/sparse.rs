//! Sparse MISO identification in the space of stationary processes.
//!
//! Processes are compared through `<a, b> = R_ab(0)`, the grid mean of `Phi_ab`.
//! The exhaustive solver is the reference for the greedy ones.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{SpectralMatrix, Spectrum};
use crate::wiener::{noncausal_wiener, TransferFunction, WienerSolution};

/// Default relative residual-norm improvement below which greedy solvers stop.
pub const DEFAULT_MIN_GAIN: f64 = 0.01;
/// Largest number of supports the exhaustive solver will enumerate per size.
pub const EXHAUSTIVE_LIMIT: u128 = 100_000;

const ORTHOGONALITY_TOL: f64 = 1e-8;
const PERFECT_FIT: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Exhaustive,
    MatchingPursuit,
    OrthogonalLeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// The search covered every admissible support.
    Enumerated,
    BudgetReached,
    GainBelowThreshold,
    ExhaustedCandidates,
    PerfectFit,
}

/// Sparse model of one target. `filters` and `cost` are the joint Wiener
/// solution on `support`; matching pursuit also keeps its accumulated filters.
#[derive(Debug, Clone)]
pub struct SparseModel {
    pub target: usize,
    /// Selection order for greedy solvers, ascending for the exhaustive one.
    pub support: Vec<usize>,
    pub filters: Vec<TransferFunction>,
    pub cost: f64,
    pub raw_filters: Option<Vec<TransferFunction>>,
    pub raw_cost: Option<f64>,
    /// Cost after each added input, starting with the empty support.
    pub cost_path: Vec<f64>,
    pub solver: Solver,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub input: String,
    pub offset: isize,
    pub taps: Vec<f64>,
}

/// Serialized form of a [`SparseModel`] with labels instead of indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRecord {
    pub target: String,
    pub support: Vec<String>,
    pub filters: Vec<FilterRecord>,
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_filters: Option<Vec<FilterRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_cost: Option<f64>,
    pub cost_path: Vec<f64>,
    pub solver: Solver,
    pub stop_reason: StopReason,
}

fn filter_records(labels: &[String], support: &[usize], filters: &[TransferFunction]) -> Vec<FilterRecord> {
    support
        .iter()
        .zip(filters)
        .map(|(&i, f)| {
            let (offset, taps) = f.impulse().map(|imp| (imp.offset, imp.taps.clone())).unwrap_or((0, Vec::new()));
            FilterRecord {
                input: labels[i].clone(),
                offset,
                taps,
            }
        })
        .collect()
}

impl SparseModel {
    pub fn record(&self, labels: &[String]) -> SparseRecord {
        SparseRecord {
            target: labels[self.target].clone(),
            support: self.support.iter().map(|&i| labels[i].clone()).collect(),
            filters: filter_records(labels, &self.support, &self.filters),
            cost: self.cost,
            raw_filters: self.raw_filters.as_ref().map(|f| filter_records(labels, &self.support, f)),
            raw_cost: self.raw_cost,
            cost_path: self.cost_path.clone(),
            solver: self.solver,
            stop_reason: self.stop_reason,
        }
    }
}

/// `<a, b> = (1/2pi) int Phi_ab`.
///
/// Panics if an index is out of range or the integral has a relevant
/// imaginary part, which cannot happen for spectra of real processes.
pub fn inner_product(s: &SpectralMatrix, a: usize, b: usize) -> f64 {
    assert!(a < s.n() && b < s.n(), "series index out of range");
    let v = s.grid().integrate_complex(s.entry(a, b));
    let scale = (s.grid().integrate_complex(s.entry(a, a)).re * s.grid().integrate_complex(s.entry(b, b)).re)
        .sqrt()
        .max(1.0);
    assert!(
        v.im.abs() <= ORTHOGONALITY_TOL * scale,
        "inner product <{a}, {b}> has imaginary part {}",
        v.im
    );
    v.re
}

pub fn norm(s: &SpectralMatrix, a: usize) -> f64 {
    inner_product(s, a, a).max(0.0).sqrt()
}

/// Orthogonal projection of `target` onto the closed span of `support`.
/// The residual is checked to be orthogonal to every support member.
pub fn project(s: &SpectralMatrix, target: usize, support: &[usize]) -> Result<WienerSolution> {
    s.check_index(target)?;
    if support.is_empty() {
        let grid = s.grid();
        return Ok(WienerSolution {
            target,
            inputs: Vec::new(),
            filters: Vec::new(),
            cost: inner_product(s, target, target),
            residual_spectrum: Spectrum::from_real(grid, s.auto(target))?,
        });
    }
    let sol = noncausal_wiener(s, target, support)?;
    let grid = s.grid();
    let scale = inner_product(s, target, target).max(f64::MIN_POSITIVE);
    for &a in support {
        // Phi_{a,r} = Phi_{a,t} - sum_b W_b Phi_{a,b}
        let cross: Vec<Complex64> = (0..grid.len())
            .map(|k| {
                let fitted: Complex64 = support
                    .iter()
                    .zip(&sol.filters)
                    .map(|(&b, f)| f.response()[k] * s.at(a, b, k))
                    .sum();
                s.at(a, target, k) - fitted
            })
            .collect();
        let ip = grid.integrate_complex(&cross).norm();
        let bound = ORTHOGONALITY_TOL * (scale * inner_product(s, a, a).max(f64::MIN_POSITIVE)).sqrt();
        if ip > bound {
            return Err(Error::Numerical(format!(
                "projection residual of '{}' is not orthogonal to '{}' ({ip:e})",
                s.labels()[target],
                s.labels()[a]
            )));
        }
    }
    Ok(sol)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > items.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let Some(pos) = (0..k).rev().find(|&p| idx[p] != p + items.len() - k) else {
            return out;
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

fn check_budget(s: &SpectralMatrix, target: usize, m: usize) -> Result<Vec<usize>> {
    s.check_index(target)?;
    if m == 0 {
        return Err(Error::InvalidParameter("sparsity budget must be >= 1".into()));
    }
    if s.n() < 2 {
        return Err(Error::InvalidInput("sparse identification needs at least one input".into()));
    }
    Ok((0..s.n()).filter(|&i| i != target).collect())
}

fn model_from(
    s: &SpectralMatrix,
    target: usize,
    support: Vec<usize>,
    cost_path: Vec<f64>,
    solver: Solver,
    stop_reason: StopReason,
) -> Result<SparseModel> {
    let sol = project(s, target, &support)?;
    Ok(SparseModel {
        target,
        support,
        filters: sol.filters,
        cost: sol.cost,
        raw_filters: None,
        raw_cost: None,
        cost_path,
        solver,
        stop_reason,
    })
}

/// Global minimum-cost support with at most `m` inputs, by enumeration.
/// Equal costs go to the lexicographically smallest support.
pub fn sparse_exhaustive(s: &SpectralMatrix, target: usize, m: usize) -> Result<SparseModel> {
    let inputs = check_budget(s, target, m)?;
    let size = m.min(inputs.len());
    let count = binomial(inputs.len(), size);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::CombinatorialLimit {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let supports: Vec<Vec<usize>> = (1..=size).flat_map(|k| combinations(&inputs, k)).collect();
    let costs = supports
        .par_iter()
        .map(|sup| noncausal_wiener(s, target, sup).map(|sol| sol.cost))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..supports.len())
        .min_by(|&a, &b| costs[a].total_cmp(&costs[b]).then_with(|| supports[a].cmp(&supports[b])))
        .expect("at least one support");
    let empty = inner_product(s, target, target);
    model_from(
        s,
        target,
        supports[best].clone(),
        vec![empty, costs[best]],
        Solver::Exhaustive,
        StopReason::Enumerated,
    )
}

fn check_gain(min_gain: f64) -> Result<()> {
    if !(0.0..1.0).contains(&min_gain) {
        return Err(Error::InvalidParameter(format!("min_gain must lie in [0, 1), got {min_gain}")));
    }
    Ok(())
}

/// Relative residual-norm improvement from `prev` to `next` cost.
fn norm_gain(prev: f64, next: f64) -> f64 {
    if prev <= 0.0 {
        return 0.0;
    }
    1.0 - (next.max(0.0) / prev).sqrt()
}

/// Index of the smallest value; lowest index wins ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Greedy selection without re-fitting earlier atoms: every step projects the
/// current residual on the single best remaining input.
pub fn matching_pursuit(s: &SpectralMatrix, target: usize, m: usize, min_gain: f64) -> Result<SparseModel> {
    let inputs = check_budget(s, target, m)?;
    check_gain(min_gain)?;
    let grid = s.grid();
    let kk = grid.len();
    let initial = inner_product(s, target, target);
    let mut selected: Vec<usize> = Vec::new();
    let mut accumulated: Vec<Vec<Complex64>> = Vec::new();
    let mut path = vec![initial];
    let mut cost = initial;

    // Phi_{u,r} for the current residual r = t - sum_b A_b x_b.
    let cross_with_residual = |u: usize, selected: &[usize], acc: &[Vec<Complex64>]| -> Vec<Complex64> {
        (0..kk)
            .map(|k| {
                let fitted: Complex64 = selected.iter().zip(acc).map(|(&b, a)| a[k] * s.at(u, b, k)).sum();
                s.at(u, target, k) - fitted
            })
            .collect()
    };

    let stop = loop {
        if cost <= PERFECT_FIT * initial {
            break StopReason::PerfectFit;
        }
        if selected.len() == m.min(inputs.len()) {
            break if selected.len() == inputs.len() {
                StopReason::ExhaustedCandidates
            } else {
                StopReason::BudgetReached
            };
        }
        let remaining: Vec<usize> = inputs.iter().copied().filter(|i| !selected.contains(i)).collect();
        let scored: Vec<(f64, Vec<Complex64>)> = remaining
            .par_iter()
            .map(|&u| {
                let cross = cross_with_residual(u, &selected, &accumulated);
                let auto = s.auto(u);
                let gain: Vec<f64> = cross.iter().zip(auto).map(|(c, p)| c.norm_sqr() / p).collect();
                let w: Vec<Complex64> = cross.iter().zip(auto).map(|(c, p)| c / p).collect();
                (grid.integrate(&gain), w)
            })
            .collect();
        let reductions: Vec<f64> = scored.iter().map(|(g, _)| -g).collect();
        let pick = argmin(&reductions);
        let (reduction, w) = scored.into_iter().nth(pick).expect("candidate exists");
        let next = (cost - reduction).max(0.0);
        if !selected.is_empty() && norm_gain(cost, next) < min_gain {
            break StopReason::GainBelowThreshold;
        }
        selected.push(remaining[pick]);
        accumulated.push(w);
        cost = next;
        path.push(cost);
    };

    let raw_filters = accumulated
        .into_iter()
        .map(|w| TransferFunction::from_response(grid, w).map(TransferFunction::with_centered_impulse))
        .collect::<Result<Vec<_>>>()?;
    let mut model = model_from(s, target, selected, path, Solver::MatchingPursuit, stop)?;
    model.raw_filters = Some(raw_filters);
    model.raw_cost = Some(cost);
    Ok(model)
}

/// Greedy selection with full re-projection of the target for every candidate.
pub fn orthogonal_least_squares(
    s: &SpectralMatrix,
    target: usize,
    m: usize,
    min_gain: f64,
) -> Result<SparseModel> {
    let inputs = check_budget(s, target, m)?;
    check_gain(min_gain)?;
    let initial = inner_product(s, target, target);
    let mut selected: Vec<usize> = Vec::new();
    let mut path = vec![initial];
    let mut cost = initial;
    let stop = loop {
        if cost <= PERFECT_FIT * initial {
            break StopReason::PerfectFit;
        }
        if selected.len() == m.min(inputs.len()) {
            break if selected.len() == inputs.len() {
                StopReason::ExhaustedCandidates
            } else {
                StopReason::BudgetReached
            };
        }
        let remaining: Vec<usize> = inputs.iter().copied().filter(|i| !selected.contains(i)).collect();
        let costs = remaining
            .par_iter()
            .map(|&c| {
                let mut sup = selected.clone();
                sup.push(c);
                noncausal_wiener(s, target, &sup).map(|sol| sol.cost)
            })
            .collect::<Result<Vec<_>>>()?;
        let pick = argmin(&costs);
        let next = costs[pick].min(cost);
        if !selected.is_empty() && norm_gain(cost, next) < min_gain {
            break StopReason::GainBelowThreshold;
        }
        selected.push(remaining[pick]);
        cost = next;
        path.push(cost);
    };
    model_from(s, target, selected, path, Solver::OrthogonalLeastSquares, stop)
}
