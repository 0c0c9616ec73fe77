//! Empirical checks over solver traces: surrogate decrease, support and sign
//! stabilization, summability of the step lengths and local rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::DenseVector;

/// Distances below this are treated as exact convergence and left out of rate fits.
pub const RATE_FIT_FLOOR: f64 = 1e-14;
/// Minimum number of usable points for a rate fit.
pub const RATE_FIT_MIN_POINTS: usize = 5;

/// One row of a per-iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `F(x^k, eps^k)`.
    pub f_eps: f64,
    /// `psi(x^k, x^{k-1}, eps^k)`.
    pub psi: f64,
    /// `||x^k - x^{k-1}||_2`.
    pub step_norm: f64,
    pub rel_step: f64,
    pub support_size: usize,
    /// Digest of the sign pattern of `x^k`; absent when read from a trace without it.
    pub sign_hash: Option<u64>,
    /// `||eps^k||_1`.
    pub eps_norm1: f64,
    pub stationarity: Option<f64>,
    pub mse: Option<f64>,
}

/// A stored iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    pub x: DenseVector,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiViolation {
    /// Iteration whose surrogate value did not drop enough below its predecessor's.
    pub k: usize,
    pub decrease: f64,
    pub required: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PsiDecreaseReport {
    pub checked_pairs: usize,
    pub violations: Vec<PsiViolation>,
}

impl PsiDecreaseReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `psi_k - psi_{k+1} >= beta/2 (1 - alpha_bar^2) step_k^2 - 1e-8 (1 + |psi_k|)`
/// on every pair of consecutive records.
pub fn check_psi_decrease(records: &[IterationRecord], beta: f64, alpha_bar: f64) -> Result<PsiDecreaseReport> {
    if records.len() < 2 {
        return Err(Error::Usage(format!("surrogate check needs at least 2 records, got {}", records.len())));
    }
    let coef = 0.5 * beta * (1.0 - alpha_bar * alpha_bar).max(0.0);
    let mut report = PsiDecreaseReport::default();
    for pair in records.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        if next.k != cur.k + 1 {
            continue;
        }
        report.checked_pairs += 1;
        let decrease = cur.psi - next.psi;
        let required = coef * cur.step_norm * cur.step_norm;
        let slack = 1e-8 * (1.0 + cur.psi.abs());
        if !(decrease >= required - slack) {
            report.violations.push(PsiViolation { k: next.k, decrease, required });
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StabilizationReport {
    pub support_stable_from: Option<usize>,
    pub sign_stable_from: Option<usize>,
    /// Smallest nonzero `|x_i|` over stored iterates at or after sign stabilization.
    pub min_nonzero_magnitude_after_stable: Option<f64>,
}

fn stable_from<T: PartialEq>(records: &[IterationRecord], key: impl Fn(&IterationRecord) -> T) -> Option<usize> {
    let last = records.last()?;
    let last_key = key(last);
    let start = records.iter().rposition(|r| key(r) != last_key).map_or(0, |i| i + 1);
    if records.len() >= 2 && start == records.len() - 1 {
        // the pattern changed on the very last step
        return None;
    }
    Some(records[start].k)
}

/// Finds the first iteration after which the support size (and the sign
/// pattern, when digests are recorded) never changes again.
pub fn detect_stabilization(trace: &Trace) -> StabilizationReport {
    let records = &trace.records;
    let support_stable_from = stable_from(records, |r| r.support_size);
    let sign_stable_from = if records.iter().all(|r| r.sign_hash.is_some()) {
        stable_from(records, |r| (r.sign_hash, r.support_size))
    } else {
        None
    };
    let min_nonzero_magnitude_after_stable = sign_stable_from.and_then(|from| {
        trace
            .snapshots
            .iter()
            .filter(|s| s.k >= from)
            .flat_map(|s| s.x.as_slice().iter().copied())
            .filter(|v| *v != 0.0)
            .map(f64::abs)
            .reduce(f64::min)
    });
    StabilizationReport { support_stable_from, sign_stable_from, min_nonzero_magnitude_after_stable }
}

/// Sum of `step_norm` over records with `k >= from_k`.
pub fn tail_sum(records: &[IterationRecord], from_k: usize) -> Result<f64> {
    match records.last() {
        Some(last) if from_k <= last.k => Ok(records.iter().filter(|r| r.k >= from_k).map(|r| r.step_norm).sum()),
        _ => Err(Error::Usage(format!("tail start {from_k} lies beyond the trace"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    /// `exp(slope)` when it lies in (0, 1).
    pub gamma_hat: Option<f64>,
    /// Fitted slope of `log distance` against `k`, when a fit was possible.
    pub slope: Option<f64>,
    pub r2: f64,
    pub tail_fraction: f64,
    pub points_used: usize,
}

impl RateFit {
    fn empty(tail_fraction: f64, points_used: usize) -> Self {
        Self { gamma_hat: None, slope: None, r2: 0.0, tail_fraction, points_used }
    }
}

/// Least-squares fit of `log d_k = a + k log gamma` over the trailing
/// `tail_fraction` of `points`, skipping distances below [`RATE_FIT_FLOOR`].
pub fn fit_rate_series(points: &[(usize, f64)], tail_fraction: f64) -> Result<RateFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::config("tail_fraction", format!("must lie in (0, 1], got {tail_fraction}")));
    }
    let keep = ((points.len() as f64) * tail_fraction).ceil() as usize;
    let usable: Vec<(f64, f64)> = points[points.len() - keep.min(points.len())..]
        .iter()
        .filter(|(_, d)| d.is_finite() && *d >= RATE_FIT_FLOOR)
        .map(|(k, d)| (*k as f64, d.ln()))
        .collect();
    if usable.len() < RATE_FIT_MIN_POINTS {
        return Ok(RateFit::empty(tail_fraction, usable.len()));
    }
    let n = usable.len() as f64;
    let mean_k = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (k, l) in &usable {
        sxx += (k - mean_k) * (k - mean_k);
        sxy += (k - mean_k) * (l - mean_l);
        syy += (l - mean_l) * (l - mean_l);
    }
    let slope = sxy / sxx;
    let intercept = mean_l - slope * mean_k;
    let ss_res: f64 = usable.iter().map(|(k, l)| (l - intercept - slope * k).powi(2)).sum();
    let r2 = if syy > 0.0 {
        1.0 - ss_res / syy
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    let gamma = slope.exp();
    Ok(RateFit {
        gamma_hat: (gamma > 0.0 && gamma < 1.0).then_some(gamma),
        slope: Some(slope),
        r2,
        tail_fraction,
        points_used: usable.len(),
    })
}

/// Fits the local linear rate of `||x^k - x_ref||` over stored iterates,
/// restricted to iterations after sign stabilization when it is detected.
pub fn fit_rate(trace: &Trace, x_ref: &DenseVector, tail_fraction: f64) -> Result<RateFit> {
    if let Some(s) = trace.snapshots.first() {
        if s.x.len() != x_ref.len() {
            return Err(Error::Usage(format!(
                "reference has length {}, iterates have length {}",
                x_ref.len(),
                s.x.len()
            )));
        }
    }
    let from = detect_stabilization(trace).sign_stable_from.unwrap_or(0);
    let points: Vec<(usize, f64)> =
        trace.snapshots.iter().filter(|s| s.k >= from).map(|s| (s.k, s.x.distance(x_ref))).collect();
    fit_rate_series(&points, tail_fraction)
}

/// Rate fit on the step lengths `||x^k - x^{k-1}||`, usable when no iterates
/// were stored. Steps decay at the same linear rate as the distance to the limit.
pub fn fit_step_rate(records: &[IterationRecord], tail_fraction: f64) -> Result<RateFit> {
    let from =
        detect_stabilization(&Trace { records: records.to_vec(), snapshots: Vec::new() }).sign_stable_from.unwrap_or(0);
    let points: Vec<(usize, f64)> = records.iter().filter(|r| r.k >= from.max(1)).map(|r| (r.k, r.step_norm)).collect();
    fit_rate_series(&points, tail_fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailSums {
    pub total: f64,
    pub last_tenth_from: usize,
    pub last_tenth: f64,
}

/// All trace diagnostics bundled for reporting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub psi_decrease: Option<PsiDecreaseReport>,
    pub stabilization: StabilizationReport,
    pub tail_sums: Option<TailSums>,
    pub rate: RateFit,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.psi_decrease.as_ref().is_none_or(PsiDecreaseReport::passed)
    }
}

/// Runs every trace-only diagnostic. `psi_model` selects whether the surrogate
/// decrease check applies to the solver that produced the trace.
pub fn diagnose_records(
    records: &[IterationRecord],
    beta: f64,
    alpha_bar: f64,
    psi_model: bool,
    tail_fraction: f64,
) -> Result<DiagnosticsReport> {
    let psi_decrease =
        if psi_model && records.len() >= 2 { Some(check_psi_decrease(records, beta, alpha_bar)?) } else { None };
    let tail_sums = match (records.first(), records.last()) {
        (Some(first), Some(last)) => {
            let span = last.k - first.k;
            let from = last.k - span / 10;
            Some(TailSums {
                total: tail_sum(records, first.k)?,
                last_tenth_from: from,
                last_tenth: tail_sum(records, from)?,
            })
        }
        _ => None,
    };
    let stabilization = detect_stabilization(&Trace { records: records.to_vec(), snapshots: Vec::new() });
    let rate = fit_step_rate(records, tail_fraction)?;
    Ok(DiagnosticsReport { psi_decrease, stabilization, tail_sums, rate })
}
