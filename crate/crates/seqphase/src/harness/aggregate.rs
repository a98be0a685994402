//! Order-independent aggregation of protocol traces into summary statistics.

use serde::Serialize;

use crate::protocol::ProtocolTrace;
use crate::sim::TruePhase;
use crate::stats::{wrapped_separation, Tolerance};

use super::summary::CoverageSummary;

/// A fraction together with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FracErr {
    pub value: f64,
    pub stderr: f64,
}

impl FracErr {
    pub fn from_counts(hits: u64, total: u64) -> Self {
        if total == 0 {
            return Self {
                value: 0.0,
                stderr: 0.0,
            };
        }
        let p = hits as f64 / total as f64;
        Self {
            value: p,
            stderr: (p * (1.0 - p) / total as f64).sqrt(),
        }
    }
}

/// Per-trial digest; traces can be dropped once this is extracted, which
/// keeps long-peak-list alternatives from piling up in memory across a
/// batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialStat {
    pub completed: bool,
    pub covered: bool,
    /// Wrapped |phi - phi_hat|; NaN when the run aborted.
    pub abs_error: f64,
    pub sigma: f64,
    pub confidence: f64,
    pub ambiguous: bool,
    pub high_risk: bool,
    pub resources: u64,
    pub steps: u64,
}

impl TrialStat {
    pub fn from_trace(trace: &ProtocolTrace, truth: &TruePhase, tol: &Tolerance) -> Self {
        let flags = trace.combined_flags();
        let est = trace.final_estimate();
        let completed = trace.completed() && est.is_some();
        let (abs_error, sigma, confidence, covered) = match est {
            Some(e) if completed => {
                let err = wrapped_separation(e.phi_hat, truth.value());
                (err, e.sigma, e.confidence, err <= tol.g() * e.sigma)
            }
            _ => (f64::NAN, f64::NAN, f64::NAN, false),
        };
        Self {
            completed,
            covered,
            abs_error,
            sigma,
            confidence,
            ambiguous: flags.ambiguous,
            high_risk: flags.high_risk_classifier,
            resources: trace.resources.total,
            steps: trace.steps.len() as u64,
        }
    }
}

/// Fold per-trial digests into the coverage summary. Addition-only, so the
/// result is independent of the order trials are folded in.
pub(super) fn summarize_stats(stats: &[TrialStat]) -> CoverageSummary {
    let mut covered = 0u64;
    let mut missed = 0u64;
    let mut restarted = 0u64;
    let mut ambiguous = 0u64;
    let mut high_risk = 0u64;
    let mut sigma_sum = 0.0;
    let mut err_sum = 0.0;
    let mut err_sq_sum = 0.0;
    let mut max_abs_err: f64 = 0.0;
    let mut resources_sum = 0.0;
    let mut steps_sum = 0u64;
    let mut confidence_final = f64::NAN;
    for s in stats {
        if s.ambiguous {
            ambiguous += 1;
        }
        if s.high_risk {
            high_risk += 1;
        }
        resources_sum += s.resources as f64;
        steps_sum += s.steps;
        if !s.completed {
            restarted += 1;
            continue;
        }
        confidence_final = s.confidence;
        err_sum += s.abs_error;
        err_sq_sum += s.abs_error * s.abs_error;
        max_abs_err = max_abs_err.max(s.abs_error);
        sigma_sum += s.sigma;
        if s.covered {
            covered += 1;
        } else {
            missed += 1;
        }
    }
    let total = stats.len() as u64;
    let completed = covered + missed;
    CoverageSummary {
        trials: total,
        covered,
        missed,
        restarted,
        covered_frac: FracErr::from_counts(covered, total),
        missed_frac: FracErr::from_counts(missed, total),
        restart_frac: FracErr::from_counts(restarted, total),
        coverage_completed: FracErr::from_counts(covered, completed),
        target_confidence: confidence_final,
        ambiguous_frac: FracErr::from_counts(ambiguous, total),
        high_risk_frac: FracErr::from_counts(high_risk, total),
        mean_sigma_k: if completed > 0 {
            sigma_sum / completed as f64
        } else {
            f64::NAN
        },
        mean_abs_error: if completed > 0 {
            err_sum / completed as f64
        } else {
            f64::NAN
        },
        rms_error: if completed > 0 {
            (err_sq_sum / completed as f64).sqrt()
        } else {
            f64::NAN
        },
        max_abs_error: max_abs_err,
        mean_steps: steps_sum as f64 / total as f64,
        mean_resources: resources_sum / total as f64,
    }
}

/// Aggregate protocol traces against their hidden phases.
///
/// Each trial ends in exactly one of three bins: covered (completed and the
/// truth within `g sigma_K` of the estimate), missed (completed, outside),
/// or restarted (aborted on a detected estimation error). The headline
/// coverage is taken over completed runs, which is the population the K-step
/// confidence statement speaks about; an aborted run is repeated wholesale,
/// not graded.
pub fn aggregate(
    traces: &[ProtocolTrace],
    truths: &[TruePhase],
    tol: &Tolerance,
) -> CoverageSummary {
    assert_eq!(traces.len(), truths.len(), "one truth per trace");
    let stats: Vec<TrialStat> = traces
        .iter()
        .zip(truths)
        .map(|(trace, truth)| TrialStat::from_trace(trace, truth, tol))
        .collect();
    summarize_stats(&stats)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in points {
        sx += x.ln();
        sy += y.ln();
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in points {
        let dx = x.ln() - mx;
        num += dx * (y.ln() - my);
        den += dx * dx;
    }
    num / den
}
