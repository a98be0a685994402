//! The K-step iterative engine: picks the rotation multiple for each step,
//! runs the paired primary/complementary measurements, selects the
//! compatible alternative among the n-fold posterior peaks, detects
//! estimation errors, and tracks confidence and resource consumption.

use thiserror::Error;

use crate::estimate::{
    classify_sign, combine_step, estimate_magnitude_with_contrast, PhaseEstimate,
    SignClassification,
};
use crate::sim::{effective_sigma, Apparatus, EnsembleSpec, MeasurementRecord, TruePhase};
use crate::stats::{
    angle_mixture_from_szn, nu_factor, wrap_angle, wrapped_separation, AlternativeSet,
    GaussianPeak, StatsError, Tolerance,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("protocol needs at least one step")]
    NoSteps,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Static parameters of one protocol run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub tol: Tolerance,
    /// Maximum number of steps K.
    pub max_steps: u32,
    /// Stop early once `g * sigma` drops to this precision.
    pub target_precision: Option<f64>,
    /// Hard cap on the rotation multiple (coherence budget).
    pub n_cap: Option<u32>,
    /// Count complementary-ensemble channel uses in the resource ledger.
    pub count_complementary: bool,
}

impl ProtocolParams {
    pub fn new(tol: Tolerance, max_steps: u32) -> Result<Self, ProtocolError> {
        if max_steps == 0 {
            return Err(ProtocolError::NoSteps);
        }
        // The engine never operates at beta_tilde >= 1/2; fail here rather
        // than mid-run.
        nu_factor(&tol)?;
        Ok(Self {
            tol,
            max_steps,
            target_precision: None,
            n_cap: None,
            count_complementary: false,
        })
    }

    pub fn with_n_cap(mut self, n_cap: u32) -> Self {
        self.n_cap = Some(n_cap.max(1));
        self
    }

    pub fn with_target_precision(mut self, delta: f64) -> Self {
        self.target_precision = Some(delta);
        self
    }

    pub fn with_complementary_counting(mut self, yes: bool) -> Self {
        self.count_complementary = yes;
        self
    }
}

/// Next rotation multiple: `min(floor(nu / sigma_prev), n_cap)`, at least 1.
///
/// Returns the multiple and whether it degenerated to 1, in which case no
/// precision gain is possible and the caller should stop iterating.
pub fn next_n(sigma_prev: f64, tol: &Tolerance, n_cap: Option<u32>) -> Result<(u32, bool), ProtocolError> {
    let nu = nu_factor(tol)?;
    let raw = (nu / sigma_prev).floor();
    let mut n = if raw >= 1.0 {
        if raw >= f64::from(u32::MAX) {
            u32::MAX
        } else {
            raw as u32
        }
    } else {
        1
    };
    if let Some(cap) = n_cap {
        n = n.min(cap.max(1));
    }
    Ok((n, n <= 1))
}

/// Per-step condition flags carried in the trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    /// Runner-up alternative was credible (weight ratio above beta_tilde).
    pub ambiguous: bool,
    /// Magnitude estimate hit the arccos branch edge.
    pub degenerate: bool,
    /// Predicted sign-classification error above beta_tilde.
    pub high_risk_classifier: bool,
    /// Rotation multiple stayed at 1; the step cannot shrink the width.
    pub no_gain: bool,
}

impl StepFlags {
    pub fn any(&self) -> bool {
        self.ambiguous || self.degenerate || self.high_risk_classifier || self.no_gain
    }

    /// Stable short names, for CSV output.
    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.ambiguous {
            v.push("AMBIGUOUS");
        }
        if self.degenerate {
            v.push("DEGENERATE");
        }
        if self.high_risk_classifier {
            v.push("HIGH_RISK");
        }
        if self.no_gain {
            v.push("NO_GAIN");
        }
        v
    }
}

/// Everything recorded about one protocol step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub n_fold: u32,
    pub primary: MeasurementRecord,
    pub complementary: MeasurementRecord,
    pub classification: SignClassification,
    pub alternatives: AlternativeSet,
    /// Index of the selected peak in `alternatives`.
    pub selected: usize,
    /// Posterior weight ratio of the runner-up against the selected peak.
    pub ambiguity_ratio: f64,
    pub estimate: PhaseEstimate,
    pub flags: StepFlags,
}

/// Channel-use accounting: step i costs `N * n_i` primary applications
/// (plus `N' * n_i` when complementary uses are counted).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResourceLedger {
    pub per_step: Vec<u64>,
    pub total: u64,
    pub include_complementary: bool,
}

impl ResourceLedger {
    fn push(&mut self, spec: &EnsembleSpec, n_fold: u32) {
        let mut r = spec.n_probes * u64::from(n_fold);
        if self.include_complementary {
            r += spec.n_probes_comp * u64::from(n_fold);
        }
        self.per_step.push(r);
        self.total += r;
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// No alternative peak fell inside the compatibility interval at this
    /// step; the whole procedure must be repeated.
    EstimationError { step: u32 },
}

/// Full record of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolTrace {
    pub steps: Vec<StepRecord>,
    pub resources: ResourceLedger,
    pub outcome: RunOutcome,
}

impl ProtocolTrace {
    /// Estimate after the last completed step.
    pub fn final_estimate(&self) -> Option<&PhaseEstimate> {
        self.steps.last().map(|s| &s.estimate)
    }

    pub fn completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }

    pub fn n_folds(&self) -> Vec<u32> {
        self.steps.iter().map(|s| s.n_fold).collect()
    }

    /// Largest predicted sign-classification error across steps.
    pub fn max_beta_prime(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.classification.beta_prime)
            .fold(0.0, f64::max)
    }

    /// Union of all per-step flags.
    pub fn combined_flags(&self) -> StepFlags {
        let mut f = StepFlags::default();
        for s in &self.steps {
            f.ambiguous |= s.flags.ambiguous;
            f.degenerate |= s.flags.degenerate;
            f.high_risk_classifier |= s.flags.high_risk_classifier;
            f.no_gain |= s.flags.no_gain;
        }
        f
    }
}

/// Result of picking one alternative against the running estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Compatibility weights `w_k` for every peak (unnormalized).
    pub weights: Vec<f64>,
    /// `w_2 / (w_1 + w_2)` for the best and runner-up peaks; the posterior
    /// probability that the runner-up was the truth.
    pub ambiguity_ratio: f64,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no alternative peak inside the compatibility interval")]
pub struct NoCompatiblePeak;

/// True when no peak center lies within the closed compatibility interval
/// `|phi - center| <= g (sigma_prev - sigma_n)` around the running estimate.
pub fn detect_estimation_error(
    interval_center: f64,
    sigma_prev: f64,
    alts: &AlternativeSet,
    tol: &Tolerance,
) -> bool {
    let radius = tol.g() * (sigma_prev - alts.sigma());
    !alts
        .peaks
        .iter()
        .any(|p| wrapped_separation(p.center, interval_center) <= radius)
}

/// Select the most probable alternative inside the compatibility interval.
///
/// Every peak gets the weight
/// `w_k = exp(-d_k^2 / (2 (sigma_prev^2 + sigma_n^2)))` with `d_k` the
/// wrapped distance to the running estimate; the winner is the in-interval
/// argmax. The ambiguity ratio compares the winner against the best other
/// peak anywhere, which at the worst-case boundary geometry equals the
/// design misclassification tolerance.
pub fn select_alternative(
    interval_center: f64,
    sigma_prev: f64,
    alts: &AlternativeSet,
    tol: &Tolerance,
) -> Result<Selection, NoCompatiblePeak> {
    let sigma_n = alts.sigma();
    let radius = tol.g() * (sigma_prev - sigma_n);
    let denom = 2.0 * (sigma_prev * sigma_prev + sigma_n * sigma_n);
    let mut weights = Vec::with_capacity(alts.len());
    let mut best: Option<(usize, f64)> = None;
    for (k, peak) in alts.peaks.iter().enumerate() {
        let d = wrapped_separation(peak.center, interval_center);
        let w = (-d * d / denom).exp();
        weights.push(w);
        if d <= radius && best.map_or(true, |(_, bw)| w > bw) {
            best = Some((k, w));
        }
    }
    let (index, w_best) = best.ok_or(NoCompatiblePeak)?;
    let w_runner_up = weights
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != index)
        .map(|(_, w)| *w)
        .fold(0.0, f64::max);
    let ambiguity_ratio = if w_best + w_runner_up > 0.0 {
        w_runner_up / (w_best + w_runner_up)
    } else {
        0.0
    };
    Ok(Selection {
        index,
        weights,
        ambiguity_ratio,
        ambiguous: ambiguity_ratio > tol.beta_tilde(),
    })
}

/// Run the K-step protocol on the given apparatus.
///
/// Step 1 measures the angle magnitude and sign directly; each later step i
/// applies `n_i = min(floor(nu / sigma_{i-1}), n_cap)` rotations, builds the
/// n-peak mixture, selects the compatible alternative and fuses it into the
/// running estimate. The reported per-step width is the selected peak width
/// `sigma_1 / (n_i eps^{n_i})`, the error bar the confidence statement is
/// made at; fused centers use the exact combination formulas.
pub fn run_protocol(
    app: &mut Apparatus,
    truth: TruePhase,
    params: &ProtocolParams,
) -> Result<ProtocolTrace, ProtocolError> {
    if params.max_steps == 0 {
        return Err(ProtocolError::NoSteps);
    }
    let spec = *app.spec();
    let tol = params.tol;
    let beta_tilde = tol.beta_tilde();
    let mut resources = ResourceLedger {
        include_complementary: params.count_complementary,
        ..ResourceLedger::default()
    };
    let mut steps: Vec<StepRecord> = Vec::new();

    // Step 1: plain Ramsey pair, sign from the complementary test.
    let primary = app.sample_primary(truth, 1);
    let complementary = app.sample_complementary(truth, 1);
    resources.push(&spec, 1);
    let contrast = spec.epsilon;
    let mag = estimate_magnitude_with_contrast(&primary, contrast)
        .expect("primary basis by construction");
    let class = classify_sign(
        &complementary,
        mag.phi_tilde,
        spec.n_probes,
        contrast,
        beta_tilde,
    )
    .expect("complementary basis by construction");
    let sigma1 = effective_sigma(spec.n_probes, 1, spec.epsilon);
    // The two sign alternatives of the first measurement.
    let alternatives = AlternativeSet {
        n_fold: 1,
        peaks: vec![
            GaussianPeak {
                center: wrap_angle(mag.phi_tilde),
                sigma: sigma1,
                weight: 0.5,
            },
            GaussianPeak {
                center: wrap_angle(-mag.phi_tilde),
                sigma: sigma1,
                weight: 0.5,
            },
        ],
    };
    let selected = if class.alpha >= 0 { 0 } else { 1 };
    let estimate = PhaseEstimate {
        phi_hat: alternatives.peaks[selected].center,
        sigma: sigma1,
        step_index: 1,
        confidence: 1.0 - tol.beta(),
    };
    steps.push(StepRecord {
        n_fold: 1,
        primary,
        complementary,
        classification: class,
        alternatives,
        selected,
        ambiguity_ratio: class.beta_prime,
        estimate,
        flags: StepFlags {
            degenerate: mag.degenerate,
            high_risk_classifier: class.high_risk,
            ..StepFlags::default()
        },
    });

    let precision_reached = |est: &PhaseEstimate| {
        params
            .target_precision
            .is_some_and(|delta| tol.g() * est.sigma <= delta)
    };

    let mut current = estimate;
    for step_index in 2..=params.max_steps {
        if precision_reached(&current) {
            break;
        }
        let (n_fold, no_gain) = next_n(current.sigma, &tol, params.n_cap)?;
        if no_gain {
            // A 1-fold repeat cannot shrink the interval; stop here.
            if let Some(last) = steps.last_mut() {
                last.flags.no_gain = true;
            }
            break;
        }
        let contrast_n = spec.epsilon.powi(n_fold as i32);
        let primary = app.sample_primary(truth, n_fold);
        let complementary = app.sample_complementary(truth, n_fold);
        resources.push(&spec, n_fold);
        let mag = estimate_magnitude_with_contrast(&primary, contrast_n)
            .expect("primary basis by construction");
        let class = classify_sign(
            &complementary,
            mag.phi_tilde,
            spec.n_probes,
            contrast_n,
            beta_tilde,
        )
        .expect("complementary basis by construction");
        let sigma_n = effective_sigma(spec.n_probes, n_fold, spec.epsilon);
        // Candidate peaks of the signed n-fold angle.
        let corrected = (primary.s_z / contrast_n).clamp(-1.0, 1.0);
        let mut alternatives = angle_mixture_from_szn(corrected, n_fold, spec.n_probes)?;
        if class.alpha < 0 {
            for p in &mut alternatives.peaks {
                p.center = wrap_angle(-p.center);
            }
        }
        for p in &mut alternatives.peaks {
            p.sigma = sigma_n;
        }
        let selection = match select_alternative(current.phi_hat, current.sigma, &alternatives, &tol)
        {
            Ok(sel) => sel,
            Err(NoCompatiblePeak) => {
                return Ok(ProtocolTrace {
                    steps,
                    resources,
                    outcome: RunOutcome::EstimationError { step: step_index },
                });
            }
        };
        let peak = alternatives.peaks[selection.index];
        let fused = combine_step(&current, &peak, beta_tilde);
        // Error bar: the selected peak width, which obeys the width
        // recurrence sigma_i = sigma_1 / n_i exactly when eps = 1.
        current = PhaseEstimate {
            phi_hat: fused.phi_hat,
            sigma: sigma_n,
            step_index: fused.step_index,
            confidence: fused.confidence,
        };
        steps.push(StepRecord {
            n_fold,
            primary,
            complementary,
            classification: class,
            selected: selection.index,
            ambiguity_ratio: selection.ambiguity_ratio,
            estimate: current,
            flags: StepFlags {
                ambiguous: selection.ambiguous,
                degenerate: mag.degenerate,
                high_risk_classifier: class.high_risk,
                no_gain: false,
            },
            alternatives,
        });
    }

    Ok(ProtocolTrace {
        steps,
        resources,
        outcome: RunOutcome::Completed,
    })
}

/// Run the protocol on a fresh apparatus seeded from the spec.
pub fn run_protocol_seeded(
    spec: &EnsembleSpec,
    truth: TruePhase,
    params: &ProtocolParams,
) -> Result<ProtocolTrace, ProtocolError> {
    let mut app = Apparatus::new(*spec);
    run_protocol(&mut app, truth, params)
}

/// Ideal (no-floor) precision/resource prediction for a K-step run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPrediction {
    /// Predicted precision `delta_K = g sigma_1 (sigma_1 / nu)^(K-1)`.
    pub delta_k: f64,
    /// Channel uses of the last step, `nu^(K-1) N^((K+1)/2)`.
    pub r_last: f64,
    /// Total channel uses across steps.
    pub r_total: f64,
    /// Repetitions of the primary measurement that plain averaging would
    /// need to reach the same precision.
    pub k_std: f64,
}

/// Closed-form scaling of precision against resources for ideal steps.
pub fn resource_scaling(
    params: &ProtocolParams,
    n_probes: u64,
) -> Result<ScalingPrediction, ProtocolError> {
    let g = params.tol.g();
    let nu = nu_factor(&params.tol)?;
    let k = params.max_steps;
    let n = n_probes as f64;
    let sigma1 = 1.0 / n.sqrt();
    let delta_k = g * sigma1 * (sigma1 / nu).powi(k as i32 - 1);
    let mut r_total = 0.0;
    let mut r_last = 0.0;
    for i in 1..=k {
        r_last = nu.powi(i as i32 - 1) * n.powf((f64::from(i) + 1.0) / 2.0);
        r_total += r_last;
    }
    let k_std = (g * sigma1 / delta_k).powi(2);
    Ok(ScalingPrediction {
        delta_k,
        r_last,
        r_total,
        k_std,
    })
}
