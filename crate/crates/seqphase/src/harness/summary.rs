//! Serializable experiment summaries. Every reported fraction carries its
//! standard error; the JSON field order is the struct order and is stable.

use serde::Serialize;

use super::aggregate::FracErr;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub version: String,
    pub mode: String,
    pub config: ConfigEcho,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification: Option<MisclassSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dephasing: Option<DephasingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnetometry: Option<MagnetometrySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropySummary>,
}

/// The scalar configuration echoed into every summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub trials: u64,
    pub atoms: u64,
    pub atoms_comp: u64,
    pub beta: f64,
    pub beta_tilde: f64,
    pub steps: u32,
    pub epsilon: f64,
    pub seed: u64,
    pub threads: usize,
}

/// Aggregates of protocol runs against known truths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSummary {
    pub trials: u64,
    pub covered: u64,
    pub missed: u64,
    pub restarted: u64,
    /// Fractions of all trials; the three sum to one.
    pub covered_frac: FracErr,
    pub missed_frac: FracErr,
    pub restart_frac: FracErr,
    /// Coverage among completed runs, the confidence-criterion comparable.
    pub coverage_completed: FracErr,
    /// Nominal confidence `(1-beta)(1-beta_tilde)^(K-1)` of the final step.
    pub target_confidence: f64,
    pub ambiguous_frac: FracErr,
    pub high_risk_frac: FracErr,
    pub mean_sigma_k: f64,
    pub mean_abs_error: f64,
    pub rms_error: f64,
    pub max_abs_error: f64,
    pub mean_steps: f64,
    pub mean_resources: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub rows: Vec<ScalingRow>,
    pub slopes: Vec<SlopeRow>,
}

/// One (K, N) cell of the scaling sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub steps: u32,
    pub atoms: u64,
    pub trials: u64,
    pub completed: u64,
    /// Mean realized channel uses per run.
    pub resources_mean: f64,
    /// Empirical precision `g * mean(sigma_K)` over completed runs.
    pub delta_empirical: f64,
    /// Ideal no-floor prediction for the same K and N.
    pub delta_predicted: f64,
    pub resources_predicted: f64,
    /// Repetitions plain averaging would need for the same precision.
    pub k_std_predicted: f64,
}

/// Fitted log-log slope of precision against resources at fixed K.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub steps: u32,
    pub slope: f64,
    pub target: f64,
    pub abs_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisclassSummary {
    pub rows: Vec<MisclassRow>,
}

/// Sign-classification error rate at one probed magnitude.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MisclassRow {
    pub phi: f64,
    pub trials: u64,
    pub errors: u64,
    pub rate: FracErr,
    /// Gaussian-model prediction for the same geometry.
    pub predicted_beta_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DephasingSummary {
    pub epsilon: f64,
    pub atoms: u64,
    /// Fold count minimizing the effective width in the integer scan.
    pub argmin_n: u32,
    pub min_sigma: f64,
    /// Continuum optimum `-1 / ln(eps)`.
    pub n_c: f64,
    /// Width at the continuum optimum, `sigma_1 e ln(1/eps)`.
    pub sigma_at_n_c: f64,
    pub scanned_up_to: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MagnetometrySummary {
    pub trials: u64,
    pub completed: u64,
    pub restarted: u64,
    pub restart_frac: FracErr,
    pub offset_b0: f64,
    pub steps_planned: u32,
    pub mean_steps_used: f64,
    /// Mean reported one-sigma precision, gauss.
    pub mean_delta_b: f64,
    /// Single-step shot-noise precision `hbar / (mu tau1 sqrt(N))`, gauss.
    pub delta_b_single: f64,
    pub rms_field_error: f64,
    /// Fraction of completed runs with |b_hat - b| within g * delta_b.
    pub within_g_frac: FracErr,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropySummary {
    pub sigma1: f64,
    pub rows: Vec<EntropyRow>,
    /// Largest |H_n - H_1| over the scanned folds.
    pub max_gap_vs_single: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub n_fold: u32,
    pub entropy: f64,
    pub peaks_overlap: bool,
}
