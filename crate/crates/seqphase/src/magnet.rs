//! Magnetic-field measurement built on the phase protocol: interrogation
//! time selection, field-to-phase conversion with offset-field matching,
//! coherence budgeting, and conversion of the final phase width back to
//! field units.
//!
//! Works in CGS-Gaussian units (gauss, erg, seconds).

use thiserror::Error;

use crate::protocol::{run_protocol, ProtocolError, ProtocolParams, ProtocolTrace};
use crate::sim::{Apparatus, EnsembleSpec, SimError, TruePhase};
use crate::stats::{wrap_angle, Tolerance};

/// Reduced Planck constant, erg s.
pub const HBAR: f64 = 1.0546e-27;
/// Bohr magneton, erg/G; the default differential magnetic moment.
pub const MU_BOHR: f64 = 9.2740e-21;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MagnetError {
    #[error("field bounds must satisfy 0 <= b_minus < b_plus")]
    BadBounds,
    #[error("times must satisfy 0 < tau1 <= tau_c")]
    BadTimes,
    #[error("magnetic moment must be positive")]
    BadMoment,
    #[error(
        "field window spans {span_phase:.3} rad of phase at tau1 = {tau1:.3e} s; \
         reduce tau1 to at most {max_tau1:.3e} s"
    )]
    InfeasibleWindow {
        span_phase: f64,
        tau1: f64,
        max_tau1: f64,
    },
    #[error("hidden field {0} G lies outside the scenario window")]
    FieldOutOfWindow(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// How the finite coherence time limits the sequence.
///
/// `HardCap` treats `tau_c` as a duration budget: sequences never exceed
/// `n_cap = floor(tau_c / tau1)` rotations and keep full contrast inside it.
/// `Exponential` additionally damps the contrast by `exp(-n tau1 / tau_c)`,
/// the white-noise dephasing model with `tau_c = 2 / Gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoherenceModel {
    #[default]
    HardCap,
    Exponential,
}

/// A field-measurement scenario: prior window, transition moment, timing and
/// ensemble size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldScenario {
    /// Prior field window, gauss.
    pub b_minus: f64,
    pub b_plus: f64,
    /// Differential magnetic moment, erg/G.
    pub mu: f64,
    /// Primary interrogation time, s.
    pub tau1: f64,
    /// Coherence time, s.
    pub tau_c: f64,
    pub n_probes: u64,
    pub n_probes_comp: u64,
    pub coherence: CoherenceModel,
}

impl FieldScenario {
    pub fn new(
        b_minus: f64,
        b_plus: f64,
        tau1: f64,
        tau_c: f64,
        n_probes: u64,
    ) -> Result<Self, MagnetError> {
        let sc = Self {
            b_minus,
            b_plus,
            mu: MU_BOHR,
            tau1,
            tau_c,
            n_probes,
            n_probes_comp: n_probes,
            coherence: CoherenceModel::default(),
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), MagnetError> {
        if !(self.b_minus >= 0.0 && self.b_plus > self.b_minus) {
            return Err(MagnetError::BadBounds);
        }
        if !(self.tau1 > 0.0 && self.tau_c >= self.tau1) {
            return Err(MagnetError::BadTimes);
        }
        if !(self.mu > 0.0) {
            return Err(MagnetError::BadMoment);
        }
        if self.n_probes == 0 || self.n_probes_comp == 0 {
            return Err(MagnetError::Sim(SimError::EmptyEnsemble));
        }
        Ok(())
    }

    /// Accumulated phase per gauss per 1-fold sequence, `mu tau1 / hbar`.
    pub fn phase_per_gauss(&self) -> f64 {
        self.mu * self.tau1 / HBAR
    }
}

/// Resolved measurement plan: protocol parameters, the offset field, and the
/// conversion factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPlan {
    pub params: ProtocolParams,
    /// Offset field B0 subtracted before estimation, gauss.
    pub offset_b0: f64,
    /// Contrast factor per unit exposure used in the simulation.
    pub epsilon: f64,
    kappa: f64,
    b_minus: f64,
    b_plus: f64,
}

impl FieldPlan {
    /// Residual phase accumulated by field `b` after an n-fold sequence,
    /// wrapped into `(-pi, pi]`.
    pub fn field_to_phase(&self, b: f64, n_fold: u32) -> f64 {
        wrap_angle(f64::from(n_fold) * self.kappa * (b - self.offset_b0))
    }

    /// Invert a 1-fold residual phase back to the field, unwrapping into the
    /// prior window.
    pub fn phase_to_field(&self, phi: f64) -> f64 {
        let period = std::f64::consts::TAU / self.kappa;
        let base = self.offset_b0 + phi / self.kappa;
        let mut best = base;
        let mut best_dist = f64::INFINITY;
        for j in -3i32..=3 {
            let b = base + f64::from(j) * period;
            let dist = (self.b_minus - b).max(0.0) + (b - self.b_plus).max(0.0);
            if dist < best_dist - 1e-30 {
                best = b;
                best_dist = dist;
            }
        }
        best
    }
}

/// Resolve a scenario into a plan: offset field from the matching relation,
/// coherence cap, and a step count bounded by the scenario's own estimate
/// `K ~ 1 + ln(tau_c/tau1) / ln(sqrt(N))`.
pub fn plan_scenario(
    sc: &FieldScenario,
    tol: Tolerance,
    requested_steps: u32,
) -> Result<FieldPlan, MagnetError> {
    sc.validate()?;
    let kappa = sc.phase_per_gauss();
    let span_phase = kappa * (sc.b_plus - sc.b_minus);
    if span_phase > std::f64::consts::TAU * (1.0 + 1e-12) {
        return Err(MagnetError::InfeasibleWindow {
            span_phase,
            tau1: sc.tau1,
            max_tau1: sc.tau1 * std::f64::consts::TAU / span_phase,
        });
    }
    // Largest integer M with B0 = 2 pi M / kappa <= b_plus.
    let m = (kappa * sc.b_plus / std::f64::consts::TAU).floor().max(0.0);
    let offset_b0 = std::f64::consts::TAU * m / kappa;
    let n_cap = ((sc.tau_c / sc.tau1).floor() as u64).clamp(1, u64::from(u32::MAX)) as u32;
    let ln_sqrt_n = (sc.n_probes as f64).sqrt().ln();
    let k_scenario = if ln_sqrt_n > 0.0 {
        (1.0 + (sc.tau_c / sc.tau1).ln() / ln_sqrt_n).round().max(1.0) as u32
    } else {
        1
    };
    let max_steps = requested_steps.clamp(1, k_scenario.max(1));
    let epsilon = match sc.coherence {
        CoherenceModel::HardCap => 1.0,
        CoherenceModel::Exponential => (-sc.tau1 / sc.tau_c).exp(),
    };
    let params = ProtocolParams::new(tol, max_steps)?.with_n_cap(n_cap);
    Ok(FieldPlan {
        params,
        offset_b0,
        epsilon,
        kappa,
        b_minus: sc.b_minus,
        b_plus: sc.b_plus,
    })
}

/// Final field estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldEstimate {
    pub b_hat: f64,
    /// One-sigma field precision, `hbar sigma_K / (mu tau1)`.
    pub delta_b: f64,
    pub steps_used: u32,
    pub offset_b0: f64,
}

/// One complete field measurement: protocol trace plus the field-space
/// summary (absent when the run aborted on an estimation error).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMeasurement {
    pub trace: ProtocolTrace,
    pub estimate: Option<FieldEstimate>,
    /// Residual phase the hidden field maps to.
    pub residual_phase: TruePhase,
}

/// Measure a hidden field: plan the scenario, run the phase protocol on the
/// residual field, and convert the result back to gauss.
pub fn run_field_measurement(
    sc: &FieldScenario,
    hidden_b: f64,
    tol: Tolerance,
    requested_steps: u32,
    seed: u64,
) -> Result<FieldMeasurement, MagnetError> {
    let plan = plan_scenario(sc, tol, requested_steps)?;
    let spec = EnsembleSpec::new(sc.n_probes, sc.n_probes_comp, plan.epsilon, seed)?;
    let mut app = Apparatus::new(spec);
    run_field_measurement_on(&mut app, sc, &plan, hidden_b)
}

/// Same as [`run_field_measurement`] but on an existing apparatus stream,
/// used by the Monte Carlo harness.
pub fn run_field_measurement_on(
    app: &mut Apparatus,
    sc: &FieldScenario,
    plan: &FieldPlan,
    hidden_b: f64,
) -> Result<FieldMeasurement, MagnetError> {
    if !(sc.b_minus..=sc.b_plus).contains(&hidden_b) {
        return Err(MagnetError::FieldOutOfWindow(hidden_b));
    }
    let residual_phase = TruePhase::new(plan.field_to_phase(hidden_b, 1));
    let trace = run_protocol(app, residual_phase, &plan.params)?;
    let estimate = trace.final_estimate().filter(|_| trace.completed()).map(|est| {
        let b_hat = plan.phase_to_field(est.phi_hat);
        let delta_b = HBAR * est.sigma / (sc.mu * sc.tau1);
        FieldEstimate {
            b_hat,
            delta_b,
            steps_used: est.step_index,
            offset_b0: plan.offset_b0,
        }
    });
    Ok(FieldMeasurement {
        trace,
        estimate,
        residual_phase,
    })
}
