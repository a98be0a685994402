//! Turns raw measurement records into phase information: magnitude of the
//! (possibly n-fold) angle from the primary record, sign of the angle from
//! the complementary record, and Gaussian fusion of successive step
//! posteriors.

use thiserror::Error;

use crate::sim::{Basis, MeasurementRecord};
use crate::stats::{erfc, wrap_angle, wrap_diff, GaussianPeak};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("expected a record from the {expected:?} basis, got {got:?}")]
    WrongBasis { expected: Basis, got: Basis },
    #[error("contrast must lie in (0, 1], got {0}")]
    ContrastOutOfRange(f64),
}

/// Magnitude of the scaled angle recovered from a primary record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnitudeEstimate {
    /// `arccos` of the contrast-corrected polarization, in `[0, pi]`. For an
    /// n-fold record this is the magnitude of `n phi`, not of `phi` itself.
    pub phi_tilde: f64,
    /// Width of the implied angle peaks in `phi` units: `1/(n eps^n sqrt(N))`.
    pub sigma: f64,
    /// Polarization landed on (or beyond) +-1, where the arccos branch ends
    /// and the width formula collapses.
    pub degenerate: bool,
}

/// Magnitude estimate for a unit-contrast record.
pub fn estimate_magnitude(rec: &MeasurementRecord) -> Result<MagnitudeEstimate, EstimateError> {
    estimate_magnitude_with_contrast(rec, 1.0)
}

/// Magnitude estimate with the contrast `eps^n` divided back out, as needed
/// when dephasing damps the oscillation amplitude. The width picks up the
/// matching `1/eps^n` inflation.
pub fn estimate_magnitude_with_contrast(
    rec: &MeasurementRecord,
    contrast: f64,
) -> Result<MagnitudeEstimate, EstimateError> {
    if rec.basis != Basis::PrimaryX {
        return Err(EstimateError::WrongBasis {
            expected: Basis::PrimaryX,
            got: rec.basis,
        });
    }
    if !(contrast > 0.0 && contrast <= 1.0) {
        return Err(EstimateError::ContrastOutOfRange(contrast));
    }
    let corrected = rec.s_z / contrast;
    let degenerate = corrected.abs() >= 1.0;
    let phi_tilde = corrected.clamp(-1.0, 1.0).acos();
    let n = f64::from(rec.n_fold.max(1));
    let sigma = 1.0 / (n * contrast * (rec.ensemble_size() as f64).sqrt());
    Ok(MagnitudeEstimate {
        phi_tilde,
        sigma,
        degenerate,
    })
}

/// Outcome of the complementary sign test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignClassification {
    /// Chosen sign of the angle, +1 or -1.
    pub alpha: i8,
    /// Decision boundary on the complementary polarization, the midpoint of
    /// the two predicted means.
    pub boundary: f64,
    /// Predicted misclassification probability.
    pub beta_prime: f64,
    /// Predicted error exceeds the per-step classification tolerance; occurs
    /// when the angle sits near 0 or pi and the two means almost coincide.
    pub high_risk: bool,
}

/// Classify the angle sign from a complementary record.
///
/// Conditioned on the magnitude `phi_tilde`, the complementary polarization
/// is predicted to concentrate near `+-c sin(phi_tilde) - c sin^2(phi_tilde) / (2N)`
/// (contrast `c`, primary ensemble size `N`) with variance
/// `(1 - c^2 sin^2(phi_tilde)) / N'`. Events above the midpoint boundary are
/// assigned `alpha = +1`, ties toward +1; the misclassification probability
/// is the Gaussian tail beyond half the separation.
pub fn classify_sign(
    comp_rec: &MeasurementRecord,
    phi_tilde: f64,
    n_probes_primary: u64,
    contrast: f64,
    beta_tilde: f64,
) -> Result<SignClassification, EstimateError> {
    if comp_rec.basis != Basis::ComplementaryY {
        return Err(EstimateError::WrongBasis {
            expected: Basis::ComplementaryY,
            got: comp_rec.basis,
        });
    }
    if !(contrast > 0.0 && contrast <= 1.0) {
        return Err(EstimateError::ContrastOutOfRange(contrast));
    }
    let sin_t = phi_tilde.sin();
    let n = n_probes_primary as f64;
    let n_comp = comp_rec.ensemble_size() as f64;
    let bias = -contrast * sin_t * sin_t / (2.0 * n);
    let mean_plus = contrast * sin_t + bias;
    let mean_minus = -contrast * sin_t + bias;
    let boundary = (mean_plus + mean_minus) / 2.0;
    let var = (1.0 - contrast * contrast * sin_t * sin_t).max(0.0) / n_comp;
    let sigma_prime = var.sqrt();
    let beta_prime = if sigma_prime == 0.0 {
        if sin_t.abs() > 0.0 {
            0.0
        } else {
            0.5
        }
    } else {
        erfc(contrast * sin_t.abs() / (std::f64::consts::SQRT_2 * sigma_prime)) / 2.0
    };
    let alpha = if comp_rec.s_z >= boundary { 1 } else { -1 };
    Ok(SignClassification {
        alpha,
        boundary,
        beta_prime,
        high_risk: beta_prime > beta_tilde,
    })
}

/// Running phase estimate after some number of protocol steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate {
    /// Estimate center in `(-pi, pi]`.
    pub phi_hat: f64,
    pub sigma: f64,
    /// 1-based protocol step this estimate came from.
    pub step_index: u32,
    /// `(1 - beta) (1 - beta_tilde)^(step_index - 1)`.
    pub confidence: f64,
}

/// Fuse the running estimate with one selected peak of the new measurement.
///
/// Uses the exact precision-weighted Gaussian combination (center pulled
/// toward the narrower component, width below either input) rather than the
/// limit forms `center ~ peak`, `width ~ peak width`; the exact expressions
/// reduce to those within a relative `(sigma_n / sigma_prev)^2`. Confidence
/// is multiplied by `1 - beta_tilde` for the selection risk taken.
pub fn combine_step(prev: &PhaseEstimate, peak: &GaussianPeak, beta_tilde: f64) -> PhaseEstimate {
    let v_prev = prev.sigma * prev.sigma;
    let v_peak = peak.sigma * peak.sigma;
    // Work on the line through the previous center using the minor arc.
    let diff = wrap_diff(peak.center, prev.phi_hat);
    let phi_hat = wrap_angle(prev.phi_hat + diff * v_prev / (v_prev + v_peak));
    let sigma = prev.sigma * peak.sigma / (v_prev + v_peak).sqrt();
    PhaseEstimate {
        phi_hat,
        sigma,
        step_index: prev.step_index + 1,
        confidence: prev.confidence * (1.0 - beta_tilde),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Apparatus, EnsembleSpec, TruePhase};
    use std::f64::consts::PI;

    fn primary_record(n_plus: u64, n_minus: u64) -> MeasurementRecord {
        MeasurementRecord {
            n_plus,
            n_minus,
            s_z: (n_plus as f64 - n_minus as f64) / (n_plus + n_minus) as f64,
            n_fold: 1,
            basis: Basis::PrimaryX,
        }
    }

    fn comp_record(s_z: f64, n: u64) -> MeasurementRecord {
        let n_plus = ((s_z + 1.0) / 2.0 * n as f64).round() as u64;
        MeasurementRecord {
            n_plus,
            n_minus: n - n_plus,
            s_z,
            n_fold: 1,
            basis: Basis::ComplementaryY,
        }
    }

    #[test]
    fn magnitude_at_zero_polarization() {
        let est = estimate_magnitude(&primary_record(500, 500)).unwrap();
        assert!((est.phi_tilde - PI / 2.0).abs() < 1e-15);
        assert!((est.sigma - 1.0 / 1000.0_f64.sqrt()).abs() < 1e-15);
        assert!(!est.degenerate);
    }

    #[test]
    fn magnitude_matches_arccos() {
        let est = estimate_magnitude(&primary_record(600, 400)).unwrap();
        // arccos(0.2) from mpmath.
        assert!((est.phi_tilde - 1.3694384060045658).abs() < 1e-12);
        assert!((est.sigma - 1.0 / 1000.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn magnitude_boundary_flags_degenerate() {
        let est = estimate_magnitude(&primary_record(1000, 0)).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.phi_tilde, 0.0);
    }

    #[test]
    fn magnitude_rejects_wrong_basis() {
        let rec = comp_record(0.1, 1000);
        assert!(matches!(
            estimate_magnitude(&rec),
            Err(EstimateError::WrongBasis { .. })
        ));
    }

    #[test]
    fn magnitude_nfold_scales_width() {
        let mut rec = primary_record(500, 500);
        rec.n_fold = 8;
        let est = estimate_magnitude(&rec).unwrap();
        assert!((est.sigma - 1.0 / (8.0 * 1000.0_f64.sqrt())).abs() < 1e-18);
    }

    #[test]
    fn magnitude_contrast_correction() {
        // s_z = 0.45 under contrast 0.9 means cos = 0.5.
        let mut rec = primary_record(725, 275);
        rec.s_z = 0.45;
        let est = estimate_magnitude_with_contrast(&rec, 0.9).unwrap();
        assert!((est.phi_tilde - 0.5f64.acos()).abs() < 1e-12);
        assert!((est.sigma - 1.0 / (0.9 * 1000.0_f64.sqrt())).abs() < 1e-15);
        // Overshoot past the branch edge clamps and flags.
        rec.s_z = 0.95;
        let est = estimate_magnitude_with_contrast(&rec, 0.9).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.phi_tilde, 0.0);
    }

    #[test]
    fn classify_right_angle_is_exact() {
        let c = classify_sign(&comp_record(0.9, 1000), PI / 2.0, 1000, 1.0, 0.01).unwrap();
        assert_eq!(c.alpha, 1);
        assert_eq!(c.beta_prime, 0.0);
        assert!(!c.high_risk);
    }

    #[test]
    fn classify_zero_angle_is_coin_flip() {
        let c = classify_sign(&comp_record(0.01, 1000), 0.0, 1000, 1.0, 0.01).unwrap();
        assert!((c.beta_prime - 0.5).abs() < 1e-12);
        assert!(c.high_risk);
    }

    #[test]
    fn classify_moderate_angle_negligible_error() {
        // phi_tilde = 1, N = N' = 1000: erf argument ~34.8, error below 1e-10.
        let c = classify_sign(&comp_record(0.8, 1000), 1.0, 1000, 1.0, 0.01).unwrap();
        assert!(c.beta_prime < 1e-10);
        assert!(!c.high_risk);
        assert_eq!(c.alpha, 1);
    }

    #[test]
    fn classify_boundary_and_tie_rule() {
        let phi_tilde = 0.7f64;
        let n = 1000u64;
        let want_boundary = -phi_tilde.sin().powi(2) / (2.0 * n as f64);
        let c = classify_sign(&comp_record(want_boundary, 1000), phi_tilde, n, 1.0, 0.01).unwrap();
        assert!((c.boundary - want_boundary).abs() < 1e-15);
        // Exactly on the boundary resolves to +1.
        assert_eq!(c.alpha, 1);
        let below = classify_sign(
            &comp_record(want_boundary - 1e-6, 1000),
            phi_tilde,
            n,
            1.0,
            0.01,
        )
        .unwrap();
        assert_eq!(below.alpha, -1);
    }

    #[test]
    fn classify_empirical_rate_matches_exact_tail() {
        // At a regime with appreciable error probability, the empirical rate
        // must match the lattice-exact binomial tail; the Gaussian prediction
        // is allowed its half-lattice-step continuity gap.
        let n_comp = 1000u64;
        let phi = 0.05f64;
        let spec = EnsembleSpec::ideal(n_comp, 2024);
        let mut app = Apparatus::new(spec);
        let truth = TruePhase::new(phi);
        let trials = 100_000;
        let mut errors = 0u64;
        let mut c0 = None;
        for _ in 0..trials {
            let rec = app.sample_complementary(truth, 1);
            let c = classify_sign(&rec, phi, n_comp, 1.0, 0.01).unwrap();
            c0.get_or_insert(c);
            if c.alpha != 1 {
                errors += 1;
            }
        }
        let c0 = c0.unwrap();
        let rate = errors as f64 / trials as f64;
        // Exact tail: P(N_+ <= floor(N'(1+boundary)/2)) for q = (1+sin phi)/2.
        let q = (1.0 + phi.sin()) / 2.0;
        let threshold = ((1.0 + c0.boundary) / 2.0 * n_comp as f64).floor() as i64;
        let mut pmf = (1.0 - q).powi(n_comp as i32);
        let mut exact = 0.0;
        for k in 0..=threshold {
            if k > 0 {
                pmf *= (n_comp as f64 - (k as f64 - 1.0)) / k as f64 * q / (1.0 - q);
            }
            exact += pmf;
        }
        let se = (exact * (1.0 - exact) / trials as f64).sqrt();
        assert!(
            (rate - exact).abs() <= 3.0 * se,
            "rate {rate} vs exact {exact} (se {se})"
        );
        // Gaussian prediction within the discreteness envelope of the lattice.
        let envelope = 0.4 / ((n_comp as f64).sqrt() * phi.cos());
        assert!(
            (c0.beta_prime - exact).abs() <= envelope,
            "prediction {} vs exact {exact}",
            c0.beta_prime
        );
    }

    #[test]
    fn classify_sign_symmetry_between_mirrored_phases() {
        // Flipping the hidden phase flips alpha with the same error rate.
        let n_comp = 1000u64;
        let phi = 0.12f64;
        let trials = 40_000;
        let mut errors_pos = 0u64;
        let mut errors_neg = 0u64;
        let spec = EnsembleSpec::ideal(n_comp, 77);
        let mut app_pos = Apparatus::with_stream(spec, 1);
        let mut app_neg = Apparatus::with_stream(spec, 2);
        for _ in 0..trials {
            let rp = app_pos.sample_complementary(TruePhase::new(phi), 1);
            if classify_sign(&rp, phi, n_comp, 1.0, 0.01).unwrap().alpha != 1 {
                errors_pos += 1;
            }
            let rn = app_neg.sample_complementary(TruePhase::new(-phi), 1);
            if classify_sign(&rn, phi, n_comp, 1.0, 0.01).unwrap().alpha != -1 {
                errors_neg += 1;
            }
        }
        let (p1, p2) = (
            errors_pos as f64 / trials as f64,
            errors_neg as f64 / trials as f64,
        );
        let pool = (p1 + p2) / 2.0;
        let se = (2.0 * pool * (1.0 - pool) / trials as f64).sqrt();
        assert!(
            (p1 - p2).abs() <= 3.0 * se.max(1e-4),
            "mirror rates differ: {p1} vs {p2}"
        );
    }

    #[test]
    fn combine_equal_widths_halve_variance() {
        let prev = PhaseEstimate {
            phi_hat: 0.4,
            sigma: 0.03,
            step_index: 1,
            confidence: 0.99,
        };
        let peak = GaussianPeak {
            center: 0.4,
            sigma: 0.03,
            weight: 1.0,
        };
        let fused = combine_step(&prev, &peak, 0.01);
        assert!((fused.phi_hat - 0.4).abs() < 1e-15);
        assert!((fused.sigma - 0.03 / 2.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(fused.step_index, 2);
        assert!((fused.confidence - 0.99 * 0.99).abs() < 1e-15);
    }

    #[test]
    fn combine_matches_direct_formula() {
        // phi1 = 0.5, s1 = 0.03, peak 0.51 +- 0.001 (mpmath reference).
        let prev = PhaseEstimate {
            phi_hat: 0.5,
            sigma: 0.03,
            step_index: 1,
            confidence: 0.99,
        };
        let peak = GaussianPeak {
            center: 0.51,
            sigma: 0.001,
            weight: 1.0,
        };
        let fused = combine_step(&prev, &peak, 0.01);
        assert!((fused.phi_hat - 0.5099889012208657).abs() < 1e-15);
        assert!((fused.sigma - 0.00099944490697915434).abs() < 1e-18);
    }

    #[test]
    fn combine_reduces_to_narrow_peak_limit() {
        // Exact fusion lands within (sigma_n / sigma_prev)^2 of the limit
        // forms, relatively.
        for &(s_prev, s_n) in &[(0.03f64, 0.001f64), (0.1, 0.02), (0.05, 0.01)] {
            let prev = PhaseEstimate {
                phi_hat: -1.2,
                sigma: s_prev,
                step_index: 1,
                confidence: 0.99,
            };
            let peak = GaussianPeak {
                center: -1.2 + 2.0 * s_prev,
                sigma: s_n,
                weight: 1.0,
            };
            let fused = combine_step(&prev, &peak, 0.01);
            let r2 = (s_n / s_prev).powi(2);
            let center_gap = (fused.phi_hat - peak.center).abs() / (prev.phi_hat - peak.center).abs();
            assert!(center_gap <= r2 + 1e-15, "center gap {center_gap} > {r2}");
            let width_gap = (fused.sigma - peak.sigma).abs() / peak.sigma;
            assert!(width_gap <= r2, "width gap {width_gap} > {r2}");
        }
    }

    #[test]
    fn combine_fuses_across_the_branch_cut() {
        let prev = PhaseEstimate {
            phi_hat: PI - 0.01,
            sigma: 0.05,
            step_index: 1,
            confidence: 0.99,
        };
        let peak = GaussianPeak {
            center: -PI + 0.01,
            sigma: 0.05,
            weight: 1.0,
        };
        let fused = combine_step(&prev, &peak, 0.01);
        // Midpoint of the minor arc is pi, the wrap point.
        assert!(
            (fused.phi_hat - PI).abs() < 1e-12 || (fused.phi_hat + PI).abs() < 1e-12,
            "fused center {}",
            fused.phi_hat
        );
    }
}
