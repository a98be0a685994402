//! Stochastic simulator of the measurement apparatus: seeded binomial draws
//! of the collective polarization for n-fold Ramsey sequences at a hidden
//! phase, with Gaussian dephasing folded into the success probability.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use thiserror::Error;

use crate::stats::wrap_angle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("ensemble sizes must be at least 1")]
    EmptyEnsemble,
    #[error("coherence factor epsilon must lie in (0, 1], got {0}")]
    EpsilonOutOfRange(f64),
    #[error("rotation count must be at least 1")]
    ZeroRotations,
}

/// Static description of one simulated apparatus: probe counts for the
/// primary and complementary ensembles, per-unit-exposure coherence factor,
/// and the RNG seed that makes runs reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub n_probes: u64,
    pub n_probes_comp: u64,
    /// Contrast surviving one unit of exposure; `epsilon = 1` means no
    /// dephasing, an n-fold sequence keeps contrast `epsilon^n`.
    pub epsilon: f64,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(n_probes: u64, n_probes_comp: u64, epsilon: f64, seed: u64) -> Result<Self, SimError> {
        if n_probes == 0 || n_probes_comp == 0 {
            return Err(SimError::EmptyEnsemble);
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(SimError::EpsilonOutOfRange(epsilon));
        }
        Ok(Self {
            n_probes,
            n_probes_comp,
            epsilon,
            seed,
        })
    }

    /// Convenience constructor for the common dephasing-free case with equal
    /// primary and complementary ensembles.
    pub fn ideal(n_probes: u64, seed: u64) -> Self {
        Self {
            n_probes,
            n_probes_comp: n_probes,
            epsilon: 1.0,
            seed,
        }
    }
}

/// Hidden true phase, reduced to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePhase(f64);

impl TruePhase {
    pub fn new(phi: f64) -> Self {
        Self(wrap_angle(phi))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Which Ramsey preparation produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Ensemble prepared along x; polarization estimates `eps^n cos(n phi)`.
    PrimaryX,
    /// Ensemble prepared along y; polarization estimates `eps^n sin(n phi)`.
    ComplementaryY,
}

/// Raw counts from one collective polarization measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub n_plus: u64,
    pub n_minus: u64,
    /// Realized polarization (n_plus - n_minus) / (n_plus + n_minus).
    pub s_z: f64,
    /// Rotation multiple applied in this sequence.
    pub n_fold: u32,
    pub basis: Basis,
}

impl MeasurementRecord {
    fn from_counts(n_plus: u64, total: u64, n_fold: u32, basis: Basis) -> Self {
        let n_minus = total - n_plus;
        Self {
            n_plus,
            n_minus,
            s_z: (n_plus as f64 - n_minus as f64) / total as f64,
            n_fold,
            basis,
        }
    }

    pub fn ensemble_size(&self) -> u64 {
        self.n_plus + self.n_minus
    }
}

/// One simulated apparatus owning its RNG stream. Instances are independent;
/// a single instance must not be shared across threads.
#[derive(Debug, Clone)]
pub struct Apparatus {
    spec: EnsembleSpec,
    rng: ChaCha8Rng,
}

impl Apparatus {
    pub fn new(spec: EnsembleSpec) -> Self {
        Self::with_stream(spec, 0)
    }

    /// Apparatus on a dedicated substream of the seed's keystream; distinct
    /// streams are statistically independent, which is what the Monte Carlo
    /// harness uses to give every trial its own reproducible randomness.
    pub fn with_stream(spec: EnsembleSpec, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        Self { spec, rng }
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    /// Uniform draw in `[lo, hi)` from this apparatus' stream.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        use rand::Rng;
        self.rng.random_range(lo..hi)
    }

    fn draw_binomial(&mut self, n: u64, p: f64) -> u64 {
        if p <= 0.0 {
            return 0;
        }
        if p >= 1.0 {
            return n;
        }
        Binomial::new(n, p)
            .expect("probability checked in range")
            .sample(&mut self.rng)
    }

    /// n-fold primary Ramsey run: counts drawn as
    /// `N_plus ~ Binomial(N, (1 + eps^n cos(n phi)) / 2)`.
    pub fn sample_primary(&mut self, truth: TruePhase, n_fold: u32) -> MeasurementRecord {
        let q = self.success_probability(truth, n_fold, Basis::PrimaryX);
        let n_plus = self.draw_binomial(self.spec.n_probes, q);
        MeasurementRecord::from_counts(n_plus, self.spec.n_probes, n_fold, Basis::PrimaryX)
    }

    /// n-fold complementary run on the second ensemble:
    /// `N_plus ~ Binomial(N', (1 + eps^n sin(n phi)) / 2)`.
    pub fn sample_complementary(&mut self, truth: TruePhase, n_fold: u32) -> MeasurementRecord {
        let q = self.success_probability(truth, n_fold, Basis::ComplementaryY);
        let n_plus = self.draw_binomial(self.spec.n_probes_comp, q);
        MeasurementRecord::from_counts(
            n_plus,
            self.spec.n_probes_comp,
            n_fold,
            Basis::ComplementaryY,
        )
    }

    fn success_probability(&self, truth: TruePhase, n_fold: u32, basis: Basis) -> f64 {
        assert!(n_fold >= 1, "rotation count must be at least 1");
        let nphi = f64::from(n_fold) * truth.value();
        let contrast = self.spec.epsilon.powi(n_fold as i32);
        let osc = match basis {
            Basis::PrimaryX => nphi.cos(),
            Basis::ComplementaryY => nphi.sin(),
        };
        ((1.0 + contrast * osc) / 2.0).clamp(0.0, 1.0)
    }

    /// Cross-check path for the dephasing model: every probe picks up an
    /// independent Gaussian phase kick with variance `-2 n ln(eps)` before a
    /// Bernoulli readout. Marginally each probe is Bernoulli with the same
    /// damped-contrast probability as [`Apparatus::sample_primary`], so the
    /// two paths agree in distribution; this one costs O(N) per call.
    pub fn sample_primary_per_qubit(&mut self, truth: TruePhase, n_fold: u32) -> MeasurementRecord {
        use rand::Rng;
        assert!(n_fold >= 1, "rotation count must be at least 1");
        let nphi = f64::from(n_fold) * truth.value();
        let var = -2.0 * f64::from(n_fold) * self.spec.epsilon.ln();
        let kick = Normal::new(0.0, var.sqrt().max(0.0)).expect("finite std dev");
        let mut n_plus = 0u64;
        for _ in 0..self.spec.n_probes {
            let q = (1.0 + (nphi + kick.sample(&mut self.rng)).cos()) / 2.0;
            if self.rng.random::<f64>() < q {
                n_plus += 1;
            }
        }
        MeasurementRecord::from_counts(n_plus, self.spec.n_probes, n_fold, Basis::PrimaryX)
    }
}

/// Width of the n-fold angle posterior including dephasing inflation:
/// `1 / (sqrt(N) n eps^n)`.
///
/// For fixed `eps < 1` this is minimized near `n = -1 / ln(eps)`, the useful
/// rotation cap; beyond it the contrast loss outruns the fold gain.
pub fn effective_sigma(n_probes: u64, n_fold: u32, epsilon: f64) -> f64 {
    let n = f64::from(n_fold);
    1.0 / ((n_probes as f64).sqrt() * n * epsilon.powi(n_fold as i32))
}
