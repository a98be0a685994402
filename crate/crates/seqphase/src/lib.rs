//! Sequential quantum-enhanced phase estimation on an ensemble of two-level
//! probes.
//!
//! The library simulates an iterative Ramsey-interferometry protocol that
//! sharpens a phase estimate by a factor close to `sqrt(N)` per step: a
//! shot-noise-limited primary measurement fixes the magnitude of the phase, a
//! complementary measurement fixes its sign, and each later step applies an
//! n-fold rotation whose narrow posterior peaks are disambiguated against the
//! running estimate. Modules:
//!
//! - [`stats`]: deterministic numerics (error function, quantiles, angle
//!   posteriors and mixtures, rotation factor, entropy).
//! - [`sim`]: the stochastic apparatus (seeded binomial ensemble draws with
//!   optional dephasing).
//! - [`estimate`]: magnitude estimation, sign classification and Gaussian
//!   fusion of step posteriors.
//! - [`protocol`]: the K-step engine with alternative selection, error
//!   detection, confidence and resource bookkeeping.
//! - [`magnet`]: mapping of the phase protocol onto magnetic-field
//!   measurement with offset-field matching.
//! - [`harness`]: reproducible Monte Carlo experiment runner with CSV and
//!   JSON summary outputs.

pub mod estimate;
pub mod harness;
pub mod magnet;
pub mod protocol;
pub mod sim;
pub mod stats;

pub use estimate::{MagnitudeEstimate, PhaseEstimate, SignClassification};
pub use protocol::{ProtocolParams, ProtocolTrace, ResourceLedger, RunOutcome};
pub use sim::{Apparatus, Basis, EnsembleSpec, MeasurementRecord, TruePhase};
pub use stats::{AlternativeSet, GaussianPeak, Tolerance};
