//! Reproducible Monte Carlo experiment harness: configuration, batch
//! execution over seeded substreams, statistics aggregation, and
//! machine-readable outputs (per-run CSV plus a JSON summary).

mod aggregate;
mod runner;
mod summary;

pub use aggregate::{aggregate, fit_log_slope, FracErr};
pub use runner::summary_path;
pub use summary::{
    CoverageSummary, DephasingSummary, EntropySummary, ExperimentSummary, MagnetometrySummary,
    MisclassRow, MisclassSummary, ScalingRow, ScalingSummary, SlopeRow,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::magnet::{CoherenceModel, FieldScenario, MagnetError};
use crate::protocol::ProtocolError;
use crate::sim::SimError;
use crate::stats::StatsError;

/// Environment variable consulted when no seed is given explicitly.
pub const SEED_ENV_VAR: &str = "SEQPHASE_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },
    #[error(transparent)]
    Magnet(#[from] MagnetError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// What a batch run measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentMode {
    SingleRun,
    Coverage,
    Scaling,
    Misclassification,
    Dephasing,
    Magnetometry,
    EntropyCheck,
}

impl ExperimentMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SingleRun => "single_run",
            Self::Coverage => "coverage",
            Self::Scaling => "scaling",
            Self::Misclassification => "misclassification",
            Self::Dephasing => "dephasing",
            Self::Magnetometry => "magnetometry",
            Self::EntropyCheck => "entropy_check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single_run" | "single-run" => Some(Self::SingleRun),
            "coverage" => Some(Self::Coverage),
            "scaling" => Some(Self::Scaling),
            "misclassification" => Some(Self::Misclassification),
            "dephasing" => Some(Self::Dephasing),
            "magnetometry" => Some(Self::Magnetometry),
            "entropy_check" | "entropy-check" => Some(Self::EntropyCheck),
            _ => None,
        }
    }
}

/// Full description of one experiment batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: ExperimentMode,
    pub trials: u64,
    pub atoms: u64,
    pub atoms_comp: u64,
    pub beta: f64,
    pub beta_tilde: f64,
    pub steps: u32,
    pub epsilon: f64,
    pub seed: u64,
    pub threads: usize,
    /// Output stem; the harness writes `<out>.csv` and `<out>.summary.json`.
    pub out: PathBuf,
    /// Hidden phase for `single_run`.
    pub true_phi: f64,
    /// Ensemble sizes swept in `scaling` mode.
    pub atoms_list: Vec<u64>,
    /// Step counts swept in `scaling` mode.
    pub steps_list: Vec<u32>,
    /// Magnitudes probed in `misclassification` mode.
    pub phis: Vec<f64>,
    /// Base peak width for `entropy_check`.
    pub sigma1: f64,
    /// Fold counts for `entropy_check`.
    pub folds: Vec<u32>,
    pub scenario: Option<FieldScenario>,
}

impl ExperimentConfig {
    pub fn new(mode: ExperimentMode) -> Self {
        Self {
            mode,
            trials: 1000,
            atoms: 1000,
            atoms_comp: 1000,
            beta: 0.01,
            beta_tilde: 0.01,
            steps: 3,
            epsilon: 1.0,
            seed: 0,
            threads: 1,
            out: PathBuf::from("seqphase_out"),
            true_phi: 0.8,
            atoms_list: Vec::new(),
            steps_list: Vec::new(),
            phis: vec![0.3, 0.8, 1.2],
            sigma1: 0.03,
            folds: vec![1, 2, 5, 10],
            scenario: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::config("trials", "must be at least 1"));
        }
        if self.atoms == 0 || self.atoms_comp == 0 {
            return Err(HarnessError::config("atoms", "ensembles need at least one probe"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(HarnessError::config("beta", "must lie in (0, 1)"));
        }
        if !(self.beta_tilde > 0.0 && self.beta_tilde < 1.0) {
            return Err(HarnessError::config("beta_tilde", "must lie in (0, 1)"));
        }
        if self.steps == 0 {
            return Err(HarnessError::config("steps", "must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(HarnessError::config("epsilon", "must lie in (0, 1]"));
        }
        if self.threads == 0 {
            return Err(HarnessError::config("threads", "must be at least 1"));
        }
        if self.mode == ExperimentMode::Magnetometry && self.scenario.is_none() {
            return Err(HarnessError::config(
                "scenario",
                "magnetometry mode requires a scenario file",
            ));
        }
        if self.mode == ExperimentMode::Misclassification && self.phis.is_empty() {
            return Err(HarnessError::config("phis", "needs at least one magnitude"));
        }
        Ok(())
    }

    /// Apply one `key = value` setting, as found in config files.
    pub fn apply_kv(&mut self, key: &str, value: &str, location: &str) -> Result<(), HarnessError> {
        let bad = |msg: &str| HarnessError::config(format!("{location} ({key})"), msg.to_string());
        match key {
            "mode" => {
                self.mode = ExperimentMode::parse(value)
                    .ok_or_else(|| bad("unknown mode; expected one of single_run, coverage, scaling, misclassification, dephasing, magnetometry, entropy_check"))?;
            }
            "trials" => self.trials = value.parse().map_err(|_| bad("expected an integer"))?,
            "atoms" => self.atoms = value.parse().map_err(|_| bad("expected an integer"))?,
            "atoms_comp" => {
                self.atoms_comp = value.parse().map_err(|_| bad("expected an integer"))?
            }
            "beta" => self.beta = value.parse().map_err(|_| bad("expected a float"))?,
            "beta_tilde" => self.beta_tilde = value.parse().map_err(|_| bad("expected a float"))?,
            "steps" => self.steps = value.parse().map_err(|_| bad("expected an integer"))?,
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad("expected a float"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an integer"))?,
            "threads" => self.threads = value.parse().map_err(|_| bad("expected an integer"))?,
            "out" => self.out = PathBuf::from(value),
            "true_phi" => self.true_phi = value.parse().map_err(|_| bad("expected a float"))?,
            "atoms_list" => {
                self.atoms_list = parse_list(value).map_err(|_| bad("expected comma-separated integers"))?
            }
            "steps_list" => {
                self.steps_list = parse_list(value).map_err(|_| bad("expected comma-separated integers"))?
            }
            "phis" => {
                self.phis = parse_list(value).map_err(|_| bad("expected comma-separated floats"))?
            }
            "sigma1" => self.sigma1 = value.parse().map_err(|_| bad("expected a float"))?,
            "folds" => {
                self.folds = parse_list(value).map_err(|_| bad("expected comma-separated integers"))?
            }
            _ => return Err(bad("unknown key")),
        }
        Ok(())
    }

    /// Load `key = value` lines over the current config. Lines starting with
    /// `#` and blank lines are skipped; errors carry file and line.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let location = format!("{}:{}", path.display(), idx + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::config(&location, "expected key = value"))?;
            self.apply_kv(key.trim(), value.trim(), &location)?;
        }
        Ok(())
    }

    /// Ensemble spec sizes swept in scaling mode (defaults to just `atoms`).
    pub fn scaling_atoms(&self) -> Vec<u64> {
        if self.atoms_list.is_empty() {
            vec![self.atoms]
        } else {
            self.atoms_list.clone()
        }
    }

    /// Step counts swept in scaling mode (defaults to 1..=steps).
    pub fn scaling_steps(&self) -> Vec<u32> {
        if self.steps_list.is_empty() {
            (1..=self.steps).collect()
        } else {
            self.steps_list.clone()
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, ()> {
    value
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| ()))
        .collect()
}

/// Parse a field-scenario file (`key = value` lines).
pub fn load_scenario(path: &Path) -> Result<FieldScenario, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut b_minus = 0.0f64;
    let mut b_plus = None::<f64>;
    let mut mu = crate::magnet::MU_BOHR;
    let mut tau1 = None::<f64>;
    let mut tau_c = None::<f64>;
    let mut atoms = 1000u64;
    let mut atoms_comp = None::<u64>;
    let mut coherence = CoherenceModel::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let location = format!("{}:{}", path.display(), idx + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::config(&location, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |msg: &str| HarnessError::config(format!("{location} ({key})"), msg.to_string());
        match key {
            "b_minus" => b_minus = value.parse().map_err(|_| bad("expected a float"))?,
            "b_plus" => b_plus = Some(value.parse().map_err(|_| bad("expected a float"))?),
            "mu" => mu = value.parse().map_err(|_| bad("expected a float"))?,
            "tau1" => tau1 = Some(value.parse().map_err(|_| bad("expected a float"))?),
            "tau_c" => tau_c = Some(value.parse().map_err(|_| bad("expected a float"))?),
            "atoms" => atoms = value.parse().map_err(|_| bad("expected an integer"))?,
            "atoms_comp" => {
                atoms_comp = Some(value.parse().map_err(|_| bad("expected an integer"))?)
            }
            "coherence" => {
                coherence = match value {
                    "hard_cap" => CoherenceModel::HardCap,
                    "exponential" => CoherenceModel::Exponential,
                    _ => return Err(bad("expected hard_cap or exponential")),
                }
            }
            _ => return Err(bad("unknown key")),
        }
    }
    let loc = path.display().to_string();
    let b_plus = b_plus.ok_or_else(|| HarnessError::config(&loc, "missing b_plus"))?;
    let tau1 = tau1.ok_or_else(|| HarnessError::config(&loc, "missing tau1"))?;
    let tau_c = tau_c.ok_or_else(|| HarnessError::config(&loc, "missing tau_c"))?;
    let sc = FieldScenario {
        b_minus,
        b_plus,
        mu,
        tau1,
        tau_c,
        n_probes: atoms,
        n_probes_comp: atoms_comp.unwrap_or(atoms),
        coherence,
    };
    sc.validate()?;
    Ok(sc)
}

/// Format a float with 17 significant digits, enough to round-trip f64
/// bit-exactly in the CSV outputs.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Run one experiment end to end: execute the trials, write `<out>.csv` and
/// `<out>.summary.json`, and return the summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    runner::run(cfg)
}
