//! Command-line front end for the seqphase Monte Carlo harness.
//!
//! One subcommand per experiment mode; every run writes `<out>.csv` with
//! per-run rows and `<out>.summary.json` with aggregates. Outputs are
//! byte-identical for a fixed configuration, seed and version.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqphase::harness::{
    load_scenario, run_experiment, ExperimentConfig, ExperimentMode, HarnessError, SEED_ENV_VAR,
};
use seqphase::magnet::MagnetError;

#[derive(Parser)]
#[command(
    name = "seqphase",
    version,
    about = "Sequential quantum-enhanced phase estimation: Monte Carlo experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated protocol runs at one fixed hidden phase.
    #[command(alias = "single_run")]
    SingleRun(CommonArgs),
    /// Coverage of the K-step confidence statement at random phases.
    Coverage(CommonArgs),
    /// Precision-versus-resources sweep over steps and ensemble sizes.
    Scaling(CommonArgs),
    /// Empirical sign-misclassification rates against the prediction.
    Misclassification(CommonArgs),
    /// Effective-width scan over the rotation multiple under dephasing.
    Dephasing(CommonArgs),
    /// End-to-end magnetic-field measurement from a scenario file.
    Magnetometry(CommonArgs),
    /// Entropy invariance of the n-fold angle mixture.
    #[command(alias = "entropy_check")]
    EntropyCheck(CommonArgs),
}

impl Command {
    fn mode(&self) -> ExperimentMode {
        match self {
            Command::SingleRun(_) => ExperimentMode::SingleRun,
            Command::Coverage(_) => ExperimentMode::Coverage,
            Command::Scaling(_) => ExperimentMode::Scaling,
            Command::Misclassification(_) => ExperimentMode::Misclassification,
            Command::Dephasing(_) => ExperimentMode::Dephasing,
            Command::Magnetometry(_) => ExperimentMode::Magnetometry,
            Command::EntropyCheck(_) => ExperimentMode::EntropyCheck,
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::SingleRun(a)
            | Command::Coverage(a)
            | Command::Scaling(a)
            | Command::Misclassification(a)
            | Command::Dephasing(a)
            | Command::Magnetometry(a)
            | Command::EntropyCheck(a) => a,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Config file with `key = value` lines; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Independent trials to run.
    #[arg(long)]
    trials: Option<u64>,
    /// Probes in the primary ensemble (N).
    #[arg(long)]
    atoms: Option<u64>,
    /// Probes in the complementary ensemble (N'); defaults to --atoms.
    #[arg(long)]
    atoms_comp: Option<u64>,
    /// Estimation tolerance.
    #[arg(long)]
    beta: Option<f64>,
    /// Per-step classification tolerance.
    #[arg(long)]
    beta_tilde: Option<f64>,
    /// Protocol steps (K).
    #[arg(long)]
    steps: Option<u32>,
    /// Per-unit-exposure coherence factor.
    #[arg(long)]
    epsilon: Option<f64>,
    /// RNG seed; falls back to SEQPHASE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output stem; writes <out>.csv and <out>.summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Field scenario file (magnetometry mode).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Worker threads over independent trials.
    #[arg(long)]
    threads: Option<usize>,
    /// Hidden phase, radians (single-run mode).
    #[arg(long)]
    phi: Option<f64>,
    /// Comma-separated ensemble sizes (scaling mode).
    #[arg(long)]
    atoms_list: Option<String>,
    /// Comma-separated step counts (scaling mode).
    #[arg(long)]
    steps_list: Option<String>,
    /// Comma-separated angle magnitudes (misclassification mode).
    #[arg(long)]
    phis: Option<String>,
    /// Base peak width (entropy-check mode).
    #[arg(long)]
    sigma1: Option<f64>,
    /// Comma-separated fold counts (entropy-check mode).
    #[arg(long)]
    folds: Option<String>,
}

fn build_config(mode: ExperimentMode, args: &CommonArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::new(mode);
    // Seed precedence: flag > config file > environment > default.
    if let Ok(env_seed) = std::env::var(SEED_ENV_VAR) {
        cfg.apply_kv("seed", env_seed.trim(), &format!("${SEED_ENV_VAR}"))?;
    }
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    cfg.mode = mode;
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.atoms {
        cfg.atoms = v;
        if args.atoms_comp.is_none() {
            cfg.atoms_comp = v;
        }
    }
    if let Some(v) = args.atoms_comp {
        cfg.atoms_comp = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.beta_tilde {
        cfg.beta_tilde = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Some(v) = args.threads {
        cfg.threads = v;
    }
    if let Some(v) = args.phi {
        cfg.true_phi = v;
    }
    if let Some(v) = &args.atoms_list {
        cfg.apply_kv("atoms_list", v, "--atoms-list")?;
    }
    if let Some(v) = &args.steps_list {
        cfg.apply_kv("steps_list", v, "--steps-list")?;
    }
    if let Some(v) = &args.phis {
        cfg.apply_kv("phis", v, "--phis")?;
    }
    if let Some(v) = args.sigma1 {
        cfg.sigma1 = v;
    }
    if let Some(v) = &args.folds {
        cfg.apply_kv("folds", v, "--folds")?;
    }
    if let Some(path) = &args.scenario {
        cfg.scenario = Some(load_scenario(path)?);
    }
    Ok(cfg)
}

fn exit_code_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Config { .. } => 2,
        HarnessError::Magnet(MagnetError::InfeasibleWindow { .. }) => 3,
        HarnessError::Io { .. } => 4,
        // Domain violations in derived parameters are configuration errors.
        _ => 2,
    }
}

fn report(summary: &seqphase::harness::ExperimentSummary, cfg: &ExperimentConfig) {
    println!(
        "seqphase {} mode={} trials={} seed={} -> {}.csv, {}",
        summary.version,
        summary.mode,
        cfg.trials,
        cfg.seed,
        cfg.out.display(),
        seqphase::harness::summary_path(&cfg.out).display(),
    );
    if let Some(cov) = &summary.coverage {
        println!(
            "  coverage(completed) = {:.4} +- {:.4} (target {:.4}), restarts = {:.4}",
            cov.coverage_completed.value,
            cov.coverage_completed.stderr,
            cov.target_confidence,
            cov.restart_frac.value,
        );
    }
    if let Some(sc) = &summary.scaling {
        for s in &sc.slopes {
            println!(
                "  K={}: slope {:.4} vs target {:.4} (gap {:.4})",
                s.steps, s.slope, s.target, s.abs_gap
            );
        }
    }
    if let Some(mc) = &summary.misclassification {
        for r in &mc.rows {
            println!(
                "  phi={:.3}: rate {:.3e} +- {:.1e} (predicted {:.3e})",
                r.phi, r.rate.value, r.rate.stderr, r.predicted_beta_prime
            );
        }
    }
    if let Some(de) = &summary.dephasing {
        println!(
            "  argmin n = {} (n_c = {:.2}), sigma_min = {:.4e}",
            de.argmin_n, de.n_c, de.min_sigma
        );
    }
    if let Some(mg) = &summary.magnetometry {
        println!(
            "  mean dB = {:.3e} G over {} completed (B0 = {:.6} G, K = {})",
            mg.mean_delta_b, mg.completed, mg.offset_b0, mg.steps_planned
        );
    }
    if let Some(en) = &summary.entropy {
        println!(
            "  entropy gap vs single peak = {:.2e} nats",
            en.max_gap_vs_single
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = cli.command.mode();
    let cfg = match build_config(mode, cli.command.args()) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(exit_code_for(&err));
        }
    };
    match run_experiment(&cfg) {
        Ok(summary) => {
            report(&summary, &cfg);
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
