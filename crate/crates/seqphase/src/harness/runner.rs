//! Mode execution: seeded trial loops (optionally across a worker pool),
//! per-run CSV rows, and summary assembly.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::magnet::{plan_scenario, run_field_measurement_on, FieldPlan, HBAR};
use crate::protocol::{resource_scaling, run_protocol, ProtocolParams, ProtocolTrace};
use crate::sim::{effective_sigma, Apparatus, EnsembleSpec, TruePhase};
use crate::stats::{
    shannon_entropy, wrap_angle, wrapped_separation, AlternativeSet, GaussianPeak, Tolerance,
};

use super::aggregate::{aggregate, fit_log_slope, FracErr};
use super::summary::*;
use super::{fmt_f64, ExperimentConfig, ExperimentMode, ExperimentSummary, HarnessError};

/// Exclusion half-width around the degenerate phases 0 and +-pi when drawing
/// random truths; the sign classifier is flagged unreliable there.
const PHASE_EXCLUSION: f64 = 0.15;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    let start = Instant::now();
    let tol = Tolerance::new(cfg.beta, cfg.beta_tilde)?;
    let mut summary = ExperimentSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: cfg.mode.name().to_string(),
        config: ConfigEcho {
            trials: cfg.trials,
            atoms: cfg.atoms,
            atoms_comp: cfg.atoms_comp,
            beta: cfg.beta,
            beta_tilde: cfg.beta_tilde,
            steps: cfg.steps,
            epsilon: cfg.epsilon,
            seed: cfg.seed,
            threads: cfg.threads,
        },
        wall_time_s: 0.0,
        coverage: None,
        scaling: None,
        misclassification: None,
        dephasing: None,
        magnetometry: None,
        entropy: None,
    };

    let (header, rows) = match cfg.mode {
        ExperimentMode::SingleRun => {
            let (h, r, agg) = protocol_mode(cfg, &tol, Some(cfg.true_phi))?;
            summary.coverage = Some(agg);
            (h, r)
        }
        ExperimentMode::Coverage => {
            let (h, r, agg) = protocol_mode(cfg, &tol, None)?;
            summary.coverage = Some(agg);
            (h, r)
        }
        ExperimentMode::Scaling => {
            let (h, r, sc) = scaling_mode(cfg, &tol)?;
            summary.scaling = Some(sc);
            (h, r)
        }
        ExperimentMode::Misclassification => {
            let (h, r, mc) = misclassification_mode(cfg, &tol)?;
            summary.misclassification = Some(mc);
            (h, r)
        }
        ExperimentMode::Dephasing => {
            let (h, r, de) = dephasing_mode(cfg);
            summary.dephasing = Some(de);
            (h, r)
        }
        ExperimentMode::Magnetometry => {
            let (h, r, mg) = magnetometry_mode(cfg, tol)?;
            summary.magnetometry = Some(mg);
            (h, r)
        }
        ExperimentMode::EntropyCheck => {
            let (h, r, en) = entropy_mode(cfg)?;
            summary.entropy = Some(en);
            (h, r)
        }
    };

    let csv_path = cfg.out.with_extension("csv");
    write_csv(&csv_path, &header, &rows)?;
    summary.wall_time_s = start.elapsed().as_secs_f64();
    let json_path = summary_path(&cfg.out);
    let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&json_path, body + "\n").map_err(|e| HarnessError::io(&json_path, e))?;
    Ok(summary)
}

/// `<out>.summary.json` next to the CSV.
pub fn summary_path(out: &Path) -> std::path::PathBuf {
    let mut name = out
        .file_name()
        .map_or_else(|| "out".to_string(), |s| s.to_string_lossy().into_owned());
    name.push_str(".summary.json");
    out.with_file_name(name)
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let mut file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut buf = String::with_capacity(rows.len() * 96 + header.len() + 1);
    buf.push_str(header);
    buf.push('\n');
    for row in rows {
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())
        .map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Run trial bodies over a worker pool, preserving trial order. Each trial
/// sees only its own index, so the result is independent of the thread
/// count.
fn parallel_map<T, F>(n: u64, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = (n as usize).div_ceil(threads);
    std::thread::scope(|scope| {
        for (ci, slice) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            let base = (ci * chunk) as u64;
            scope.spawn(move || {
                for (i, slot) in slice.iter_mut().enumerate() {
                    *slot = Some(f(base + i as u64));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("worker filled every slot"))
        .collect()
}

/// Uniform truth over +-[excl, pi - excl], away from the degenerate phases.
fn draw_phase(app: &mut Apparatus, excl: f64) -> TruePhase {
    let mag = app.uniform(excl, PI - excl);
    let flip = app.uniform(0.0, 1.0) < 0.5;
    TruePhase::new(if flip { -mag } else { mag })
}

const PROTOCOL_HEADER: &str =
    "trial_id,true_phi,K,final_phi_hat,final_sigma,abs_wrapped_error,n_list,R_total,flags,beta_prime_max";

fn protocol_row(trial_id: u64, truth: TruePhase, trace: &ProtocolTrace) -> Vec<String> {
    let est = trace.final_estimate().expect("step 1 always recorded");
    let err = wrapped_separation(est.phi_hat, truth.value());
    let n_list = trace
        .n_folds()
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(";");
    let mut flags = trace.combined_flags().names();
    if !trace.completed() {
        flags.push("ESTIMATION_ERROR");
    }
    let flags = if flags.is_empty() {
        "-".to_string()
    } else {
        flags.join(";")
    };
    vec![
        trial_id.to_string(),
        fmt_f64(truth.value()),
        trace.steps.len().to_string(),
        fmt_f64(est.phi_hat),
        fmt_f64(est.sigma),
        fmt_f64(err),
        n_list,
        trace.resources.total.to_string(),
        flags,
        fmt_f64(trace.max_beta_prime()),
    ]
}

type ModeOutput<S> = (String, Vec<Vec<String>>, S);

fn protocol_mode(
    cfg: &ExperimentConfig,
    tol: &Tolerance,
    fixed_phi: Option<f64>,
) -> Result<ModeOutput<CoverageSummary>, HarnessError> {
    let spec = EnsembleSpec::new(cfg.atoms, cfg.atoms_comp, cfg.epsilon, cfg.seed)?;
    let params = ProtocolParams::new(*tol, cfg.steps)?;
    // Traces are digested inside the trial body; a K-step trace holds the
    // full n-peak alternative lists and must not accumulate across trials.
    let results = parallel_map(cfg.trials, cfg.threads, |trial| {
        let mut app = Apparatus::with_stream(spec, trial);
        let truth = match fixed_phi {
            Some(phi) => TruePhase::new(phi),
            None => draw_phase(&mut app, PHASE_EXCLUSION),
        };
        let trace = run_protocol(&mut app, truth, &params).expect("params validated");
        (
            protocol_row(trial, truth, &trace),
            TrialStat::from_trace(&trace, &truth, tol),
        )
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut stats = Vec::with_capacity(results.len());
    for (row, stat) in results {
        rows.push(row);
        stats.push(stat);
    }
    Ok((PROTOCOL_HEADER.to_string(), rows, summarize_stats(&stats)))
}

fn scaling_mode(
    cfg: &ExperimentConfig,
    tol: &Tolerance,
) -> Result<ModeOutput<ScalingSummary>, HarnessError> {
    let atoms_list = cfg.scaling_atoms();
    let steps_list = cfg.scaling_steps();
    let mut rows = Vec::new();
    let mut table = Vec::new();
    let mut block = 0u64;
    for &k in &steps_list {
        for &atoms in &atoms_list {
            let spec = EnsembleSpec::new(atoms, atoms, cfg.epsilon, cfg.seed)?;
            let params = ProtocolParams::new(*tol, k)?;
            let base = block * cfg.trials;
            let results = parallel_map(cfg.trials, cfg.threads, |trial| {
                let mut app = Apparatus::with_stream(spec, base + trial);
                let truth = draw_phase(&mut app, PHASE_EXCLUSION);
                let trace = run_protocol(&mut app, truth, &params).expect("params validated");
                let mut row = protocol_row(base + trial, truth, &trace);
                row.push(atoms.to_string());
                (row, TrialStat::from_trace(&trace, &truth, tol))
            });
            let mut sigma_sum = 0.0;
            let mut completed = 0u64;
            let mut res_sum = 0.0;
            for (row, stat) in results {
                rows.push(row);
                res_sum += stat.resources as f64;
                if stat.completed {
                    completed += 1;
                    sigma_sum += stat.sigma;
                }
            }
            let pred = resource_scaling(&params, atoms)?;
            table.push(ScalingRow {
                steps: k,
                atoms,
                trials: cfg.trials,
                completed,
                resources_mean: res_sum / cfg.trials as f64,
                delta_empirical: if completed > 0 {
                    tol.g() * sigma_sum / completed as f64
                } else {
                    f64::NAN
                },
                delta_predicted: pred.delta_k,
                resources_predicted: pred.r_total,
                k_std_predicted: pred.k_std,
            });
            block += 1;
        }
    }
    let mut slopes = Vec::new();
    for &k in &steps_list {
        let pts: Vec<(f64, f64)> = table
            .iter()
            .filter(|r| r.steps == k && r.completed > 0)
            .map(|r| (r.resources_mean, r.delta_empirical))
            .collect();
        if pts.len() >= 2 {
            let slope = fit_log_slope(&pts);
            let target = -f64::from(k) / (f64::from(k) + 1.0);
            slopes.push(SlopeRow {
                steps: k,
                slope,
                target,
                abs_gap: (slope - target).abs(),
            });
        }
    }
    Ok((
        format!("{PROTOCOL_HEADER},atoms"),
        rows,
        ScalingSummary {
            rows: table,
            slopes,
        },
    ))
}

fn misclassification_mode(
    cfg: &ExperimentConfig,
    tol: &Tolerance,
) -> Result<ModeOutput<MisclassSummary>, HarnessError> {
    let spec = EnsembleSpec::new(cfg.atoms, cfg.atoms_comp, cfg.epsilon, cfg.seed)?;
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for (bi, &phi) in cfg.phis.iter().enumerate() {
        let base = bi as u64 * cfg.trials;
        let errs = parallel_map(cfg.trials, cfg.threads, |trial| {
            let mut app = Apparatus::with_stream(spec, base + trial);
            let truth = TruePhase::new(phi);
            let rec = app.sample_complementary(truth, 1);
            let class = crate::estimate::classify_sign(
                &rec,
                phi,
                cfg.atoms,
                cfg.epsilon,
                tol.beta_tilde(),
            )
            .expect("complementary record");
            (u64::from(class.alpha != 1), class.beta_prime)
        });
        let errors: u64 = errs.iter().map(|(e, _)| e).sum();
        let predicted = errs.first().map_or(0.0, |(_, b)| *b);
        let rate = FracErr::from_counts(errors, cfg.trials);
        rows.push(vec![
            fmt_f64(phi),
            cfg.trials.to_string(),
            errors.to_string(),
            fmt_f64(rate.value),
            fmt_f64(rate.stderr),
            fmt_f64(predicted),
        ]);
        out.push(MisclassRow {
            phi,
            trials: cfg.trials,
            errors,
            rate,
            predicted_beta_prime: predicted,
        });
    }
    Ok((
        "phi,trials,errors,rate,stderr,predicted_beta_prime".to_string(),
        rows,
        MisclassSummary { rows: out },
    ))
}

fn dephasing_mode(cfg: &ExperimentConfig) -> ModeOutput<DephasingSummary> {
    let eps = cfg.epsilon;
    let n_c = if eps < 1.0 { -1.0 / eps.ln() } else { f64::INFINITY };
    let scan_max = if n_c.is_finite() {
        ((4.0 * n_c).ceil() as u32).clamp(20, 1_000_000)
    } else {
        100
    };
    let mut rows = Vec::new();
    let mut best = (1u32, f64::INFINITY);
    for n in 1..=scan_max {
        let sigma = effective_sigma(cfg.atoms, n, eps);
        rows.push(vec![n.to_string(), fmt_f64(sigma)]);
        if sigma < best.1 {
            best = (n, sigma);
        }
    }
    let sigma1 = 1.0 / (cfg.atoms as f64).sqrt();
    let sigma_at_n_c = if eps < 1.0 {
        sigma1 * std::f64::consts::E * (1.0 / eps).ln()
    } else {
        f64::NAN
    };
    (
        "n,sigma_eff".to_string(),
        rows,
        DephasingSummary {
            epsilon: eps,
            atoms: cfg.atoms,
            argmin_n: best.0,
            min_sigma: best.1,
            n_c,
            sigma_at_n_c,
            scanned_up_to: scan_max,
        },
    )
}

fn magnetometry_mode(
    cfg: &ExperimentConfig,
    tol: Tolerance,
) -> Result<ModeOutput<MagnetometrySummary>, HarnessError> {
    let sc = cfg.scenario.expect("validated: scenario present");
    let plan: FieldPlan = plan_scenario(&sc, tol, cfg.steps)?;
    let spec = EnsembleSpec::new(sc.n_probes, sc.n_probes_comp, plan.epsilon, cfg.seed)?;
    struct MagStat {
        delta_b: f64,
        steps_used: u32,
        field_error: f64,
        within_g: bool,
    }
    let results = parallel_map(cfg.trials, cfg.threads, |trial| {
        let mut app = Apparatus::with_stream(spec, trial);
        let hidden = app.uniform(sc.b_minus, sc.b_plus);
        let m = run_field_measurement_on(&mut app, &sc, &plan, hidden)
            .expect("hidden field drawn inside the window");
        let mut row = protocol_row(trial, m.residual_phase, &m.trace);
        row.push(fmt_f64(hidden));
        let stat = match &m.estimate {
            Some(est) => {
                row.push(fmt_f64(est.b_hat));
                row.push(fmt_f64(est.delta_b));
                let err = est.b_hat - hidden;
                Some(MagStat {
                    delta_b: est.delta_b,
                    steps_used: est.steps_used,
                    field_error: err,
                    within_g: err.abs() <= tol.g() * est.delta_b,
                })
            }
            None => {
                row.push("-".to_string());
                row.push("-".to_string());
                None
            }
        };
        (row, stat)
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut completed = 0u64;
    let mut delta_sum = 0.0;
    let mut steps_sum = 0u64;
    let mut err_sq = 0.0;
    let mut within_g = 0u64;
    for (row, stat) in results {
        rows.push(row);
        if let Some(s) = stat {
            completed += 1;
            delta_sum += s.delta_b;
            steps_sum += u64::from(s.steps_used);
            err_sq += s.field_error * s.field_error;
            if s.within_g {
                within_g += 1;
            }
        }
    }
    let restarted = cfg.trials - completed;
    let summary = MagnetometrySummary {
        trials: cfg.trials,
        completed,
        restarted,
        restart_frac: FracErr::from_counts(restarted, cfg.trials),
        offset_b0: plan.offset_b0,
        steps_planned: plan.params.max_steps,
        mean_steps_used: if completed > 0 {
            steps_sum as f64 / completed as f64
        } else {
            f64::NAN
        },
        mean_delta_b: if completed > 0 {
            delta_sum / completed as f64
        } else {
            f64::NAN
        },
        delta_b_single: HBAR / (sc.mu * sc.tau1 * (sc.n_probes as f64).sqrt()),
        rms_field_error: if completed > 0 {
            (err_sq / completed as f64).sqrt()
        } else {
            f64::NAN
        },
        within_g_frac: FracErr::from_counts(within_g, completed),
    };
    Ok((
        format!("{PROTOCOL_HEADER},b_true,b_hat,delta_b"),
        rows,
        summary,
    ))
}

fn entropy_mode(cfg: &ExperimentConfig) -> Result<ModeOutput<EntropySummary>, HarnessError> {
    let sigma1 = cfg.sigma1;
    let single = AlternativeSet {
        n_fold: 1,
        peaks: vec![GaussianPeak {
            center: 0.0,
            sigma: sigma1,
            weight: 1.0,
        }],
    };
    let h1 = shannon_entropy(&single)?.value;
    let mut rows = Vec::new();
    let mut out_rows = Vec::new();
    let mut max_gap: f64 = 0.0;
    for &n in &cfg.folds {
        let n = n.max(1);
        let alts = AlternativeSet {
            n_fold: n,
            peaks: (0..n)
                .map(|k| GaussianPeak {
                    center: wrap_angle(std::f64::consts::TAU * f64::from(k) / f64::from(n)),
                    sigma: sigma1 / f64::from(n),
                    weight: 1.0 / f64::from(n),
                })
                .collect(),
        };
        let h = shannon_entropy(&alts)?;
        if n > 1 {
            max_gap = max_gap.max((h.value - h1).abs());
        }
        rows.push(vec![
            n.to_string(),
            fmt_f64(h.value),
            h.peaks_overlap.to_string(),
        ]);
        out_rows.push(EntropyRow {
            n_fold: n,
            entropy: h.value,
            peaks_overlap: h.peaks_overlap,
        });
    }
    Ok((
        "n,entropy,peaks_overlap".to_string(),
        rows,
        EntropySummary {
            sigma1,
            rows: out_rows,
            max_gap_vs_single: max_gap,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order_and_content() {
        for threads in [1usize, 2, 3, 7] {
            let v = parallel_map(23, threads, |i| i * i);
            assert_eq!(v, (0..23u64).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn summary_path_appends_suffix() {
        assert_eq!(
            summary_path(Path::new("/tmp/x/run1")),
            Path::new("/tmp/x/run1.summary.json")
        );
    }

    #[test]
    fn float_format_round_trips() {
        for &x in &[0.8, -1.0541e-3, 3.0e-9, std::f64::consts::PI] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }
}
