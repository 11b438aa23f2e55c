//! `estimate`: builds each repetition's data, runs the stochastic
//! parameter search, and writes one directory of artifacts per
//! repetition plus a whole-run aggregate.
//!
//! Layout under `run.output_dir`:
//! ```text
//! config.toml            effective config (overrides folded in)
//! aggregate.json         means / medians over repetitions
//! timing.txt             wall time; NOT part of the determinism contract
//! rep_000/
//!   theta_trace.csv      per-iteration history (final stage for joint runs)
//!   theta_trace_stage1.csv ... (joint runs only)
//!   summary.json         estimates, stop reason, artifact list
//!   y.f64  y.pgm         observation (exact + display)
//!   truth.f64 truth.pgm  ground truth
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sapg_core::sapg::{
    run_joint_noise, run_sapg, JointNoiseConfig, SapgConfig, StepSchedule, StopRule, StoppedBy,
    ThetaTrace, WeightScheme,
};
use sapg_core::transforms::io::{write_pgm, write_raw_f64};
use sapg_core::KernelParams;

use crate::config::{AlgorithmKind, ExperimentConfig};
use crate::output::{self, Aggregate, RepSummary, RunStamp, StageSummary};
use crate::problem::{self, BuiltProblem};
use crate::{CliError, EstimateArgs};

pub fn run(args: &EstimateArgs) -> Result<(), CliError> {
    let cfg = crate::load_effective_config(&args.common)?;
    let stamp = RunStamp { config_hash: cfg.hash(), master_seed: cfg.run.master_seed };
    let root = cfg.run.output_dir.clone();
    output::prepare_dir(&root)?;
    write_effective_config(&cfg, &stamp, &root)?;

    let started = Instant::now();
    let summaries = run_all_reps(&cfg, &stamp, &root)?;

    let agg = aggregate(&cfg, &stamp, &summaries);
    output::write_json(&root.join("aggregate.json"), &agg)?;
    // Wall time lives outside the determinism contract, in its own file.
    fs::write(
        root.join("timing.txt"),
        format!("wall_time_s {:.3}\n", started.elapsed().as_secs_f64()),
    )
    .map_err(|e| CliError::Io(format!("writing timing.txt: {e}")))?;

    println!(
        "estimate: {} reps, theta_bar mean {:?}, median iterations {} -> {}",
        agg.repetitions,
        agg.theta_bar_mean,
        agg.median_iterations,
        root.display()
    );
    Ok(())
}

/// Runs every repetition, in parallel when the config asks for workers.
/// Hard failures abort the whole run; boundary saturation does not.
pub fn run_all_reps(
    cfg: &ExperimentConfig,
    stamp: &RunStamp,
    root: &Path,
) -> Result<Vec<RepSummary>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| CliError::Config(format!("run.workers: {e}")))?;
    let mut summaries = pool.install(|| {
        (0..cfg.run.repetitions)
            .into_par_iter()
            .map(|rep| run_rep(cfg, stamp, root, rep))
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    summaries.sort_by_key(|s| s.rep);
    Ok(summaries)
}

fn write_effective_config(
    cfg: &ExperimentConfig,
    stamp: &RunStamp,
    root: &Path,
) -> Result<(), CliError> {
    let body = toml::to_string(cfg)
        .map_err(|e| CliError::Io(format!("serialising config: {e}")))?;
    let text = format!("# {}\n{body}", stamp.comment());
    fs::write(root.join("config.toml"), text)
        .map_err(|e| CliError::Io(format!("writing config.toml: {e}")))
}

fn run_rep(
    cfg: &ExperimentConfig,
    stamp: &RunStamp,
    root: &Path,
    rep: usize,
) -> Result<RepSummary, CliError> {
    let built = problem::build(cfg, rep)?;
    let rep_dir = root.join(rep_dir_name(rep));
    output::prepare_dir(&rep_dir)?;

    let mut artifacts = write_data_files(&built, stamp, &rep_dir)?;

    let (theta_bar, sigma2_bar, iterations, stopped_by, saturated, stages, traces) =
        match cfg.algorithm.kind {
            AlgorithmKind::Alg4 => run_joint(cfg, &built)?,
            _ => run_single(cfg, &built)?,
        };

    // Joint runs keep each stage's trace; the final stage is duplicated
    // under the plain name so downstream tools can always find it.
    if traces.len() > 1 {
        for (k, trace) in traces.iter().enumerate() {
            let name = format!("theta_trace_stage{}.csv", k + 1);
            write_trace(trace, stamp, &rep_dir.join(&name))?;
            artifacts.push(name);
        }
    }
    let last = traces.last().expect("at least one stage");
    write_trace(last, stamp, &rep_dir.join("theta_trace.csv"))?;
    artifacts.push("theta_trace.csv".into());
    artifacts.push("summary.json".into());

    let summary = RepSummary {
        config_hash: stamp.config_hash.clone(),
        master_seed: stamp.master_seed,
        rep,
        rep_seed: built.rep_seed,
        problem: cfg.problem.kind.to_string(),
        algorithm: cfg.algorithm.kind.to_string(),
        theta_bar,
        sigma2_bar,
        sigma2_true: built.sigma2,
        iterations,
        stopped_by: match stopped_by {
            StoppedBy::Tolerance => "tolerance".into(),
            StoppedBy::MaxIters => "max_iters".into(),
        },
        saturated,
        degraded_mse_db: built.degraded_mse_db(),
        stages,
        artifacts,
    };
    output::write_json(&rep_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn rep_dir_name(rep: usize) -> String {
    format!("rep_{rep:03}")
}

type RepOutcome = (
    Vec<f64>,
    Option<f64>,
    u64,
    StoppedBy,
    bool,
    Vec<StageSummary>,
    Vec<ThetaTrace>,
);

/// Runs the single-parameter (fixed-variance) search for one built
/// repetition; also the entry point for in-process consumers.
pub fn estimate_single(
    cfg: &ExperimentConfig,
    built: &BuiltProblem,
) -> Result<sapg_core::sapg::SapgRun, CliError> {
    let model = built.model(built.sigma2)?;
    let kernel =
        KernelParams::guideline_posterior(model.likelihood.lipschitz(), built.lambda_rule())?;
    let kernel_prior = match built.drift() {
        sapg_core::DriftKind::TwoChain => Some(KernelParams::guideline_prior(kernel.lambda)?),
        _ => None,
    };
    let sc = SapgConfig {
        drift: built.drift(),
        theta0: cfg.sapg.theta0.clone(),
        schedule: step_schedule(cfg.sapg.c0, cfg, built)?,
        weights: WeightScheme::burn_in(cfg.sapg.burn_in),
        stop: StopRule::new(cfg.sapg.tolerance, cfg.sapg.max_iters)?,
        kernel,
        kernel_prior,
        warmup: cfg.sapg.warmup,
        samples_per_iter: cfg.sapg.samples_per_iter,
        thinning_posterior: cfg.sapg.thinning,
        thinning_prior: cfg.sapg.thinning_prior,
        log_scale: cfg.sapg.log_scale,
        master_seed: built.rep_seed,
        x0: built.x0(),
        x0_prior: None,
    };
    Ok(run_sapg(&model, &sc)?)
}

/// Runs the joint parameter/noise-variance search for one built
/// repetition.
pub fn estimate_joint(
    cfg: &ExperimentConfig,
    built: &BuiltProblem,
) -> Result<sapg_core::sapg::JointNoiseRun, CliError> {
    let sig = cfg.sigma.as_ref().expect("validated: [sigma] present for alg4");
    let (lo, hi, s0) = built.sigma_bracket().expect("validated: [sigma] present for alg4");
    let jc = JointNoiseConfig {
        drift: built.drift(),
        theta0: cfg.sapg.theta0.clone(),
        sigma2_0: s0,
        sigma2_bounds: (lo, hi),
        schedule_theta: step_schedule(cfg.sapg.c0, cfg, built)?,
        schedule_sigma: step_schedule(sig.c0_sigma, cfg, built)?,
        weights: WeightScheme::burn_in(cfg.sapg.burn_in),
        stop: StopRule::new(cfg.sapg.tolerance, cfg.sapg.max_iters)?,
        lambda_rule: built.lambda_rule(),
        warmup: cfg.sapg.warmup,
        samples_per_iter: cfg.sapg.samples_per_iter,
        thinning: cfg.sapg.thinning,
        log_scale_theta: cfg.sapg.log_scale,
        stages: sig.stages,
        master_seed: built.rep_seed,
        x0: built.x0(),
    };
    Ok(run_joint_noise(&built.family()?, &built.regulariser()?, &built.theta_domain()?, &jc)?)
}

fn run_single(cfg: &ExperimentConfig, built: &BuiltProblem) -> Result<RepOutcome, CliError> {
    let run = estimate_single(cfg, built)?;
    Ok((
        run.theta_bar,
        None,
        run.iterations,
        run.stopped_by,
        run.saturated,
        Vec::new(),
        vec![run.trace],
    ))
}

fn run_joint(cfg: &ExperimentConfig, built: &BuiltProblem) -> Result<RepOutcome, CliError> {
    let run = estimate_joint(cfg, built)?;
    let total_iters = run.stages.iter().map(|s| s.iterations).sum();
    let stopped_by = run.stages.last().map_or(StoppedBy::MaxIters, |s| s.stopped_by);
    let stages = run
        .stages
        .iter()
        .map(|s| StageSummary {
            stage: s.stage,
            gamma: s.gamma,
            lambda: s.lambda,
            theta_bar: s.theta_bar.clone(),
            sigma2_bar: s.sigma2_bar,
            iterations: s.iterations,
        })
        .collect();
    Ok((
        run.theta_bar,
        Some(run.sigma2_bar),
        total_iters,
        stopped_by,
        run.saturated_theta || run.saturated_sigma2,
        stages,
        run.traces,
    ))
}

/// The per-iteration step is `c0 * n^(-exponent) / unknown_dim`, so the
/// configured constants stay comparable across image sizes.
fn step_schedule(
    c0: f64,
    cfg: &ExperimentConfig,
    built: &BuiltProblem,
) -> Result<StepSchedule, CliError> {
    Ok(StepSchedule::new(c0, cfg.sapg.exponent, 1.0 / built.unknown_dim() as f64)?)
}

fn write_trace(trace: &ThetaTrace, stamp: &RunStamp, path: &Path) -> Result<(), CliError> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))?;
    trace
        .write_csv(std::io::BufWriter::new(file), &stamp.comment())
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

/// Observation and truth, exact (little-endian f64) and displayable
/// (16-bit PGM scaled to the data range).
fn write_data_files(
    built: &BuiltProblem,
    stamp: &RunStamp,
    rep_dir: &Path,
) -> Result<Vec<String>, CliError> {
    let io_err = |name: &str, e: sapg_core::Error| {
        CliError::Io(format!("writing {name}: {e}"))
    };
    write_raw_f64(&rep_dir.join("y.f64"), &built.y).map_err(|e| io_err("y.f64", e))?;
    write_raw_f64(&rep_dir.join("truth.f64"), &built.truth_image)
        .map_err(|e| io_err("truth.f64", e))?;
    write_display_pgm(&rep_dir.join("y.pgm"), &built.y, built, stamp)
        .map_err(|e| io_err("y.pgm", e))?;
    write_display_pgm(&rep_dir.join("truth.pgm"), &built.truth_image, built, stamp)
        .map_err(|e| io_err("truth.pgm", e))?;
    Ok(vec!["y.f64".into(), "truth.f64".into(), "y.pgm".into(), "truth.pgm".into()])
}

/// Scales a pixel image onto [0, 65535] for viewing. The affine map is
/// deterministic (min/max of the data), so reruns stay byte-identical.
pub fn write_display_pgm(
    path: &Path,
    data: &[f64],
    built: &BuiltProblem,
    stamp: &RunStamp,
) -> sapg_core::Result<()> {
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scaled: Vec<f64> =
        data.iter().map(|v| (v - lo) / span * 65535.0).collect();
    write_pgm(path, &scaled, built.height, built.width, 65535, &stamp.comment())
}

/// Resolves a run directory from the effective config; used by the
/// downstream commands to find estimate outputs.
pub fn run_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run.output_dir.clone()
}

fn aggregate(cfg: &ExperimentConfig, stamp: &RunStamp, summaries: &[RepSummary]) -> Aggregate {
    let reps = summaries.len().max(1) as f64;
    let dim = summaries.first().map_or(0, |s| s.theta_bar.len());
    let mut mean = vec![0.0; dim];
    for s in summaries {
        for (m, t) in mean.iter_mut().zip(&s.theta_bar) {
            *m += t / reps;
        }
    }
    let mut var = vec![0.0; dim];
    for s in summaries {
        for ((v, t), m) in var.iter_mut().zip(&s.theta_bar).zip(&mean) {
            *v += (t - m) * (t - m) / reps;
        }
    }
    let std = var.iter().map(|v| v.sqrt()).collect();
    let mut iters: Vec<u64> = summaries.iter().map(|s| s.iterations).collect();
    iters.sort_unstable();
    let median_iterations = iters.get(iters.len() / 2).copied().unwrap_or(0);
    let sigma2_bar_mean = if summaries.iter().all(|s| s.sigma2_bar.is_some()) && !summaries.is_empty()
    {
        Some(summaries.iter().filter_map(|s| s.sigma2_bar).sum::<f64>() / reps)
    } else {
        None
    };
    Aggregate {
        config_hash: stamp.config_hash.clone(),
        master_seed: stamp.master_seed,
        repetitions: cfg.run.repetitions,
        theta_bar_mean: mean,
        theta_bar_std: std,
        sigma2_bar_mean,
        median_iterations,
        saturated_runs: summaries.iter().filter(|s| s.saturated).count(),
    }
}
