//! `diagnose`: convergence diagnostics for a finished estimation run.
//!
//! Reads the first repetition's trace, then re-runs a sampling chain at
//! the stored estimate to judge it three ways: the log-probability trace
//! should settle, the ascent-direction residual should shrink along the
//! original run, and the sample autocorrelation should decay fast enough
//! that the recorded statistics carry real information. Two-chain runs
//! additionally get the prior chain's autocorrelation and the imbalance
//! ratio between the two integrated autocorrelation times.

use std::path::Path;

use sapg_core::sampler::{
    autocorrelation, integrated_autocorr_time, run_chain, trace_is_stabilised, warm_up,
    STREAM_POSTERIOR, STREAM_PRIOR,
};
use sapg_core::{ChainKind, ChainState, KernelParams};

use crate::commands::estimate::rep_dir_name;
use crate::config::AlgorithmKind;
use crate::output::{self, Diagnosis, RepSummary, RunStamp};
use crate::problem;
use crate::{CliError, DiagnoseArgs};

/// Recorded samples in the re-run chain; long enough for stable
/// autocorrelation-time estimates at desk scale.
const DIAG_SAMPLES: u64 = 2000;

pub fn run(args: &DiagnoseArgs) -> Result<(), CliError> {
    let cfg = crate::load_effective_config(&args.common)?;
    let stamp = RunStamp { config_hash: cfg.hash(), master_seed: cfg.run.master_seed };
    let root = cfg.run.output_dir.clone();
    let rep_dir = root.join(rep_dir_name(0));

    // Both reads fail with an I/O error when no run exists here.
    let summary: RepSummary = output::read_json(&rep_dir.join("summary.json"))?;
    let (columns, rows) = output::read_csv(&rep_dir.join("theta_trace.csv"))?;

    let out_dir = root.join("diagnose");
    output::prepare_dir(&out_dir)?;

    let grad_residual_ratio =
        write_grad_residual(&columns, &rows, &stamp, &out_dir.join("grad_residual.csv"))?;

    // Fresh chain at the stored estimate.
    let built = problem::build(&cfg, 0)?;
    let sigma2 = summary.sigma2_bar.unwrap_or(built.sigma2);
    let model = built.model(sigma2)?;
    let theta = summary.theta_bar.clone();
    let kernel =
        KernelParams::guideline_posterior(model.likelihood.lipschitz(), built.lambda_rule())?;

    let mut state = ChainState::new(built.x0(), built.rep_seed, STREAM_POSTERIOR);
    warm_up(&model, &mut state, &theta, &kernel, cfg.sapg.warmup, ChainKind::Posterior)?;
    let samples = run_chain(
        &model,
        &mut state,
        &theta,
        &kernel,
        DIAG_SAMPLES * cfg.sapg.thinning,
        cfg.sapg.thinning,
        ChainKind::Posterior,
    )?;
    let log_probs: Vec<f64> = samples.iter().map(|s| s.log_prob).collect();
    let stat0: Vec<f64> = samples.iter().map(|s| s.stat[0]).collect();

    let lp_rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| vec![s.iteration as f64, s.log_prob])
        .collect();
    output::write_stamped_csv(
        &out_dir.join("logprob_trace.csv"),
        &stamp,
        &["step", "log_prob"],
        &lp_rows,
    )?;

    let max_lag = (stat0.len() / 4).min(100);
    write_acf(&stat0, max_lag, &stamp, &out_dir.join("acf_posterior.csv"))?;
    let iat_posterior = integrated_autocorr_time(&stat0)?;

    // The prior chain only matters when the estimator actually ran one.
    let (iat_prior, imbalance_ratio) = if cfg.algorithm.kind == AlgorithmKind::Alg3 {
        let prior_kernel = KernelParams::guideline_prior(kernel.lambda)?;
        let mut prior_state = ChainState::new(built.x0(), built.rep_seed, STREAM_PRIOR);
        warm_up(&model, &mut prior_state, &theta, &prior_kernel, cfg.sapg.warmup, ChainKind::Prior)?;
        let prior_samples = run_chain(
            &model,
            &mut prior_state,
            &theta,
            &prior_kernel,
            DIAG_SAMPLES * cfg.sapg.thinning_prior,
            cfg.sapg.thinning_prior,
            ChainKind::Prior,
        )?;
        let prior_stat0: Vec<f64> = prior_samples.iter().map(|s| s.stat[0]).collect();
        write_acf(&prior_stat0, max_lag, &stamp, &out_dir.join("acf_prior.csv"))?;
        let iat = integrated_autocorr_time(&prior_stat0)?;
        (Some(iat), Some(iat / iat_posterior))
    } else {
        (None, None)
    };

    let diagnosis = Diagnosis {
        config_hash: stamp.config_hash.clone(),
        master_seed: stamp.master_seed,
        rep: 0,
        theta_bar: theta,
        stabilised: trace_is_stabilised(&log_probs),
        grad_residual_ratio,
        iat_posterior,
        iat_prior,
        imbalance_ratio,
    };
    output::write_json(&out_dir.join("diagnosis.json"), &diagnosis)?;

    println!(
        "diagnose: stabilised {}, residual ratio {:.3e}, iat {:.1}{} -> {}",
        diagnosis.stabilised,
        diagnosis.grad_residual_ratio,
        diagnosis.iat_posterior,
        match diagnosis.imbalance_ratio {
            Some(r) => format!(", imbalance {r:.2}"),
            None => String::new(),
        },
        out_dir.display()
    );
    Ok(())
}

/// Extracts the ascent-direction residual from the recorded trace and
/// writes it with the per-iteration step. Returns the mean of the
/// last-decile steps over the mean of the first-decile steps.
fn write_grad_residual(
    columns: &[String],
    rows: &[Vec<f64>],
    stamp: &RunStamp,
    path: &Path,
) -> Result<f64, CliError> {
    let col = |name: &str| {
        columns.iter().position(|c| c == name).ok_or_else(|| {
            CliError::Io(format!("theta_trace.csv: missing column `{name}`"))
        })
    };
    let (n_col, delta_col, grad_col) = (col("n")?, col("delta")?, col("grad_norm")?);
    let out_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let step = r[delta_col] * r[grad_col];
            vec![r[n_col], r[delta_col], r[grad_col], step]
        })
        .collect();
    output::write_stamped_csv(
        path,
        stamp,
        &["n", "delta", "grad_norm", "step_sup"],
        &out_rows,
    )?;

    if out_rows.is_empty() {
        return Err(CliError::Io("theta_trace.csv: no iterations recorded".into()));
    }
    let window = (out_rows.len() / 10).max(1);
    let mean_of = |slice: &[Vec<f64>]| {
        slice.iter().map(|r| r[3]).sum::<f64>() / slice.len() as f64
    };
    let first = mean_of(&out_rows[..window]);
    let last = mean_of(&out_rows[out_rows.len() - window..]);
    Ok(last / first.max(f64::MIN_POSITIVE))
}

fn write_acf(
    series: &[f64],
    max_lag: usize,
    stamp: &RunStamp,
    path: &Path,
) -> Result<(), CliError> {
    let acf = autocorrelation(series, max_lag)?;
    let rows: Vec<Vec<f64>> =
        acf.iter().enumerate().map(|(lag, v)| vec![lag as f64, *v]).collect();
    output::write_stamped_csv(path, stamp, &["lag", "acf"], &rows)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_run_directory_is_an_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        let args = DiagnoseArgs {
            common: crate::CommonArgs {
                config: "tv-deblur".into(),
                seed: None,
                workers: None,
                out: Some(tmp.path().join("nothing_here")),
            },
        };
        match run(&args) {
            Err(e @ CliError::Io(_)) => assert_eq!(e.exit_code(), 4),
            other => panic!("expected an i/o error, got {other:?}"),
        }
    }
}
