//! `sweep`: reconstructs the first repetition over a grid of parameter
//! values and tabulates the error against the truth, so an estimate can
//! be compared with the oracle value that actually minimises the MSE.
//!
//! The grid comes from `--theta`, or defaults to 12 log-spaced points
//! spanning one decade either side of the stored estimate. When an
//! estimate is available its own MSE and the gap to the grid minimum are
//! reported alongside.

use rayon::prelude::*;

use crate::commands::map::{read_stored_summary, reconstruct};
use crate::output::{self, RunStamp, SweepReport};
use crate::problem;
use crate::{CliError, SweepArgs};

/// Number of grid points when the grid is derived from an estimate.
pub const AUTO_GRID_POINTS: usize = 12;

/// Log-spaced grid over `[center/10, 10*center]`, inclusive.
pub fn auto_grid(center: f64, points: usize) -> Vec<f64> {
    let lo = (center / 10.0).log10();
    let hi = (center * 10.0).log10();
    (0..points)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64))
        .collect()
}

pub fn run(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = crate::load_effective_config(&args.common)?;
    if cfg.expected_theta_dim() != 1 {
        return Err(CliError::Config(
            "sweep grids are one-dimensional; this config estimates a parameter vector".into(),
        ));
    }
    let stamp = RunStamp { config_hash: cfg.hash(), master_seed: cfg.run.master_seed };
    let root = cfg.run.output_dir.clone();

    let stored = read_stored_summary(&root);
    let theta_bar = stored.as_ref().map(|s| s.theta_bar[0]);
    let sigma2_bar = stored.as_ref().and_then(|s| s.sigma2_bar);
    let grid = match &args.theta {
        Some(g) => {
            let mut g = g.clone();
            g.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
            g
        }
        None => match theta_bar {
            Some(t) => auto_grid(t, AUTO_GRID_POINTS),
            None => {
                return Err(CliError::Config(
                    "no grid available: pass --theta or run `estimate` into this output \
                     directory first"
                        .into(),
                ));
            }
        },
    };
    if grid.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(CliError::Config(format!(
            "grid values must be positive and finite, got {grid:?}"
        )));
    }

    let built = problem::build(&cfg, 0)?;
    let sigma2 = sigma2_bar.unwrap_or(built.sigma2);
    let sweep_dir = root.join("sweep");
    output::prepare_dir(&sweep_dir)?;

    // One reconstruction per grid point (plus one at the estimate), each
    // into its own subdirectory; grid points are independent solves.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| CliError::Config(format!("run.workers: {e}")))?;
    let mut jobs: Vec<(usize, f64)> = grid.iter().copied().enumerate().collect();
    if let Some(t) = theta_bar {
        jobs.push((grid.len(), t));
    }
    let results = pool.install(|| {
        jobs.par_iter()
            .map(|(k, theta)| {
                let point_dir = sweep_dir.join(format!("point_{k:02}"));
                output::prepare_dir(&point_dir)?;
                let built = problem::build(&cfg, 0)?;
                let m = reconstruct(&cfg, &built, &[*theta], sigma2, &stamp, &point_dir)?;
                output::write_json(&point_dir.join("metrics.json"), &m)?;
                Ok((*k, *theta, m))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let mut rows: Vec<Vec<f64>> = results
        .iter()
        .filter(|(k, _, _)| *k < grid.len())
        .map(|(_, t, m)| {
            vec![*t, m.mse_db, m.psnr_db, if m.converged { 1.0 } else { 0.0 }, m.iterations as f64]
        })
        .collect();
    rows.sort_by(|a, b| a[0].partial_cmp(&b[0]).expect("finite grid"));
    output::write_stamped_csv(
        &sweep_dir.join("sweep.csv"),
        &stamp,
        &["theta", "mse_db", "psnr_db", "converged", "map_iterations"],
        &rows,
    )?;

    let (argmin_theta, argmin_mse_db) = rows
        .iter()
        .map(|r| (r[0], r[1]))
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite mse"))
        .expect("non-empty grid");
    let mse_at_theta_bar = results
        .iter()
        .find(|(k, _, _)| *k == grid.len())
        .map(|(_, _, m)| m.mse_db);
    let report = SweepReport {
        config_hash: stamp.config_hash.clone(),
        master_seed: stamp.master_seed,
        rep: 0,
        grid: rows.iter().map(|r| r[0]).collect(),
        mse_db: rows.iter().map(|r| r[1]).collect(),
        argmin_theta,
        argmin_mse_db,
        theta_bar,
        mse_at_theta_bar,
        gap_db: mse_at_theta_bar.map(|m| m - argmin_mse_db),
    };
    output::write_json(&sweep_dir.join("argmin.json"), &report)?;

    match (theta_bar, report.gap_db) {
        (Some(t), Some(gap)) => println!(
            "sweep: {} points, argmin theta {argmin_theta:.4} ({argmin_mse_db:.2} dB); \
             estimate {t:.4} is {gap:.3} dB off the grid minimum -> {}",
            rows.len(),
            sweep_dir.display()
        ),
        _ => println!(
            "sweep: {} points, argmin theta {argmin_theta:.4} ({argmin_mse_db:.2} dB) -> {}",
            rows.len(),
            sweep_dir.display()
        ),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_grid_spans_two_decades() {
        let g = auto_grid(1.0, AUTO_GRID_POINTS);
        assert_eq!(g.len(), 12);
        assert!((g[0] - 0.1).abs() < 1e-12);
        assert!((g[11] - 10.0).abs() < 1e-9);
        for w in g.windows(2) {
            assert!(w[1] > w[0]);
        }
        // Log-uniform spacing.
        let r0 = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r0).abs() < 1e-9);
        }
    }
}
