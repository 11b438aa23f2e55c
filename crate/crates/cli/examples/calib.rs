//! Scratch calibration harness: drives the acceptance-scale experiments
//! in-process and prints the numbers needed to freeze preset constants.
//! Not part of the shipped surface.

use std::time::Instant;

use sapg_cli::commands::estimate::{estimate_joint, estimate_single};
use sapg_cli::config::ExperimentConfig;
use sapg_cli::problem;
use sapg_core::solve_map;
use sapg_core::transforms::metrics::mse_db;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cmd = args.first().map(String::as_str).unwrap_or("help");
    match cmd {
        "denoise" => denoise(&args[1..]),
        "laplace40" => laplace40(&args[1..]),
        "joint" => joint(&args[1..]),
        "tvdeblur" => tvdeblur(&args[1..]),
        _ => eprintln!("usage: calib denoise|laplace40|joint|tvdeblur ..."),
    }
}

fn parse<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn load(text: &str) -> ExperimentConfig {
    let cfg: ExperimentConfig = toml::from_str(text).expect("parse");
    cfg.validate().expect("validate");
    cfg
}

// ---- criterion 1 dry run ------------------------------------------------

fn denoise(args: &[String]) {
    let reps: usize = parse(args, 0, 10);
    let size: usize = parse(args, 1, 256);
    let c0: f64 = parse(args, 2, 0.5);
    let theta0: f64 = parse(args, 3, 2.0);
    let burn: u64 = parse(args, 4, 5);
    let warmup: u64 = parse(args, 5, 50);
    let snr: f64 = parse(args, 6, 30.0);

    let mut cfg = ExperimentConfig::load("denoise-laplace").expect("preset");
    cfg.input.height = size;
    cfg.input.width = size;
    cfg.noise.snr_db = snr;
    cfg.sapg.c0 = c0;
    cfg.sapg.theta0 = vec![theta0];
    cfg.sapg.burn_in = burn;
    cfg.sapg.warmup = warmup;
    cfg.run.repetitions = reps;

    let started = Instant::now();
    let mut thetas = Vec::new();
    let mut iters = Vec::new();
    for rep in 0..reps {
        let built = problem::build(&cfg, rep).expect("build");
        let run = estimate_single(&cfg, &built).expect("run");
        println!(
            "rep {rep:02}: theta_bar {:.5} iters {:3} stop {:?} sat {}",
            run.theta_bar[0], run.iterations, run.stopped_by, run.saturated
        );
        thetas.push(run.theta_bar[0]);
        iters.push(run.iterations);
    }
    iters.sort_unstable();
    let mean = thetas.iter().sum::<f64>() / reps as f64;
    let sd = (thetas.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / reps as f64).sqrt();
    println!(
        "mean {mean:.5} sd {sd:.5} median_iters {} wall {:.1}s",
        iters[reps / 2],
        started.elapsed().as_secs_f64()
    );
}

// ---- criterion 2 dry run ------------------------------------------------

fn laplace40(args: &[String]) {
    use sapg_cli::config::NoiseKindCfg;

    let reps: usize = parse(args, 0, 10);
    let size: usize = parse(args, 1, 256);
    let snr: f64 = parse(args, 2, 40.0);

    let mut cfg = ExperimentConfig::load("denoise-laplace").expect("preset");
    cfg.input.height = size;
    cfg.input.width = size;
    cfg.noise.snr_db = snr;
    cfg.noise.kind = NoiseKindCfg::Laplace;
    cfg.run.repetitions = reps;

    let mut means = Vec::new();
    for lik in [NoiseKindCfg::Laplace, NoiseKindCfg::Gaussian] {
        let started = Instant::now();
        let mut thetas = Vec::new();
        for rep in 0..reps {
            let mut built = problem::build(&cfg, rep).expect("build");
            built.set_likelihood_kind(lik);
            let run = estimate_single(&cfg, &built).expect("run");
            thetas.push(run.theta_bar[0]);
        }
        let mean = thetas.iter().sum::<f64>() / reps as f64;
        println!(
            "likelihood {lik:?}: mean {mean:.5} over {reps} reps, wall {:.1}s",
            started.elapsed().as_secs_f64()
        );
        means.push(mean);
    }
    println!("gaussian/laplace ratio {:.4}", means[1] / means[0]);
}

// ---- criterion 9 exploration ---------------------------------------------

fn joint(args: &[String]) {
    let size: usize = parse(args, 0, 64);
    let snr: f64 = parse(args, 1, 30.0);
    let start_fraction: f64 = parse(args, 2, 0.5);
    let c0: f64 = parse(args, 3, 10.0);
    let c0_sigma: f64 = parse(args, 4, 10.0);
    let seed: u64 = parse(args, 5, 404);
    let max_iters: u64 = parse(args, 6, 400);
    let blur: usize = parse(args, 7, 1);

    let text = format!(
        r#"
[problem]
kind = "custom"
[input]
height = {size}
width = {size}
[operator]
blur_size = {blur}
[noise]
kind = "gaussian"
snr_db = {snr}
[algorithm]
kind = "alg4"
[prior]
kind = "tv"
tv_inner_iters = 25
[sapg]
theta0 = [0.01]
theta_min = [1e-4]
theta_max = [10.0]
c0 = {c0}
burn_in = 25
tolerance = 1e-3
max_iters = {max_iters}
warmup = 300
log_scale = true
[sigma]
snr_min_db = 15.0
snr_max_db = 45.0
c0_sigma = {c0_sigma}
stages = 3
start_fraction = {start_fraction}
[run]
output_dir = "/tmp/calib-joint"
master_seed = {seed}
"#
    );
    let cfg = load(&text);
    let built = problem::build(&cfg, 0).expect("build");
    let (lo, hi, s0) = built.sigma_bracket().expect("bracket");
    println!(
        "sigma2 true {:.4}, bracket [{lo:.4}, {hi:.4}], start {s0:.4}",
        built.sigma2
    );

    let started = Instant::now();
    let run = estimate_joint(&cfg, &built).expect("joint run");
    for st in &run.stages {
        println!(
            "stage {}: gamma {:.5e} lambda {:.5e} theta_bar {:.5} sigma2_bar {:.4} iters {} stop {:?}",
            st.stage, st.gamma, st.lambda, st.theta_bar[0], st.sigma2_bar, st.iterations, st.stopped_by
        );
    }
    println!(
        "joint: theta_bar {:.5} sigma2_bar {:.4} (true {:.4}, ratio {:.3}) sat_th {} sat_sig {} wall {:.1}s",
        run.theta_bar[0],
        run.sigma2_bar,
        built.sigma2,
        run.sigma2_bar / built.sigma2,
        run.saturated_theta,
        run.saturated_sigma2,
        started.elapsed().as_secs_f64()
    );

    // Known-variance reference on identical data.
    let mut ref_text = text.replace("kind = \"alg4\"", "kind = \"alg1\"");
    let sig_at = ref_text.find("[sigma]").expect("sigma section");
    let run_at = ref_text.find("[run]").expect("run section");
    ref_text.replace_range(sig_at..run_at, "");
    let ref_cfg = load(&ref_text);
    let ref_built = problem::build(&ref_cfg, 0).expect("build ref");
    assert_eq!(ref_built.y, built.y, "reference data must be identical");
    let started = Instant::now();
    let ref_run = estimate_single(&ref_cfg, &ref_built).expect("ref run");
    println!(
        "known-sigma: theta_bar {:.5} iters {} (joint/known ratio {:.3}) wall {:.1}s",
        ref_run.theta_bar[0],
        ref_run.iterations,
        run.theta_bar[0] / ref_run.theta_bar[0],
        started.elapsed().as_secs_f64()
    );
}

// ---- criterion 10 dry run -------------------------------------------------

fn tvdeblur(args: &[String]) {
    use rayon::prelude::*;

    let size: usize = parse(args, 0, 128);
    let c0: f64 = parse(args, 1, 0.1);
    let theta0: f64 = parse(args, 2, 0.01);
    let max_iters: u64 = parse(args, 3, 500);
    let map_iters: u64 = parse(args, 4, 1000);

    let mut cfg = ExperimentConfig::load("tv-deblur").expect("preset");
    cfg.input.height = size;
    cfg.input.width = size;
    cfg.sapg.c0 = c0;
    cfg.sapg.theta0 = vec![theta0];
    cfg.sapg.max_iters = max_iters;
    cfg.map.max_iters = map_iters;

    let built = problem::build(&cfg, 0).expect("build");
    let started = Instant::now();
    let run = estimate_single(&cfg, &built).expect("run");
    let est_wall = started.elapsed().as_secs_f64();
    let tb = run.theta_bar[0];
    println!(
        "estimate: theta_bar {tb:.5} iters {} stop {:?} sat {} wall {est_wall:.1}s",
        run.iterations, run.stopped_by, run.saturated
    );

    // 12-point sweep plus the estimate itself, solved in parallel.
    let started = Instant::now();
    let solve = |theta: f64| {
        let model = built.model(built.sigma2).expect("model");
        let r = solve_map(&model, &[theta], &built.x0(), cfg.map.tol, cfg.map.max_iters)
            .expect("map");
        let img = built.unknowns_to_image(r.x.as_slice());
        (mse_db(&img, &built.truth_image), r.converged, r.iterations)
    };
    let mut grid = sapg_cli::commands::sweep::auto_grid(tb, 12);
    grid.push(tb);
    let results: Vec<_> = grid.par_iter().map(|t| solve(*t)).collect();
    let mut best = f64::INFINITY;
    for (t, (m, conv, it)) in grid.iter().zip(&results).take(12) {
        println!("  theta {t:.5}: mse {m:.3} dB converged {conv} iters {it}");
        best = best.min(*m);
    }
    let (at_tb, conv, it) = results[12];
    println!(
        "sweep: min {best:.3} dB, at theta_bar {at_tb:.3} dB (gap {:.3} dB, converged {conv} iters {it}) wall {:.1}s",
        at_tb - best,
        started.elapsed().as_secs_f64()
    );
}
