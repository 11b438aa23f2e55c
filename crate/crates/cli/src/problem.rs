//! Data synthesis and model assembly: turns a validated config plus a
//! repetition index into ground truth, observations, and the operator /
//! prior / domain objects the estimation and reconstruction commands run
//! on.
//!
//! Seed splitting rule: repetition `r` uses `rep_seed = master_seed + r`.
//! Within a repetition, the truth generator draws from the ChaCha stream 8
//! of `rep_seed + input.seed`, the noise generator from stream 0 of
//! `rep_seed`, and the Markov chains from streams 1-2 of `rep_seed`;
//! distinct streams keep the draws independent while everything stays
//! reproducible from one integer.

use std::path::Path;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use sapg_core::image::{DomainTag, ImageVector, Shape};
use sapg_core::model::{LikelihoodSpec, PosteriorModel, RegulariserSpec, ThetaDomain};
use sapg_core::sapg::GaussianFamily;
use sapg_core::transforms::blur::CirculantBlur;
use sapg_core::transforms::io::read_pgm;
use sapg_core::transforms::noise::{add_noise, NoiseKind};
use sapg_core::transforms::wavelet::{SynthesisOp, WaveletBasis};
use sapg_core::transforms::{ComposedOp, IdentityOp, LinearOperator};
use sapg_core::{DriftKind, LambdaRule};

use crate::config::{
    AlgorithmKind, ExperimentConfig, LambdaRuleCfg, NoiseKindCfg, PriorKind, ProblemKind,
    WaveletCfg,
};
use crate::CliError;

const TRUTH_STREAM: u64 = 8;

/// One repetition's data and the pieces needed to build models on it.
pub struct BuiltProblem {
    pub rep: usize,
    pub rep_seed: u64,
    pub height: usize,
    pub width: usize,
    /// Ground truth in the pixel domain.
    pub truth_image: Vec<f64>,
    /// Observed data (pixel domain).
    pub y: Vec<f64>,
    /// Noise variance realised by the SNR calibration. Known-noise
    /// algorithms plug it into the likelihood directly.
    pub sigma2: f64,
    blur: Option<Arc<CirculantBlur>>,
    basis: Option<Arc<WaveletBasis>>,
    cfg: ExperimentConfig,
}

pub fn build(cfg: &ExperimentConfig, rep: usize) -> Result<BuiltProblem, CliError> {
    let rep_seed = cfg.run.master_seed.wrapping_add(rep as u64);

    // Ground truth.
    let (truth_image, height, width) = match cfg.input.source.as_str() {
        "image" => {
            let (data, h, w, _maxval) = read_pgm(Path::new(&cfg.input.path))
                .map_err(|e| CliError::Io(format!("input.path: {e}")))?;
            (data, h, w)
        }
        _ => {
            let (h, w) = (cfg.input.height, cfg.input.width);
            match cfg.problem.kind {
                ProblemKind::DenoiseSynthesisL1 => {
                    // Drawn below, after the basis exists.
                    (Vec::new(), h, w)
                }
                _ => (cartoon(h, w), h, w),
            }
        }
    };

    let basis = match cfg.operator.wavelet {
        WaveletCfg::None => None,
        WaveletCfg::Orthogonal => Some(Arc::new(
            WaveletBasis::orthogonal_haar(height, width, cfg.operator.levels)
                .map_err(|e| CliError::Config(format!("operator.levels: {e}")))?,
        )),
        WaveletCfg::Undecimated => Some(Arc::new(
            WaveletBasis::undecimated_haar(height, width, cfg.operator.levels)
                .map_err(|e| CliError::Config(format!("operator.levels: {e}")))?,
        )),
    };

    // Synthesis-formulation truth is drawn in the coefficient domain.
    let truth_image = if cfg.problem.kind == ProblemKind::DenoiseSynthesisL1
        && cfg.input.source == "synthetic"
    {
        let basis = basis.as_ref().expect("validated: orthogonal basis present");
        let mut rng =
            ChaCha12Rng::seed_from_u64(rep_seed.wrapping_add(cfg.input.seed));
        rng.set_stream(TRUTH_STREAM);
        let rate = cfg.input.theta_true;
        let coeffs: Vec<f64> = (0..basis.coeff_len())
            .map(|_| {
                let u: f64 = rng.gen_range(-0.5..0.5);
                -(1.0 / rate) * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect();
        basis.synthesis(&coeffs)
    } else {
        truth_image
    };

    let blur = if cfg.operator.blur_size > 1 {
        Some(Arc::new(
            CirculantBlur::uniform(cfg.operator.blur_size, height, width)
                .map_err(|e| CliError::Config(format!("operator.blur_size: {e}")))?,
        ))
    } else {
        None
    };

    // Observation: forward image, then calibrated noise.
    let degraded = match &blur {
        Some(b) => b.apply(&truth_image),
        None => truth_image.clone(),
    };
    let kind = match cfg.noise.kind {
        NoiseKindCfg::Gaussian => NoiseKind::Gaussian,
        NoiseKindCfg::Laplace => NoiseKind::Laplace,
    };
    let (y, sigma2) = add_noise(&degraded, cfg.noise.snr_db, kind, rep_seed)
        .map_err(|e| CliError::Numerical(format!("noise synthesis: {e}")))?;

    Ok(BuiltProblem {
        rep,
        rep_seed,
        height,
        width,
        truth_image,
        y,
        sigma2,
        blur,
        basis,
        cfg: cfg.clone(),
    })
}

impl BuiltProblem {
    /// True when the unknowns are synthesis coefficients rather than
    /// pixels.
    pub fn synthesis_formulation(&self) -> bool {
        self.basis.is_some()
    }

    pub fn unknown_dim(&self) -> usize {
        match &self.basis {
            Some(b) => b.coeff_len(),
            None => self.height * self.width,
        }
    }

    fn unknown_shape_tag(&self) -> (Shape, DomainTag) {
        match &self.basis {
            Some(b) => (Shape::OneD(b.coeff_len()), DomainTag::Coefficient),
            None => (
                Shape::TwoD { height: self.height, width: self.width },
                DomainTag::Pixel,
            ),
        }
    }

    /// Full forward operator from the unknowns to the data domain.
    pub fn forward_op(&self) -> Result<Arc<dyn LinearOperator>, CliError> {
        let op: Arc<dyn LinearOperator> = match (&self.blur, &self.basis) {
            (Some(blur), Some(basis)) => Arc::new(
                ComposedOp::new(blur.clone(), Arc::new(SynthesisOp::new(basis.clone())))
                    .map_err(|e| CliError::Config(format!("operator: {e}")))?,
            ),
            (Some(blur), None) => blur.clone(),
            (None, Some(basis)) => Arc::new(SynthesisOp::new(basis.clone())),
            (None, None) => Arc::new(IdentityOp::new(self.height * self.width)),
        };
        Ok(op)
    }

    /// Maps a vector of unknowns to a pixel-domain image.
    pub fn unknowns_to_image(&self, x: &[f64]) -> Vec<f64> {
        match &self.basis {
            Some(b) => b.synthesis(x),
            None => x.to_vec(),
        }
    }

    pub fn regulariser(&self) -> Result<RegulariserSpec, CliError> {
        let dim = self.unknown_dim();
        let reg = match self.cfg.prior.kind {
            PriorKind::L1 => {
                if self.cfg.prior.per_level_blocks {
                    let basis = self.basis.as_ref().expect("validated: wavelet present");
                    RegulariserSpec::l1_blocks(basis.level_block_lens())
                        .map_err(|e| CliError::Config(format!("prior: {e}")))?
                } else {
                    RegulariserSpec::l1(dim)
                }
            }
            PriorKind::Tv => RegulariserSpec::tv_iso(
                self.height,
                self.width,
                self.cfg.prior.tv_inner_iters,
            ),
            PriorKind::SquaredL2 => RegulariserSpec::squared_l2(dim),
            PriorKind::L1Ridge => RegulariserSpec::l1_plus_ridge(dim, self.cfg.prior.ridge_eps)
                .map_err(|e| CliError::Config(format!("prior.ridge_eps: {e}")))?,
        };
        Ok(reg)
    }

    /// Likelihood at a given noise variance (the known-noise value or a
    /// joint estimate).
    pub fn likelihood(&self, sigma2: f64) -> Result<LikelihoodSpec, CliError> {
        let op = self.forward_op()?;
        let spec = match self.cfg.noise.kind {
            NoiseKindCfg::Gaussian => LikelihoodSpec::gaussian(op, self.y.clone(), sigma2, None),
            NoiseKindCfg::Laplace => {
                // Smooth at the noise scale so the envelope gradient has
                // the same stiffness as the matching Gaussian model.
                LikelihoodSpec::laplace_smoothed(op, self.y.clone(), sigma2, sigma2)
            }
        };
        spec.map_err(|e| CliError::Config(format!("likelihood: {e}")))
    }

    /// Swaps the likelihood family used for estimation while leaving the
    /// generated observations untouched. Misspecification studies use this
    /// to fit a Gaussian model to Laplace-corrupted data (or vice versa).
    pub fn set_likelihood_kind(&mut self, kind: NoiseKindCfg) {
        self.cfg.noise.kind = kind;
    }

    pub fn theta_domain(&self) -> Result<ThetaDomain, CliError> {
        ThetaDomain::new(self.cfg.sapg.theta_min.clone(), self.cfg.sapg.theta_max.clone())
            .map_err(|e| CliError::Config(format!("sapg.theta_min: {e}")))
    }

    pub fn model(&self, sigma2: f64) -> Result<PosteriorModel, CliError> {
        PosteriorModel::new(self.likelihood(sigma2)?, self.regulariser()?, self.theta_domain()?)
            .map_err(|e| CliError::Config(format!("model: {e}")))
    }

    /// Data model with the variance left free, for joint estimation.
    pub fn family(&self) -> Result<GaussianFamily, CliError> {
        GaussianFamily::new(self.forward_op()?, self.y.clone())
            .map_err(|e| CliError::Config(format!("family: {e}")))
    }

    /// Chain and reconstruction starting point: the data, mapped to the
    /// unknowns' domain (analysis coefficients under a synthesis prior).
    pub fn x0(&self) -> ImageVector {
        let (shape, tag) = self.unknown_shape_tag();
        let data = match &self.basis {
            Some(b) => b.analysis(&self.y),
            None => self.y.clone(),
        };
        ImageVector::new(data, shape, tag).expect("shape matches construction")
    }

    pub fn drift(&self) -> DriftKind {
        match self.cfg.algorithm.kind {
            AlgorithmKind::Alg1 | AlgorithmKind::Alg4 => DriftKind::Homogeneous,
            AlgorithmKind::Alg2 => DriftKind::Separable,
            AlgorithmKind::Alg3 => DriftKind::TwoChain,
        }
    }

    pub fn lambda_rule(&self) -> LambdaRule {
        match self.cfg.sapg.lambda_rule {
            LambdaRuleCfg::Conservative => LambdaRule::Conservative,
            LambdaRuleCfg::Relaxed => LambdaRule::Relaxed,
        }
    }

    /// Noise-variance search box from the observed data power and the
    /// configured SNR bracket, plus the configured starting value inside
    /// it (the midpoint by default).
    pub fn sigma_bracket(&self) -> Option<(f64, f64, f64)> {
        let sig = self.cfg.sigma.as_ref()?;
        let d = self.y.len() as f64;
        let power: f64 = self.y.iter().map(|v| v * v).sum::<f64>() / d;
        let lo = power / 10f64.powf(sig.snr_max_db / 10.0);
        let hi = power / 10f64.powf(sig.snr_min_db / 10.0);
        Some((lo, hi, lo + sig.start_fraction * (hi - lo)))
    }

    /// Degraded-observation quality against the truth, for reporting.
    pub fn degraded_mse_db(&self) -> f64 {
        sapg_core::transforms::metrics::mse_db(&self.y, &self.truth_image)
    }
}

/// Deterministic synthetic test image in the display range [0, 255]:
/// piecewise-constant shapes (rectangles and a disc, for sharp edges)
/// over a smooth diagonal ramp, a soft radial bump, and a fine
/// quasi-periodic texture across the whole frame. The smooth and
/// textured content matters: like a natural photograph, the image then
/// loses visible detail when over-regularised, so quality curves over
/// the parameter have an interior optimum instead of rewarding
/// ever-stronger smoothing.
pub fn cartoon(height: usize, width: usize) -> Vec<f64> {
    let (hf, wf) = (height as f64, width as f64);
    let tau = std::f64::consts::TAU;
    let mut img = vec![0.0; height * width];
    for i in 0..height {
        for j in 0..width {
            let (fi, fj) = (i as f64 / hf, j as f64 / wf);
            let k = i * width + j;
            // Smooth background: diagonal ramp from 30 to 80.
            img[k] = 30.0 + 50.0 * 0.5 * (fi + fj);
            if (0.12..0.45).contains(&fi) && (0.18..0.55).contains(&fj) {
                img[k] = 210.0;
            } else if (0.55..0.70).contains(&fi) && (0.10..0.80).contains(&fj) {
                img[k] = 90.0;
            }
            let (ci, cj) = (fi - 0.72, fj - 0.72);
            if ci * ci + cj * cj < 0.030 {
                img[k] = 150.0;
            }
            // Soft bump in the upper-right quadrant.
            let (bi, bj) = (fi - 0.25, fj - 0.80);
            let r2 = bi * bi + bj * bj;
            img[k] += 70.0 * (-r2 / 0.008).exp();
            // Fine-scale texture over the whole frame, at two scales.
            img[k] += 20.0 * (tau * 7.0 * fi + 1.1).sin() * (tau * 10.0 * fj + 0.7).cos();
            img[k] += 8.0 * (tau * 4.0 * fi + 2.3).sin() * (tau * 5.0 * fj + 0.4).cos();
            img[k] += 10.0 * (tau * 9.0 * fi + 0.5).sin() * (tau * 9.0 * fj + 1.9).cos();
            // Pixel-scale grain, like photographic micro-texture.
            img[k] += 18.0 * (tau * 37.0 * fi + 2.9).sin() * (tau * 41.0 * fj + 0.3).cos();
        }
    }
    img
}
