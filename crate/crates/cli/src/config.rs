//! Experiment configuration: TOML schema, named presets, semantic
//! validation with field paths, and the canonical hash that stamps every
//! output file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// The four shipped experiment presets, resolvable by name in `--config`.
pub const PRESETS: &[(&str, &str)] = &[
    ("denoise-laplace", include_str!("../presets/denoise-laplace.toml")),
    ("tv-deblur", include_str!("../presets/tv-deblur.toml")),
    ("wavelet-deconv", include_str!("../presets/wavelet-deconv.toml")),
    ("joint-noise", include_str!("../presets/joint-noise.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    DenoiseSynthesisL1,
    DeblurTv,
    DeblurWaveletL1,
    DeblurTvUnknownSigma,
    Custom,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProblemKind::DenoiseSynthesisL1 => "denoise_synthesis_l1",
            ProblemKind::DeblurTv => "deblur_tv",
            ProblemKind::DeblurWaveletL1 => "deblur_wavelet_l1",
            ProblemKind::DeblurTvUnknownSigma => "deblur_tv_unknown_sigma",
            ProblemKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Alg1,
    Alg2,
    Alg3,
    Alg4,
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AlgorithmKind::Alg1 => "alg1",
            AlgorithmKind::Alg2 => "alg2",
            AlgorithmKind::Alg3 => "alg3",
            AlgorithmKind::Alg4 => "alg4",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindCfg {
    Gaussian,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    L1,
    Tv,
    SquaredL2,
    L1Ridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletCfg {
    None,
    Orthogonal,
    Undecimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRuleCfg {
    Conservative,
    Relaxed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    /// "synthetic" generates ground truth internally; "image" reads a PGM.
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default)]
    pub path: String,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default = "default_size")]
    pub width: usize,
    /// Parameter used by generators that draw the truth from the prior.
    #[serde(default = "default_one")]
    pub theta_true: f64,
    /// Extra offset folded into the truth-generator stream so different
    /// datasets can share a master seed.
    #[serde(default)]
    pub seed: u64,
}

fn default_source() -> String {
    "synthetic".into()
}
fn default_size() -> usize {
    64
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKindCfg,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub kind: AlgorithmKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    /// Side length of the uniform blur kernel; 1 means no blur.
    #[serde(default = "default_blur")]
    pub blur_size: usize,
    #[serde(default = "default_wavelet")]
    pub wavelet: WaveletCfg,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_blur() -> usize {
    1
}
fn default_wavelet() -> WaveletCfg {
    WaveletCfg::None
}
fn default_levels() -> usize {
    4
}

impl Default for OperatorSection {
    fn default() -> Self {
        Self { blur_size: 1, wavelet: WaveletCfg::None, levels: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub kind: PriorKind,
    /// Ridge weight for `l1_ridge`.
    #[serde(default = "default_eps")]
    pub ridge_eps: f64,
    #[serde(default = "default_tv_iters")]
    pub tv_inner_iters: usize,
    /// Give each wavelet level its own parameter (separable drift).
    #[serde(default)]
    pub per_level_blocks: bool,
}

fn default_eps() -> f64 {
    1e-3
}
fn default_tv_iters() -> usize {
    25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SapgSection {
    pub theta0: Vec<f64>,
    pub theta_min: Vec<f64>,
    pub theta_max: Vec<f64>,
    /// Step size is `c0 * n^(-exponent) / problem_dim`.
    pub c0: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    /// Averaging starts after this many iterations.
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    pub tolerance: f64,
    pub max_iters: u64,
    #[serde(default)]
    pub warmup: u64,
    #[serde(default = "default_one_u64")]
    pub samples_per_iter: u64,
    #[serde(default = "default_one_u64")]
    pub thinning: u64,
    #[serde(default = "default_one_u64")]
    pub thinning_prior: u64,
    #[serde(default = "default_true")]
    pub log_scale: bool,
    #[serde(default = "default_lambda_rule")]
    pub lambda_rule: LambdaRuleCfg,
}

fn default_exponent() -> f64 {
    0.8
}
fn default_burn_in() -> u64 {
    0
}
fn default_one_u64() -> u64 {
    1
}
fn default_true() -> bool {
    true
}
fn default_lambda_rule() -> LambdaRuleCfg {
    LambdaRuleCfg::Relaxed
}

/// Noise-variance search box for `alg4`, expressed as an SNR bracket
/// relative to the observed data power.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSection {
    #[serde(default = "default_snr_min")]
    pub snr_min_db: f64,
    #[serde(default = "default_snr_max")]
    pub snr_max_db: f64,
    pub c0_sigma: f64,
    #[serde(default = "default_stages")]
    pub stages: u32,
    /// Where the variance iteration starts inside the admissible bracket:
    /// 0 is the lower bound, 1 the upper, 0.5 the midpoint rule.
    #[serde(default = "default_start_fraction")]
    pub start_fraction: f64,
}

fn default_snr_min() -> f64 {
    15.0
}
fn default_snr_max() -> f64 {
    45.0
}
fn default_stages() -> u32 {
    3
}
fn default_start_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    #[serde(default = "default_map_tol")]
    pub tol: f64,
    #[serde(default = "default_map_iters")]
    pub max_iters: u64,
}

fn default_map_tol() -> f64 {
    1e-6
}
fn default_map_iters() -> u64 {
    1000
}

impl Default for MapSection {
    fn default() -> Self {
        Self { tol: default_map_tol(), max_iters: default_map_iters() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub output_dir: PathBuf,
    #[serde(default = "default_one_usize")]
    pub repetitions: usize,
    pub master_seed: u64,
    /// 0 lets the thread pool pick its own size.
    #[serde(default)]
    pub workers: usize,
}

fn default_one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub input: InputSection,
    pub noise: NoiseSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub operator: OperatorSection,
    pub prior: PriorSection,
    pub sapg: SapgSection,
    #[serde(default)]
    pub sigma: Option<SigmaSection>,
    #[serde(default)]
    pub map: MapSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    /// Loads a config from a file path, or from the named preset when the
    /// argument matches one (no path separators, known name).
    pub fn load(spec: &str) -> Result<Self, CliError> {
        let text = match PRESETS.iter().find(|(name, _)| *name == spec) {
            Some((_, body)) => body.to_string(),
            None => {
                let path = Path::new(spec);
                std::fs::read_to_string(path).map_err(|e| {
                    CliError::Io(format!("cannot read config `{spec}`: {e}"))
                })?
            }
        };
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical hash of the fully resolved configuration. Both the TOML
    /// serialisation and the digest are deterministic, so reruns of the
    /// same experiment stamp identical hashes into their outputs.
    pub fn hash(&self) -> String {
        let canon = toml::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canon.as_bytes());
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    /// Semantic validation beyond what serde enforces. Error messages
    /// name the offending field path.
    pub fn validate(&self) -> Result<(), CliError> {
        let err = |path: &str, msg: String| Err(CliError::Config(format!("{path}: {msg}")));

        if self.input.source != "synthetic" && self.input.source != "image" {
            return err(
                "input.source",
                format!("must be `synthetic` or `image`, got `{}`", self.input.source),
            );
        }
        if self.input.source == "image" && self.input.path.is_empty() {
            return err("input.path", "required when input.source = `image`".into());
        }
        if self.input.source == "synthetic" && (self.input.height == 0 || self.input.width == 0) {
            return err("input.height/width", "synthetic images need a positive size".into());
        }
        if !self.noise.snr_db.is_finite() {
            return err("noise.snr_db", format!("must be finite, got {}", self.noise.snr_db));
        }
        if self.operator.blur_size == 0 || self.operator.blur_size % 2 == 0 {
            return err(
                "operator.blur_size",
                format!("must be odd and positive, got {}", self.operator.blur_size),
            );
        }
        if self.operator.wavelet != WaveletCfg::None && self.operator.levels == 0 {
            return err("operator.levels", "wavelet transforms need at least one level".into());
        }
        if self.noise.kind == NoiseKindCfg::Laplace
            && (self.operator.blur_size != 1 || self.operator.wavelet == WaveletCfg::Undecimated)
        {
            // The smoothed Laplace data term is only exact when the forward
            // map preserves norms, so the residual coordinates stay
            // independent.
            return err(
                "noise.kind",
                "the laplace likelihood requires an isometric forward operator \
                 (no blur, orthogonal or no wavelet)"
                    .into(),
            );
        }

        // Structural coherence of the problem presets.
        match self.problem.kind {
            ProblemKind::DenoiseSynthesisL1 => {
                if self.prior.kind != PriorKind::L1 {
                    return err(
                        "prior.kind",
                        format!(
                            "problem.kind = denoise_synthesis_l1 requires l1, got {:?}",
                            self.prior.kind
                        ),
                    );
                }
                if self.operator.wavelet != WaveletCfg::Orthogonal {
                    return err(
                        "operator.wavelet",
                        "denoise_synthesis_l1 works on orthogonal synthesis coefficients".into(),
                    );
                }
                if self.operator.blur_size != 1 {
                    return err(
                        "operator.blur_size",
                        "denoise_synthesis_l1 is a pure denoising problem (blur_size = 1)".into(),
                    );
                }
            }
            ProblemKind::DeblurTv | ProblemKind::DeblurTvUnknownSigma => {
                if self.prior.kind != PriorKind::Tv {
                    return err(
                        "prior.kind",
                        format!("{} requires the tv prior, got {:?}", self.problem.kind, self.prior.kind),
                    );
                }
                if self.operator.wavelet != WaveletCfg::None {
                    return err(
                        "operator.wavelet",
                        format!("{} operates in the pixel domain", self.problem.kind),
                    );
                }
            }
            ProblemKind::DeblurWaveletL1 => {
                if self.prior.kind != PriorKind::L1 {
                    return err(
                        "prior.kind",
                        format!("deblur_wavelet_l1 requires l1, got {:?}", self.prior.kind),
                    );
                }
                if self.operator.wavelet == WaveletCfg::None {
                    return err(
                        "operator.wavelet",
                        "deblur_wavelet_l1 needs a synthesis transform".into(),
                    );
                }
            }
            ProblemKind::Custom => {}
        }

        // Algorithm / regulariser compatibility.
        let theta_dim_expected = self.expected_theta_dim();
        match self.algorithm.kind {
            AlgorithmKind::Alg1 => {
                if self.prior.per_level_blocks {
                    return err(
                        "prior.per_level_blocks",
                        "alg1 estimates a single parameter; use alg2 for per-level blocks".into(),
                    );
                }
                if self.prior.kind == PriorKind::L1Ridge {
                    return err(
                        "algorithm.kind",
                        "the l1_ridge prior is not positively homogeneous; alg1's \
                         closed-form drift does not apply (use alg3)"
                            .into(),
                    );
                }
            }
            AlgorithmKind::Alg2 => {
                if !self.prior.per_level_blocks {
                    return err(
                        "prior.per_level_blocks",
                        "alg2 needs a block-separable prior; enable per_level_blocks".into(),
                    );
                }
                if self.prior.kind != PriorKind::L1 || self.operator.wavelet == WaveletCfg::None {
                    return err(
                        "prior.kind",
                        "per-level blocks are defined for l1 priors on wavelet coefficients".into(),
                    );
                }
            }
            AlgorithmKind::Alg3 => {
                if self.prior.kind != PriorKind::L1Ridge {
                    return err(
                        "prior.kind",
                        "alg3 samples the prior directly and needs a proper one; use l1_ridge"
                            .into(),
                    );
                }
                if !(self.prior.ridge_eps > 0.0) {
                    return err(
                        "prior.ridge_eps",
                        format!("must be positive for a proper prior, got {}", self.prior.ridge_eps),
                    );
                }
            }
            AlgorithmKind::Alg4 => {
                if self.sigma.is_none() {
                    return err("sigma", "alg4 estimates the noise variance; add a [sigma] section".into());
                }
                if self.noise.kind != NoiseKindCfg::Gaussian {
                    return err(
                        "noise.kind",
                        "alg4's variance update assumes Gaussian noise".into(),
                    );
                }
                if self.prior.kind == PriorKind::L1Ridge {
                    return err(
                        "prior.kind",
                        "alg4 needs a scaling prior (l1, tv or squared_l2)".into(),
                    );
                }
                if self.prior.per_level_blocks {
                    return err(
                        "prior.per_level_blocks",
                        "joint noise estimation is implemented for a scalar parameter".into(),
                    );
                }
            }
        }
        if self.algorithm.kind != AlgorithmKind::Alg4 && self.sigma.is_some() {
            return err("sigma", "only alg4 reads the [sigma] section".into());
        }

        // SAPG numerics.
        let s = &self.sapg;
        if s.theta0.len() != theta_dim_expected
            || s.theta_min.len() != theta_dim_expected
            || s.theta_max.len() != theta_dim_expected
        {
            return err(
                "sapg.theta0",
                format!(
                    "theta0/theta_min/theta_max must have {} component(s) for this problem, got {}/{}/{}",
                    theta_dim_expected,
                    s.theta0.len(),
                    s.theta_min.len(),
                    s.theta_max.len()
                ),
            );
        }
        for (j, ((t0, lo), hi)) in s.theta0.iter().zip(&s.theta_min).zip(&s.theta_max).enumerate() {
            if !(*lo > 0.0 && lo < hi && t0 >= lo && t0 <= hi) {
                return err(
                    "sapg.theta0",
                    format!("component {j}: need 0 < theta_min <= theta0 <= theta_max, got {lo} / {t0} / {hi}"),
                );
            }
        }
        if !(s.c0 > 0.0) || !s.c0.is_finite() {
            return err("sapg.c0", format!("must be positive and finite, got {}", s.c0));
        }
        if !(0.6..=0.9).contains(&s.exponent) {
            return err("sapg.exponent", format!("must lie in [0.6, 0.9], got {}", s.exponent));
        }
        if !(s.tolerance > 0.0) {
            return err("sapg.tolerance", format!("must be positive, got {}", s.tolerance));
        }
        if s.max_iters == 0 || s.samples_per_iter == 0 || s.thinning == 0 || s.thinning_prior == 0 {
            return err(
                "sapg.max_iters",
                "max_iters, samples_per_iter and thinning values must be >= 1".into(),
            );
        }
        if let Some(sig) = &self.sigma {
            if !(sig.snr_min_db < sig.snr_max_db) {
                return err(
                    "sigma.snr_min_db",
                    format!("need snr_min_db < snr_max_db, got {} / {}", sig.snr_min_db, sig.snr_max_db),
                );
            }
            if !(sig.c0_sigma > 0.0) || sig.stages == 0 {
                return err(
                    "sigma.c0_sigma",
                    "c0_sigma must be positive and stages >= 1".into(),
                );
            }
            if !(0.0..=1.0).contains(&sig.start_fraction) {
                return err(
                    "sigma.start_fraction",
                    format!("must lie in [0, 1], got {}", sig.start_fraction),
                );
            }
        }
        if !(self.map.tol > 0.0) || self.map.max_iters == 0 {
            return err("map.tol", "need tol > 0 and max_iters >= 1".into());
        }
        if self.run.repetitions == 0 {
            return err("run.repetitions", "at least one repetition".into());
        }
        Ok(())
    }

    /// Number of components the parameter vector carries for this config.
    pub fn expected_theta_dim(&self) -> usize {
        if self.prior.per_level_blocks {
            // One approximation band plus the detail bands of each level.
            self.operator.levels + 1
        } else {
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::load(name).unwrap_or_else(|e| {
                panic!("preset {name} failed: {e:?}");
            });
            assert!(cfg.run.repetitions >= 1, "{name}");
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::load("tv-deblur").unwrap();
        let mut b = ExperimentConfig::load("tv-deblur").unwrap();
        assert_eq!(a.hash(), b.hash());
        b.run.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn field_paths_appear_in_errors() {
        let mut cfg = ExperimentConfig::load("tv-deblur").unwrap();
        cfg.sapg.c0 = -1.0;
        let msg = match cfg.validate() {
            Err(CliError::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        };
        assert!(msg.contains("sapg.c0"), "{msg}");
    }

    #[test]
    fn algorithm_prior_pairing_is_enforced() {
        let mut cfg = ExperimentConfig::load("tv-deblur").unwrap();
        cfg.algorithm.kind = AlgorithmKind::Alg3;
        let msg = match cfg.validate() {
            Err(CliError::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        };
        assert!(msg.contains("prior.kind"), "{msg}");
    }
}
