//! Posterior model assembly: smooth data-fidelity terms, non-smooth
//! regularisers with scalable parameters, and the admissible parameter
//! region.
//!
//! The target density is `p(x | y, theta) ∝ exp(-f_y(x) - theta' g(x))`
//! with `f_y` convex and Lipschitz-smooth and `g` convex (possibly
//! non-smooth) with a tractable prox. The regulariser declares how `g`
//! scales under dilation, which is what makes the normalising-constant
//! gradient tractable for the estimation loops.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::prox::{self, ProxCache, ProxResult};
use crate::transforms::LinearOperator;

type EvalFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type PrecondFn = Box<dyn Fn(&mut [f64]) + Send + Sync>;
type StatFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type ProxFn = Box<dyn Fn(&[f64], &[f64], f64, &mut ProxCache) -> Result<ProxResult> + Send + Sync>;

/// Negative log-likelihood `f_y` with its gradient and smoothness bound.
pub struct LikelihoodSpec {
    dim: usize,
    eval: EvalFn,
    grad: GradFn,
    lipschitz: f64,
    preconditioner: Option<PrecondFn>,
}

impl LikelihoodSpec {
    pub fn new(dim: usize, lipschitz: f64, eval: EvalFn, grad: GradFn) -> Result<Self> {
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(Error::InvalidParam {
                name: "lipschitz",
                reason: format!("must be finite and >= 0, got {lipschitz}"),
            });
        }
        Ok(Self { dim, eval, grad, lipschitz, preconditioner: None })
    }

    /// Installs a map applied to every gradient before it is returned
    /// (e.g. an approximate inverse Hessian). The Lipschitz constant must
    /// already describe the preconditioned gradient.
    pub fn with_preconditioner(mut self, lipschitz: f64, prec: PrecondFn) -> Result<Self> {
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(Error::InvalidParam {
                name: "lipschitz",
                reason: format!("must be finite and >= 0, got {lipschitz}"),
            });
        }
        self.lipschitz = lipschitz;
        self.preconditioner = Some(prec);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = (self.grad)(x);
        if let Some(p) = &self.preconditioner {
            p(&mut g);
        }
        g
    }

    /// Gaussian noise through a linear forward model:
    /// `f(x) = ||y - A x||^2 / (2 sigma^2)`.
    ///
    /// The default Lipschitz constant is `||A||^2 / sigma^2` from the
    /// operator's norm bound; pass `lipschitz` to use a sharper or more
    /// conservative value.
    pub fn gaussian(
        op: Arc<dyn LinearOperator>,
        y: Vec<f64>,
        sigma2: f64,
        lipschitz: Option<f64>,
    ) -> Result<Self> {
        if y.len() != op.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "LikelihoodSpec::gaussian",
                expected: format!("{} observations", op.output_dim()),
                actual: format!("{}", y.len()),
            });
        }
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParam {
                name: "sigma2",
                reason: format!("noise variance must be positive, got {sigma2}"),
            });
        }
        let dim = op.input_dim();
        let nb = op.operator_norm_bound();
        let l = lipschitz.unwrap_or(nb * nb / sigma2);
        let (op_e, y_e) = (op.clone(), y.clone());
        let eval: EvalFn = Box::new(move |x| {
            let ax = op_e.apply(x);
            ax.iter().zip(&y_e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * sigma2)
        });
        let grad: GradFn = Box::new(move |x| {
            let mut r = op.apply(x);
            for (ri, yi) in r.iter_mut().zip(&y) {
                *ri = (*ri - *yi) / sigma2;
            }
            op.adjoint(&r)
        });
        Self::new(dim, l, eval, grad)
    }

    /// Laplace noise through a norm-preserving linear model, handled by
    /// smoothing: both `eval` and `grad` refer to the Moreau envelope (at
    /// parameter `smoothing`) of `||y - A x||_1 / b`, `b = sigma/sqrt(2)`,
    /// so the pair stays consistent and `grad` is `1/smoothing`-Lipschitz.
    ///
    /// `op` must have orthonormal columns (`||A u|| = ||u||`); this is
    /// checked on a random probe.
    pub fn laplace_smoothed(
        op: Arc<dyn LinearOperator>,
        y: Vec<f64>,
        sigma2: f64,
        smoothing: f64,
    ) -> Result<Self> {
        if y.len() != op.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "LikelihoodSpec::laplace_smoothed",
                expected: format!("{} observations", op.output_dim()),
                actual: format!("{}", y.len()),
            });
        }
        if !(sigma2 > 0.0) || !(smoothing > 0.0) {
            return Err(Error::InvalidParam {
                name: "sigma2/smoothing",
                reason: "variance and smoothing must be positive".into(),
            });
        }
        // The u-space reduction below needs an isometry.
        let mut rng = ChaCha12Rng::seed_from_u64(0x150_3E7);
        let probe: Vec<f64> = (0..op.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pn: f64 = probe.iter().map(|v| v * v).sum::<f64>().sqrt();
        let an: f64 = op.apply(&probe).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (pn - an).abs() > 1e-8 * pn.max(1.0) {
            return Err(Error::Validation(
                "laplace_smoothed requires an operator with orthonormal columns".into(),
            ));
        }

        let dim = op.input_dim();
        let b = (sigma2 / 2.0).sqrt();
        let lam = smoothing;
        let (op_e, y_e) = (op.clone(), y.clone());
        // Envelope value: minimise over u = A z; the minimiser is the
        // residual soft threshold around y.
        let eval: EvalFn = Box::new(move |x| {
            let ax = op_e.apply(x);
            let u = prox::prox_l1_residual(&ax, &y_e, lam / b).expect("validated lengths");
            let l1: f64 = u.iter().zip(&y_e).map(|(a, b)| (a - b).abs()).sum();
            let quad: f64 = u.iter().zip(&ax).map(|(a, b)| (a - b) * (a - b)).sum();
            l1 / b + quad / (2.0 * lam)
        });
        let grad: GradFn = Box::new(move |x| {
            let ax = op.apply(x);
            let u = prox::prox_l1_residual(&ax, &y, lam / b).expect("validated lengths");
            let r: Vec<f64> = ax.iter().zip(&u).map(|(a, b)| (a - b) / lam).collect();
            op.adjoint(&r)
        });
        Self::new(dim, 1.0 / lam, eval, grad)
    }

    /// Flat likelihood (no data term); used for prior-only chains.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            eval: Box::new(|_| 0.0),
            grad: Box::new(move |x| vec![0.0; x.len()]),
            lipschitz: 0.0,
            preconditioner: None,
        }
    }
}

/// How a regulariser component scales under dilation of its argument.
#[derive(Debug, Clone)]
pub enum Homogeneity {
    /// `g(t x) = t^alpha g(x)` for the single statistic.
    Homogeneous { alpha: f64 },
    /// Each statistic acts on its own contiguous index range and is
    /// `alpha_i`-homogeneous there. Blocks must cover the whole vector.
    SeparablyHomogeneous { blocks: Vec<Block> },
    /// No scaling structure declared; estimation must fall back to the
    /// two-chain (prior + posterior) scheme.
    General,
}

#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub len: usize,
    pub alpha: f64,
}

/// Non-smooth prior term `theta' g(x)` with its sufficient statistic and
/// scaled prox. `effective_dim` is the dimension that enters the
/// normalising-constant gradient (it differs from `dim` when `g` has a
/// null direction, e.g. total variation ignores the image mean).
pub struct RegulariserSpec {
    dim: usize,
    theta_dim: usize,
    effective_dim: usize,
    homogeneity: Homogeneity,
    stat: StatFn,
    prox: ProxFn,
}

impl RegulariserSpec {
    pub fn new(
        dim: usize,
        theta_dim: usize,
        effective_dim: usize,
        homogeneity: Homogeneity,
        stat: StatFn,
        prox: ProxFn,
    ) -> Result<Self> {
        if theta_dim == 0 || dim == 0 {
            return Err(Error::InvalidParam { name: "dim", reason: "dimensions must be positive".into() });
        }
        if effective_dim == 0 || effective_dim > dim {
            return Err(Error::InvalidParam {
                name: "effective_dim",
                reason: format!("must lie in [1, {dim}], got {effective_dim}"),
            });
        }
        if let Homogeneity::SeparablyHomogeneous { blocks } = &homogeneity {
            if blocks.len() != theta_dim {
                return Err(Error::InvalidParam {
                    name: "homogeneity",
                    reason: format!("{} blocks for {theta_dim} parameters", blocks.len()),
                });
            }
            let covered: usize = blocks.iter().map(|b| b.len).sum();
            if covered != dim {
                return Err(Error::InvalidParam {
                    name: "homogeneity",
                    reason: format!("blocks cover {covered} of {dim} entries"),
                });
            }
        }
        Ok(Self { dim, theta_dim, effective_dim, homogeneity, stat, prox })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn effective_dim(&self) -> usize {
        self.effective_dim
    }

    pub fn homogeneity(&self) -> &Homogeneity {
        &self.homogeneity
    }

    /// Sufficient statistic `g(x)`, one entry per parameter component.
    pub fn stat(&self, x: &[f64]) -> Vec<f64> {
        (self.stat)(x)
    }

    /// `prox_{lambda theta' g}(x)`.
    pub fn prox(&self, x: &[f64], theta: &[f64], lambda: f64, cache: &mut ProxCache) -> Result<ProxResult> {
        if theta.len() != self.theta_dim {
            return Err(Error::ShapeMismatch {
                context: "RegulariserSpec::prox",
                expected: format!("{} parameters", self.theta_dim),
                actual: format!("{}", theta.len()),
            });
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidParam {
                name: "lambda",
                reason: format!("prox scale must be positive, got {lambda}"),
            });
        }
        (self.prox)(x, theta, lambda, cache)
    }

    /// `g(x) = ||x||_1`, 1-homogeneous.
    pub fn l1(dim: usize) -> Self {
        Self {
            dim,
            theta_dim: 1,
            effective_dim: dim,
            homogeneity: Homogeneity::Homogeneous { alpha: 1.0 },
            stat: Box::new(|x| vec![x.iter().map(|v| v.abs()).sum()]),
            prox: Box::new(|x, theta, lambda, _| {
                Ok(ProxResult::exact(prox::soft_threshold(x, lambda * theta[0])?))
            }),
        }
    }

    /// Per-block l1 norms with one parameter per block (blocks are
    /// consecutive index ranges), each 1-homogeneous.
    pub fn l1_blocks(block_lens: Vec<usize>) -> Result<Self> {
        let dim: usize = block_lens.iter().sum();
        let theta_dim = block_lens.len();
        let blocks = block_lens.iter().map(|&len| Block { len, alpha: 1.0 }).collect();
        let lens_stat = block_lens.clone();
        let lens_prox = block_lens;
        Self::new(
            dim,
            theta_dim,
            dim,
            Homogeneity::SeparablyHomogeneous { blocks },
            Box::new(move |x| {
                let mut out = Vec::with_capacity(lens_stat.len());
                let mut off = 0;
                for &len in &lens_stat {
                    out.push(x[off..off + len].iter().map(|v| v.abs()).sum());
                    off += len;
                }
                out
            }),
            Box::new(move |x, theta, lambda, _| {
                let thresholds: Vec<f64> = theta.iter().map(|t| lambda * t).collect();
                Ok(ProxResult::exact(prox::prox_weighted_l1_blocks(x, &thresholds, &lens_prox)?))
            }),
        )
    }

    /// Isotropic total variation on a `height x width` image,
    /// 1-homogeneous. The constant direction is invisible to `g`, hence
    /// `effective_dim = dim - 1`. The prox runs `inner_iters` primal-dual
    /// steps warm-started from the caller's cache.
    pub fn tv_iso(height: usize, width: usize, inner_iters: usize) -> Self {
        let dim = height * width;
        Self {
            dim,
            theta_dim: 1,
            effective_dim: dim - 1,
            homogeneity: Homogeneity::Homogeneous { alpha: 1.0 },
            stat: Box::new(move |x| vec![prox::tv_iso(x, height, width)]),
            prox: Box::new(move |x, theta, lambda, cache| {
                prox::prox_tv_iso(x, height, width, lambda * theta[0], inner_iters, Some(&mut cache.tv_dual))
            }),
        }
    }

    /// `g(x) = ||x||^2`, 2-homogeneous (Gaussian prior with precision
    /// `2 theta`). Prox is the closed-form shrinkage `x / (1 + 2 lambda theta)`.
    pub fn squared_l2(dim: usize) -> Self {
        Self {
            dim,
            theta_dim: 1,
            effective_dim: dim,
            homogeneity: Homogeneity::Homogeneous { alpha: 2.0 },
            stat: Box::new(|x| vec![x.iter().map(|v| v * v).sum()]),
            prox: Box::new(|x, theta, lambda, _| {
                let s = 1.0 / (1.0 + 2.0 * lambda * theta[0]);
                Ok(ProxResult::exact(x.iter().map(|v| v * s).collect()))
            }),
        }
    }

    /// `g(x) = ||x||_1 + eps ||x||^2` — an l1 penalty with a vanishing
    /// ridge that keeps the prior proper without materially changing it.
    /// Not homogeneous, so only the two-chain scheme applies.
    pub fn l1_plus_ridge(dim: usize, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidParam { name: "eps", reason: format!("must be >= 0, got {eps}") });
        }
        Self::new(
            dim,
            1,
            dim,
            Homogeneity::General,
            Box::new(move |x| vec![x.iter().map(|v| v.abs() + eps * v * v).sum()]),
            Box::new(move |x, theta, lambda, _| {
                // argmin t|z| + t eps z^2 + (z-x)^2/(2 lambda), t = theta:
                // soft threshold then shrink.
                let t = lambda * theta[0];
                let s = 1.0 / (1.0 + 2.0 * lambda * theta[0] * eps);
                Ok(ProxResult::exact(
                    x.iter().map(|&v| prox::soft_threshold_scalar(v, t) * s).collect(),
                ))
            }),
        )
    }
}

/// Box-shaped admissible region for the parameter vector, bounded away
/// from zero and infinity.
#[derive(Debug, Clone)]
pub struct ThetaDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ThetaDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParam {
                name: "theta_domain",
                reason: "bounds must be non-empty and of equal length".into(),
            });
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(*l > 0.0) || !(*u > *l) || !u.is_finite() {
                return Err(Error::InvalidParam {
                    name: "theta_domain",
                    reason: format!("need 0 < lower < upper < inf, got [{l}, {u}]"),
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.lower.len()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *t >= *l && *t <= *u)
    }

    /// Clamps in place; returns true if any component was moved.
    pub fn project(&self, theta: &mut [f64]) -> bool {
        let mut moved = false;
        for (t, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            let c = t.clamp(*l, *u);
            if c != *t {
                moved = true;
                *t = c;
            }
        }
        moved
    }
}

/// The assembled target. Construction validates dimensional agreement and
/// empirically spot-checks the declared gradient and homogeneity on random
/// probes (cheap relative to any sampling run; deterministic).
pub struct PosteriorModel {
    pub likelihood: LikelihoodSpec,
    pub regulariser: RegulariserSpec,
    pub theta_domain: ThetaDomain,
}

impl PosteriorModel {
    pub fn new(
        likelihood: LikelihoodSpec,
        regulariser: RegulariserSpec,
        theta_domain: ThetaDomain,
    ) -> Result<Self> {
        if likelihood.dim() != regulariser.dim() {
            return Err(Error::ShapeMismatch {
                context: "PosteriorModel::new",
                expected: format!("likelihood dim {}", likelihood.dim()),
                actual: format!("regulariser dim {}", regulariser.dim()),
            });
        }
        if theta_domain.dim() != regulariser.theta_dim() {
            return Err(Error::ShapeMismatch {
                context: "PosteriorModel::new",
                expected: format!("{} parameter bounds", regulariser.theta_dim()),
                actual: format!("{}", theta_domain.dim()),
            });
        }
        let model = Self { likelihood, regulariser, theta_domain };
        model.spot_check()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.likelihood.dim()
    }

    /// Registration-time sanity checks: gradient vs. directional finite
    /// differences, and declared homogeneity of the statistic.
    fn spot_check(&self) -> Result<()> {
        let d = self.dim();
        let mut rng = ChaCha12Rng::seed_from_u64(0x5EED);

        for trial in 0..3 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u_raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let un = crate::image::norm(&u_raw).max(1e-12);
            let u: Vec<f64> = u_raw.iter().map(|v| v / un).collect();
            let g = self.likelihood.grad(&x);
            let directional = crate::image::dot(&g, &u);
            let h = 1e-4;
            let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - h * b).collect();
            let fd = (self.likelihood.eval(&xp) - self.likelihood.eval(&xm)) / (2.0 * h);
            let scale = directional.abs().max(fd.abs()).max(1.0);
            if (directional - fd).abs() / scale > 1e-3 {
                return Err(Error::Validation(format!(
                    "gradient disagrees with finite differences (trial {trial}: {directional} vs {fd})"
                )));
            }
        }

        match self.regulariser.homogeneity() {
            Homogeneity::Homogeneous { alpha } => {
                for _ in 0..5 {
                    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let t: f64 = rng.gen_range(0.2..3.0);
                    let tx: Vec<f64> = x.iter().map(|v| t * v).collect();
                    let gx = self.regulariser.stat(&x);
                    let gtx = self.regulariser.stat(&tx);
                    for (a, b) in gtx.iter().zip(&gx) {
                        let want = t.powf(*alpha) * b;
                        if (a - want).abs() > 1e-8 * want.abs().max(1e-8) {
                            return Err(Error::Validation(format!(
                                "statistic is not {alpha}-homogeneous ({a} vs {want})"
                            )));
                        }
                    }
                }
            }
            Homogeneity::SeparablyHomogeneous { blocks } => {
                let blocks = blocks.clone();
                let mut off = 0;
                for (i, b) in blocks.iter().enumerate() {
                    let mut x = vec![0.0; d];
                    for v in &mut x[off..off + b.len] {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                    let t: f64 = rng.gen_range(0.2..3.0);
                    let tx: Vec<f64> = x.iter().map(|v| t * v).collect();
                    let gi = self.regulariser.stat(&x)[i];
                    let gti = self.regulariser.stat(&tx)[i];
                    let want = t.powf(b.alpha) * gi;
                    if (gti - want).abs() > 1e-8 * want.abs().max(1e-8) {
                        return Err(Error::Validation(format!(
                            "block {i} statistic is not {}-homogeneous",
                            b.alpha
                        )));
                    }
                    off += b.len;
                }
            }
            Homogeneity::General => {}
        }
        Ok(())
    }
}

/// `log p(x | y, theta)` up to the theta-dependent normalising constant:
/// `-f_y(x) - theta' g(x)`.
pub fn eval_log_posterior_unnorm(model: &PosteriorModel, x: &[f64], theta: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::ShapeMismatch {
            context: "eval_log_posterior_unnorm",
            expected: format!("{}", model.dim()),
            actual: format!("{}", x.len()),
        });
    }
    if theta.len() != model.regulariser.theta_dim() {
        return Err(Error::ShapeMismatch {
            context: "eval_log_posterior_unnorm",
            expected: format!("{} parameters", model.regulariser.theta_dim()),
            actual: format!("{}", theta.len()),
        });
    }
    let g = model.regulariser.stat(x);
    let v = -model.likelihood.eval(x) - crate::image::dot(theta, &g);
    if v.is_nan() {
        return Err(Error::NonFinite("eval_log_posterior_unnorm"));
    }
    Ok(v)
}

/// Gradient of the Moreau envelope of `theta' g` at `x`:
/// `(x - prox_{lambda theta' g}(x)) / lambda`. It is `1/lambda`-Lipschitz
/// and approximates the (sub)gradient of `theta' g` as `lambda -> 0`.
pub fn moreau_grad(
    regulariser: &RegulariserSpec,
    x: &[f64],
    theta: &[f64],
    lambda: f64,
    cache: &mut ProxCache,
) -> Result<Vec<f64>> {
    let p = regulariser.prox(x, theta, lambda, cache)?;
    Ok(x.iter().zip(&p.point).map(|(a, b)| (a - b) / lambda).collect())
}
