//! Independent reference computations used to validate the estimators:
//! tensor-grid quadrature for normalising constants, expectations and
//! marginal likelihoods in up to three dimensions, a derivative-free
//! proximal solver, and closed forms for the Gaussian special cases.
//!
//! Nothing here shares code with the production paths on purpose; these
//! routines are slow, simple and meant to disagree loudly when the fast
//! implementations drift.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::image::dist_sq;
use crate::model::ThetaDomain;

/// Controls for the adaptive tensor-grid quadrature. The domain
/// `[-radius, radius]^d` doubles until the outermost shell of cells
/// carries less than `shell_tol` of the total mass, then the spacing
/// halves until the log-integral moves by less than `log_tol`.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub initial_radius: f64,
    pub max_radius: f64,
    pub initial_points_per_dim: usize,
    pub shell_tol: f64,
    pub log_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            initial_radius: 8.0,
            max_radius: 1024.0,
            initial_points_per_dim: 64,
            shell_tol: 1e-8,
            log_tol: 1e-4,
        }
    }
}

impl GridSpec {
    /// Tighter tolerance for one-dimensional problems where grid points
    /// are cheap; useful when the result feeds a finite difference.
    pub fn fine_1d() -> Self {
        Self { initial_points_per_dim: 1024, log_tol: 1e-8, ..Self::default() }
    }

    fn max_points(dim: usize) -> usize {
        match dim {
            1 => 1 << 16,
            2 => 2048,
            _ => 256,
        }
    }
}

/// Streaming log-sum-exp with a running maximum, so very peaked
/// integrands never overflow.
struct LseAcc {
    max: f64,
    sum: f64,
}

impl LseAcc {
    fn new() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    fn add(&mut self, l: f64) {
        if l == f64::NEG_INFINITY {
            return;
        }
        if l <= self.max {
            self.sum += (l - self.max).exp();
        } else {
            if self.max > f64::NEG_INFINITY {
                self.sum = self.sum * (self.max - l).exp() + 1.0;
            } else {
                self.sum = 1.0;
            }
            self.max = l;
        }
    }

    fn log_total(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

struct GridPass {
    log_z: f64,
    shell_log_z: f64,
    expectations: Option<Vec<f64>>,
}

/// Composite Simpson rule over `[-radius, radius]^dim` with `n`
/// subintervals per axis (rounded up to even). `log_pi` is the
/// unnormalised log-density; `stat` optionally produces the statistics
/// whose expectation is accumulated alongside. The fourth-order rule is
/// what lets the refinement loop certify tight tolerances without
/// astronomical grids; powers of two keep the origin on a panel
/// boundary, so densities with a kink at zero still converge fast.
fn grid_pass(
    log_pi: &dyn Fn(&[f64]) -> f64,
    stat: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    dim: usize,
    radius: f64,
    n: usize,
) -> Result<GridPass> {
    let n = if n < 2 {
        2
    } else if n % 2 == 1 {
        n + 1
    } else {
        n
    };
    let h = 2.0 * radius / n as f64;
    // Per-axis Simpson log-weights: 1 at the ends, alternating 4/2 inside.
    let axis_log_w: Vec<f64> = (0..=n)
        .map(|k| {
            if k == 0 || k == n {
                0.0
            } else if k % 2 == 1 {
                4.0f64.ln()
            } else {
                2.0f64.ln()
            }
        })
        .collect();

    let mut total = LseAcc::new();
    let mut shell = LseAcc::new();

    // Expectations are tracked as sums of stat * exp(lw - max), rescaled
    // whenever a new maximum appears.
    let mut exp_max = f64::NEG_INFINITY;
    let mut exp_num: Option<Vec<f64>> = None;
    let mut exp_den = 0.0;

    let mut idx = vec![0usize; dim];
    let mut point = vec![0.0f64; dim];
    loop {
        let mut on_shell = false;
        let mut log_w = 0.0;
        for d in 0..dim {
            point[d] = -radius + idx[d] as f64 * h;
            log_w += axis_log_w[idx[d]];
            if idx[d] == 0 || idx[d] == n {
                on_shell = true;
            }
        }
        let l = log_pi(&point);
        if l.is_nan() || l == f64::INFINITY {
            return Err(Error::Quadrature(format!(
                "log-density is {l} at {point:?}"
            )));
        }
        let lw = l + log_w;
        total.add(lw);
        if on_shell {
            shell.add(lw);
        }
        if let Some(stat_fn) = stat {
            let s = stat_fn(&point);
            let num = exp_num.get_or_insert_with(|| vec![0.0; s.len()]);
            if s.len() != num.len() {
                return Err(Error::Quadrature("statistic dimension changed mid-grid".into()));
            }
            if lw > exp_max {
                let scale = if exp_max > f64::NEG_INFINITY { (exp_max - lw).exp() } else { 0.0 };
                for v in num.iter_mut() {
                    *v *= scale;
                }
                exp_den *= scale;
                exp_max = lw;
            }
            if lw > f64::NEG_INFINITY {
                let w = (lw - exp_max).exp();
                for (v, si) in num.iter_mut().zip(&s) {
                    *v += w * si;
                }
                exp_den += w;
            }
        }

        // Odometer over the multi-index.
        let mut d = 0;
        loop {
            if d == dim {
                let expectations = exp_num.map(|num| {
                    num.into_iter().map(|v| v / exp_den).collect()
                });
                let log_cell = (dim as f64) * (h / 3.0).ln();
                return Ok(GridPass {
                    log_z: total.log_total() + log_cell,
                    shell_log_z: shell.log_total() + log_cell,
                    expectations,
                });
            }
            idx[d] += 1;
            if idx[d] <= n {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn integrate(
    log_pi: &dyn Fn(&[f64]) -> f64,
    stat: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    dim: usize,
    spec: &GridSpec,
) -> Result<(f64, Option<Vec<f64>>)> {
    if dim == 0 || dim > 3 {
        return Err(Error::Quadrature(format!(
            "tensor grids are practical for 1..=3 dimensions, got {dim}"
        )));
    }
    // Grow the box until the boundary shell is negligible.
    let mut radius = spec.initial_radius;
    loop {
        let pass = grid_pass(log_pi, None, dim, radius, spec.initial_points_per_dim)?;
        if pass.log_z == f64::NEG_INFINITY {
            return Err(Error::Quadrature("integrand is zero on the whole grid".into()));
        }
        if pass.shell_log_z < pass.log_z + spec.shell_tol.ln() {
            break;
        }
        radius *= 2.0;
        if radius > spec.max_radius {
            return Err(Error::Quadrature(format!(
                "tail mass still above {} at radius {}",
                spec.shell_tol, spec.max_radius
            )));
        }
    }
    // Refine the spacing until the answer stops moving.
    let mut n = spec.initial_points_per_dim;
    let mut prev = grid_pass(log_pi, stat, dim, radius, n)?;
    loop {
        n *= 2;
        if n > GridSpec::max_points(dim) {
            return Err(Error::Quadrature(format!(
                "no convergence to log_tol={} within {} points per axis",
                spec.log_tol,
                GridSpec::max_points(dim)
            )));
        }
        let cur = grid_pass(log_pi, stat, dim, radius, n)?;
        let dz = (cur.log_z - prev.log_z).abs();
        let de = match (&cur.expectations, &prev.expectations) {
            (Some(a), Some(b)) => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
                .fold(0.0, f64::max),
            _ => 0.0,
        };
        if dz < spec.log_tol && de < spec.log_tol.max(1e-6) {
            return Ok((cur.log_z, cur.expectations));
        }
        prev = cur;
    }
}

/// `log integral exp(log_pi(x)) dx` over all of R^dim.
pub fn quadrature_log_z(
    log_pi: &dyn Fn(&[f64]) -> f64,
    dim: usize,
    spec: &GridSpec,
) -> Result<f64> {
    integrate(log_pi, None, dim, spec).map(|(z, _)| z)
}

/// `E[stat(X)]` where `X` has unnormalised log-density `log_pi`.
pub fn quadrature_expectation(
    log_pi: &dyn Fn(&[f64]) -> f64,
    stat: &dyn Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    spec: &GridSpec,
) -> Result<Vec<f64>> {
    let (_, e) = integrate(log_pi, Some(stat), dim, spec)?;
    e.ok_or_else(|| Error::Quadrature("no statistic accumulated".into()))
}

/// Log of the evidence `p(y | theta)` up to the theta-independent
/// likelihood normalisation:
/// `log int exp(-f(x) - theta' g(x)) dx - log int exp(-theta' g(x)) dx`.
pub fn quadrature_log_marginal(
    data_term: &dyn Fn(&[f64]) -> f64,
    stat: &dyn Fn(&[f64]) -> Vec<f64>,
    theta: &[f64],
    dim: usize,
    spec: &GridSpec,
) -> Result<f64> {
    let post = |x: &[f64]| -data_term(x) - crate::image::dot(theta, &stat(x));
    let prior = |x: &[f64]| -crate::image::dot(theta, &stat(x));
    Ok(quadrature_log_z(&post, dim, spec)? - quadrature_log_z(&prior, dim, spec)?)
}

/// Gradient of the log-evidence in `theta`: component `j` equals the
/// prior expectation of `g_j` minus its posterior expectation.
pub fn quadrature_grad_marginal(
    data_term: &dyn Fn(&[f64]) -> f64,
    stat: &dyn Fn(&[f64]) -> Vec<f64>,
    theta: &[f64],
    dim: usize,
    spec: &GridSpec,
) -> Result<Vec<f64>> {
    let post = |x: &[f64]| -data_term(x) - crate::image::dot(theta, &stat(x));
    let prior = |x: &[f64]| -crate::image::dot(theta, &stat(x));
    let e_post = quadrature_expectation(&post, stat, dim, spec)?;
    let e_prior = quadrature_expectation(&prior, stat, dim, spec)?;
    Ok(e_prior.iter().zip(&e_post).map(|(p, q)| p - q).collect())
}

/// Closed-form evidence maximiser for the conjugate Gaussian chain:
/// `y = x + noise`, `noise ~ N(0, sigma2 I)`, prior density proportional
/// to `exp(-theta ||x||^2)`. The marginal of each component is
/// `N(0, sigma2 + 1/(2 theta))`, so the maximiser matches the empirical
/// variance and clamps to the search domain.
pub fn gaussian_marginal_mle(y: &[f64], sigma2: f64, domain: &ThetaDomain) -> Result<f64> {
    if domain.dim() != 1 {
        return Err(Error::Validation("closed form applies to a scalar theta".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParam {
            name: "sigma2",
            reason: format!("must be positive, got {sigma2}"),
        });
    }
    let d = y.len();
    if d == 0 {
        return Err(Error::Validation("empty observation".into()));
    }
    let v = y.iter().map(|a| a * a).sum::<f64>() / d as f64;
    if v == 0.0 {
        return Err(Error::Validation(
            "all-zero observation: the evidence has no interior maximiser".into(),
        ));
    }
    let theta = if v <= sigma2 {
        // Marginal variance cannot drop below sigma2; the evidence
        // increases all the way to the boundary.
        domain.upper()[0]
    } else {
        1.0 / (2.0 * (v - sigma2))
    };
    Ok(theta.clamp(domain.lower()[0], domain.upper()[0]))
}

/// Stationary variance of the unadjusted Langevin chain targeting
/// `N(0, s2)` with step `gamma`: `s2 / (1 - gamma / (2 s2))`.
pub fn ula_gaussian_stationary_variance(gamma: f64, s2: f64) -> Result<f64> {
    if !(s2 > 0.0) {
        return Err(Error::InvalidParam {
            name: "s2",
            reason: format!("target variance must be positive, got {s2}"),
        });
    }
    if !(gamma > 0.0 && gamma < 2.0 * s2) {
        return Err(Error::InvalidParam {
            name: "gamma",
            reason: format!("chain is unstable unless 0 < gamma < {}, got {gamma}", 2.0 * s2),
        });
    }
    Ok(s2 / (1.0 - gamma / (2.0 * s2)))
}

const MAX_CYCLES: u64 = 500;

/// Derivative-free proximal map: minimises
/// `scale * g(u) + ||u - x||^2 / 2` by multi-start cyclic line search
/// with golden-section steps. Practical up to four dimensions; intended
/// as ground truth for the fast proximal operators.
pub fn brute_prox(
    g: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    scale: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let dim = x.len();
    if dim == 0 || dim > 4 {
        return Err(Error::Validation(format!(
            "exhaustive prox search is practical for 1..=4 dimensions, got {dim}"
        )));
    }
    if !(scale >= 0.0) || !(tol > 0.0) {
        return Err(Error::Validation("scale must be >= 0 and tol > 0".into()));
    }
    let objective = |u: &[f64]| scale * g(u) + 0.5 * dist_sq(u, x);

    let mut rng = ChaCha12Rng::seed_from_u64(0xBEEF);
    let mut starts: Vec<Vec<f64>> = vec![
        x.to_vec(),
        vec![0.0; dim],
        x.iter().map(|v| v / 2.0).collect(),
    ];
    for _ in 0..2 {
        starts.push(x.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect());
    }

    // Any minimiser satisfies ||u* - x||^2 <= 2 scale g(x), which bounds
    // the line-search bracket.
    let reach = (2.0 * scale * g(x).max(0.0)).sqrt();
    let bracket = 4.0 + 2.0 * reach + 2.0 * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut best: Option<(f64, Vec<f64>, f64, u64)> = None;
    for start in starts {
        let (u, f, residual, cycles) =
            refine(&objective, start, dim, bracket, tol, &mut rng);
        if best.as_ref().map_or(true, |(bf, ..)| f < *bf) {
            best = Some((f, u, residual, cycles));
        }
    }
    let (_, u, residual, cycles) = best.unwrap();
    if residual > tol {
        return Err(Error::NoConvergence { residual, iterations: cycles as usize });
    }
    Ok(u)
}

fn refine(
    objective: &dyn Fn(&[f64]) -> f64,
    mut u: Vec<f64>,
    dim: usize,
    bracket: f64,
    tol: f64,
    rng: &mut ChaCha12Rng,
) -> (Vec<f64>, f64, f64, u64) {
    let mut f = objective(&u);
    let mut residual = f64::INFINITY;
    let mut cycles = 0;
    while cycles < MAX_CYCLES {
        cycles += 1;
        let mut dirs: Vec<Vec<f64>> = (0..dim)
            .map(|k| {
                let mut e = vec![0.0; dim];
                e[k] = 1.0;
                e
            })
            .collect();
        dirs.push(vec![1.0 / (dim as f64).sqrt(); dim]);
        for _ in 0..2 * dim {
            let mut d: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 {
                d.iter_mut().for_each(|v| *v /= n);
                dirs.push(d);
            }
        }
        let mut moved = 0.0f64;
        for dir in &dirs {
            let phi = |t: f64| {
                let cand: Vec<f64> =
                    u.iter().zip(dir).map(|(ui, di)| ui + t * di).collect();
                objective(&cand)
            };
            let t = golden_section(&phi, -bracket, bracket, tol * 1e-4);
            if t != 0.0 {
                let cand: Vec<f64> =
                    u.iter().zip(dir).map(|(ui, di)| ui + t * di).collect();
                let fc = objective(&cand);
                if fc < f {
                    moved = moved.max(t.abs());
                    u = cand;
                    f = fc;
                }
            }
        }
        residual = moved;
        if moved < tol {
            break;
        }
    }
    (u, f, residual, cycles)
}

/// Golden-section minimisation of a unimodal function on `[lo, hi]`.
fn golden_section(phi: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = phi(a);
    let mut fb = phi(b);
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = phi(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = phi(b);
        }
    }
    0.5 * (lo + hi)
}
