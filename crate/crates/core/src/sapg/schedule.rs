//! Step-size schedules, averaging weights and stopping rules for the
//! stochastic parameter search.

use crate::error::{Error, Result};

/// Polynomially decaying step size `delta(n) = c0 * scale * n^(-exponent)`
/// for `n >= 1`. The exponent must lie in `[0.6, 0.9]`, the usual range
/// that balances noise averaging against adaptation speed; `scale` is a
/// separate factor so per-dimension normalisation stays visible in
/// configs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub c0: f64,
    pub exponent: f64,
    pub scale: f64,
}

impl StepSchedule {
    pub fn new(c0: f64, exponent: f64, scale: f64) -> Result<Self> {
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::InvalidParam {
                name: "c0",
                reason: format!("must be positive and finite, got {c0}"),
            });
        }
        if !(0.6..=0.9).contains(&exponent) {
            return Err(Error::InvalidParam {
                name: "exponent",
                reason: format!("must lie in [0.6, 0.9], got {exponent}"),
            });
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParam {
                name: "scale",
                reason: format!("must be positive and finite, got {scale}"),
            });
        }
        Ok(Self { c0, exponent, scale })
    }

    /// Default initial magnitude `1 / (max theta0 * dim)` with the usual
    /// exponent 0.8. A starting point: problems with a distant optimum
    /// usually need a larger `c0`.
    pub fn guideline(theta0: &[f64], dim: usize) -> Result<Self> {
        let t0 = theta0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(t0 > 0.0) || dim == 0 {
            return Err(Error::InvalidParam {
                name: "theta0",
                reason: "need a positive starting value and a nonzero dimension".into(),
            });
        }
        Self::new(1.0 / t0, 0.8, 1.0 / dim as f64)
    }

    pub fn delta(&self, n: u64) -> f64 {
        debug_assert!(n >= 1, "the schedule starts at n = 1");
        self.c0 * self.scale * (n as f64).powf(-self.exponent)
    }
}

/// How the averaging weights behave after the flat phase ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailWeights {
    /// Keep weighting every iterate equally.
    Uniform,
    /// Weight iterate `n` by `delta(n)`, fading the tail out.
    Decreasing,
}

/// Three-phase averaging weights: iterations before `n0` are discarded
/// (weight 0), iterations in `[n0, n1]` get weight 1, and later ones
/// follow the tail rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScheme {
    pub n0: u64,
    pub n1: u64,
    pub tail: TailWeights,
}

impl WeightScheme {
    pub fn new(n0: u64, n1: u64, tail: TailWeights) -> Result<Self> {
        if n1 < n0 {
            return Err(Error::InvalidParam {
                name: "n1",
                reason: format!("flat phase end {n1} precedes its start {n0}"),
            });
        }
        Ok(Self { n0, n1, tail })
    }

    /// Weight-1 phase from `n0` onwards, never fading.
    pub fn burn_in(n0: u64) -> Self {
        Self { n0, n1: u64::MAX, tail: TailWeights::Uniform }
    }

    pub fn weight(&self, n: u64, delta_n: f64) -> f64 {
        if n < self.n0 {
            0.0
        } else if n <= self.n1 {
            1.0
        } else {
            match self.tail {
                TailWeights::Uniform => 1.0,
                TailWeights::Decreasing => delta_n,
            }
        }
    }
}

/// Terminates the search once the running average moves by less than
/// `tolerance` in relative sup-norm between consecutive iterations, or
/// after `max_iters` updates regardless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub tolerance: f64,
    pub max_iters: u64,
}

impl StopRule {
    pub fn new(tolerance: f64, max_iters: u64) -> Result<Self> {
        if !(tolerance > 0.0) || max_iters == 0 {
            return Err(Error::InvalidParam {
                name: "stop",
                reason: format!("need tolerance > 0 and max_iters >= 1, got {tolerance}, {max_iters}"),
            });
        }
        Ok(Self { tolerance, max_iters })
    }

    pub fn met(&self, previous_bar: &[f64], current_bar: &[f64]) -> bool {
        previous_bar
            .iter()
            .zip(current_bar)
            .all(|(p, c)| (c - p).abs() <= self.tolerance * p.abs().max(f64::MIN_POSITIVE))
    }
}

/// Streaming weighted mean of a vector sequence. `mean` falls back to
/// the supplied value while the accumulated weight is still zero.
#[derive(Debug, Clone)]
pub struct WeightedMean {
    sum_w: f64,
    sum_wx: Vec<f64>,
}

impl WeightedMean {
    pub fn new(dim: usize) -> Self {
        Self { sum_w: 0.0, sum_wx: vec![0.0; dim] }
    }

    pub fn push(&mut self, w: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.sum_wx.len());
        if w == 0.0 {
            return;
        }
        self.sum_w += w;
        for (acc, xi) in self.sum_wx.iter_mut().zip(x) {
            *acc += w * xi;
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.sum_w
    }

    pub fn mean(&self, fallback: &[f64]) -> Vec<f64> {
        if self.sum_w > 0.0 {
            self.sum_wx.iter().map(|v| v / self.sum_w).collect()
        } else {
            fallback.to_vec()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn schedule_values_and_validation() {
        let s = StepSchedule::new(0.1, 0.8, 0.5).unwrap();
        assert_relative_eq!(s.delta(1), 0.05, epsilon = 1e-15);
        assert_relative_eq!(s.delta(16), 0.05 * 16f64.powf(-0.8), epsilon = 1e-15);
        assert!(StepSchedule::new(0.0, 0.8, 1.0).is_err());
        assert!(StepSchedule::new(1.0, 0.5, 1.0).is_err());
        assert!(StepSchedule::new(1.0, 0.95, 1.0).is_err());
        let g = StepSchedule::guideline(&[2.0, 4.0], 100).unwrap();
        assert_relative_eq!(g.delta(1), 1.0 / (4.0 * 100.0), epsilon = 1e-15);
    }

    #[test]
    fn weights_cover_three_phases() {
        let w = WeightScheme::new(2, 5, TailWeights::Decreasing).unwrap();
        assert_eq!(w.weight(0, 0.3), 0.0);
        assert_eq!(w.weight(1, 0.3), 0.0);
        assert_eq!(w.weight(2, 0.3), 1.0);
        assert_eq!(w.weight(5, 0.3), 1.0);
        assert_eq!(w.weight(6, 0.3), 0.3);
        let u = WeightScheme::new(2, 5, TailWeights::Uniform).unwrap();
        assert_eq!(u.weight(9, 0.3), 1.0);
        assert!(WeightScheme::new(5, 2, TailWeights::Uniform).is_err());
    }

    /// Worked example: iterates 1,2,3,4 at n=0..3 with n0=1, n1=2 and a
    /// decreasing tail give mean (2 + 3 + 3^-0.8 * 4) / (2 + 3^-0.8).
    #[test]
    fn weighted_mean_hand_computed() {
        let sched = StepSchedule::new(1.0, 0.8, 1.0).unwrap();
        let scheme = WeightScheme::new(1, 2, TailWeights::Decreasing).unwrap();
        let mut acc = WeightedMean::new(1);
        for (n, theta) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let n = n as u64;
            let w = scheme.weight(n, sched.delta(n.max(1)));
            acc.push(w, &[*theta]);
        }
        let d3 = 3f64.powf(-0.8);
        let expected = (2.0 + 3.0 + d3 * 4.0) / (2.0 + d3);
        assert_relative_eq!(acc.mean(&[0.0])[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn weighted_mean_fallback_until_weighted() {
        let mut acc = WeightedMean::new(2);
        assert_eq!(acc.mean(&[7.0, 8.0]), vec![7.0, 8.0]);
        acc.push(0.0, &[1.0, 1.0]);
        assert_eq!(acc.mean(&[7.0, 8.0]), vec![7.0, 8.0]);
        acc.push(2.0, &[1.0, 3.0]);
        assert_eq!(acc.mean(&[7.0, 8.0]), vec![1.0, 3.0]);
    }

    #[test]
    fn stop_rule_relative_sup_norm() {
        let rule = StopRule::new(1e-2, 100).unwrap();
        assert!(rule.met(&[1.0, 2.0], &[1.005, 2.01]));
        assert!(!rule.met(&[1.0, 2.0], &[1.02, 2.0]));
        assert!(StopRule::new(0.0, 10).is_err());
        assert!(StopRule::new(1e-3, 0).is_err());
    }
}
