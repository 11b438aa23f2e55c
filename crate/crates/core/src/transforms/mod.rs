//! Linear forward operators, wavelet bases, noise synthesis, image metrics
//! and file I/O used to assemble the inverse problems.

pub mod blur;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod wavelet;

pub use blur::CirculantBlur;
pub use metrics::{mse_db, psnr_db};
pub use noise::{add_noise, NoiseKind};
pub use wavelet::{Orientation, Subband, WaveletBasis, WaveletKind};

use std::sync::Arc;

/// A linear map with an exact adjoint. `apply` is the forward model `A`,
/// `adjoint` is `A^T`; both operate on flat row-major buffers.
pub trait LinearOperator: Send + Sync {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn adjoint(&self, u: &[f64]) -> Vec<f64>;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// An upper bound on the spectral norm ||A||. Exact where cheap.
    fn operator_norm_bound(&self) -> f64;
}

pub struct IdentityOp {
    dim: usize,
}

impl IdentityOp {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LinearOperator for IdentityOp {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        x.to_vec()
    }

    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.dim);
        u.to_vec()
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn operator_norm_bound(&self) -> f64 {
        1.0
    }
}

/// Composition `outer . inner` (apply runs `inner` first), e.g. blur after
/// wavelet synthesis for deconvolution in a redundant dictionary.
pub struct ComposedOp {
    outer: Arc<dyn LinearOperator>,
    inner: Arc<dyn LinearOperator>,
}

impl ComposedOp {
    pub fn new(outer: Arc<dyn LinearOperator>, inner: Arc<dyn LinearOperator>) -> crate::Result<Self> {
        if outer.input_dim() != inner.output_dim() {
            return Err(crate::Error::ShapeMismatch {
                context: "ComposedOp::new",
                expected: format!("inner output {}", outer.input_dim()),
                actual: format!("{}", inner.output_dim()),
            });
        }
        Ok(Self { outer, inner })
    }
}

impl LinearOperator for ComposedOp {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.outer.apply(&self.inner.apply(x))
    }

    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        self.inner.adjoint(&self.outer.adjoint(u))
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.outer.output_dim()
    }

    fn operator_norm_bound(&self) -> f64 {
        self.outer.operator_norm_bound() * self.inner.operator_norm_bound()
    }
}

#[cfg(test)]
pub(crate) fn adjoint_identity_holds(op: &dyn LinearOperator, seed: u64, rel_tol: f64) -> bool {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let x: Vec<f64> = (0..op.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..op.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs = crate::image::dot(&op.apply(&x), &u);
        let rhs = crate::image::dot(&x, &op.adjoint(&u));
        let scale = lhs.abs().max(rhs.abs()).max(1e-12);
        if (lhs - rhs).abs() / scale > rel_tol {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_adjoint_is_exact() {
        let op = IdentityOp::new(32);
        assert!(adjoint_identity_holds(&op, 1, 1e-14));
    }

    #[test]
    fn composed_op_checks_dims() {
        let a = Arc::new(IdentityOp::new(4));
        let b = Arc::new(IdentityOp::new(5));
        assert!(ComposedOp::new(a, b).is_err());
    }
}
