//! Circulant (periodic-boundary) convolution implemented in the Fourier
//! domain. The operator is diagonalised by the 2-D DFT, so both the
//! adjoint and the exact spectral norm come for free from the transfer
//! function.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::transforms::LinearOperator;

/// Cached 2-D FFT plans for a fixed image size.
struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, data: &mut [Complex<f64>], forward: bool) {
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        for r in data.chunks_exact_mut(self.width) {
            row.process(r);
        }
        let mut column = vec![Complex::new(0.0, 0.0); self.height];
        for j in 0..self.width {
            for i in 0..self.height {
                column[i] = data[i * self.width + j];
            }
            col.process(&mut column);
            for i in 0..self.height {
                data[i * self.width + j] = column[i];
            }
        }
        if !forward {
            let scale = 1.0 / (self.height * self.width) as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Convolution with a small point-spread function under periodic boundary
/// conditions, as a `LinearOperator` on `height x width` images.
pub struct CirculantBlur {
    height: usize,
    width: usize,
    otf: Vec<Complex<f64>>,
    fft: Fft2,
    norm: f64,
}

impl CirculantBlur {
    /// Builds the operator from an arbitrary `ph x pw` kernel (odd sizes;
    /// the kernel is centred). The kernel is used as given — normalise it
    /// before calling if unit DC gain is wanted.
    pub fn new(psf: &[f64], ph: usize, pw: usize, height: usize, width: usize) -> Result<Self> {
        if psf.len() != ph * pw {
            return Err(Error::ShapeMismatch {
                context: "CirculantBlur::new",
                expected: format!("{} kernel entries", ph * pw),
                actual: format!("{}", psf.len()),
            });
        }
        if ph % 2 == 0 || pw % 2 == 0 {
            return Err(Error::InvalidParam {
                name: "psf",
                reason: format!("kernel sides must be odd, got {ph}x{pw}"),
            });
        }
        if ph > height || pw > width {
            return Err(Error::InvalidParam {
                name: "psf",
                reason: format!("kernel {ph}x{pw} larger than image {height}x{width}"),
            });
        }

        // Embed the kernel with its centre at the origin, wrapping negative
        // offsets around, then take its DFT to obtain the transfer function.
        let mut padded = vec![Complex::new(0.0, 0.0); height * width];
        let (ch, cw) = (ph / 2, pw / 2);
        for a in 0..ph {
            for b in 0..pw {
                let i = (a + height - ch) % height;
                let j = (b + width - cw) % width;
                padded[i * width + j] = Complex::new(psf[a * pw + b], 0.0);
            }
        }
        let fft = Fft2::new(height, width);
        fft.transform(&mut padded, true);
        let norm = padded.iter().map(|c| c.norm()).fold(0.0, f64::max);
        Ok(Self { height, width, otf: padded, fft, norm })
    }

    /// Uniform `size x size` box kernel with unit DC gain.
    pub fn uniform(size: usize, height: usize, width: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParam {
                name: "size",
                reason: "kernel size must be positive".into(),
            });
        }
        let psf = vec![1.0 / (size * size) as f64; size * size];
        Self::new(&psf, size, size, height, width)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn convolve(&self, x: &[f64], conjugate: bool) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.height * self.width);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.transform(&mut buf, true);
        for (v, t) in buf.iter_mut().zip(&self.otf) {
            *v *= if conjugate { t.conj() } else { *t };
        }
        self.fft.transform(&mut buf, false);
        buf.into_iter().map(|c| c.re).collect()
    }
}

impl LinearOperator for CirculantBlur {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.convolve(x, false)
    }

    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        self.convolve(u, true)
    }

    fn input_dim(&self) -> usize {
        self.height * self.width
    }

    fn output_dim(&self) -> usize {
        self.height * self.width
    }

    /// Exact: the largest transfer-function magnitude.
    fn operator_norm_bound(&self) -> f64 {
        self.norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::adjoint_identity_holds;
    use approx::assert_relative_eq;

    #[test]
    fn delta_reproduces_shifted_kernel() {
        let blur = CirculantBlur::uniform(3, 8, 8).unwrap();
        let mut delta = vec![0.0; 64];
        delta[3 * 8 + 4] = 1.0; // impulse at (3, 4)
        let out = blur.apply(&delta);
        for i in 0..8usize {
            for j in 0..8usize {
                let di = (i as i64 - 3).rem_euclid(8);
                let dj = (j as i64 - 4).rem_euclid(8);
                let expect = if di.min((8 - di) % 8).abs() <= 1 && dj.min((8 - dj) % 8).abs() <= 1 {
                    1.0 / 9.0
                } else {
                    0.0
                };
                assert_relative_eq!(out[i * 8 + j], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_is_invariant_under_unit_gain_kernel() {
        let blur = CirculantBlur::uniform(9, 16, 16).unwrap();
        let x = vec![2.5; 256];
        let out = blur.apply(&x);
        for v in out {
            assert_relative_eq!(v, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_inner_product_identity() {
        let blur = CirculantBlur::uniform(5, 12, 10).unwrap();
        assert!(adjoint_identity_holds(&blur, 42, 1e-10));
    }

    #[test]
    fn norm_bound_is_one_for_normalised_kernel() {
        let blur = CirculantBlur::uniform(9, 32, 32).unwrap();
        assert_relative_eq!(blur.operator_norm_bound(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_even_or_oversized_kernels() {
        assert!(CirculantBlur::uniform(2, 8, 8).is_err());
        assert!(CirculantBlur::uniform(9, 4, 4).is_err());
    }
}
