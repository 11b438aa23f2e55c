//! Multi-level 2-D Haar transforms.
//!
//! Two flavours are provided:
//!
//! * `Orthogonal` — the decimated orthonormal transform; `analysis` and
//!   `synthesis` are exact inverses and exact adjoints of each other.
//! * `Undecimated` — the shift-invariant (à trous) transform with
//!   periodic boundary and tight-frame normalisation: the analysis
//!   operator `W` satisfies `W^T W = I`, so `synthesis = W^T` is both the
//!   adjoint and a left inverse, and `||W|| = ||W^T|| = 1`. With `L`
//!   levels the coefficient vector is `(1 + 3L)` times the image size.
//!
//! Coefficients are laid out subband by subband — approximation first,
//! then detail triples from coarsest to finest — so that per-level groups
//! are contiguous index ranges.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::transforms::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletKind {
    Orthogonal,
    Undecimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Approx,
    Horizontal,
    Vertical,
    Diagonal,
}

/// One contiguous coefficient group: `level` counts 1 (finest) up to the
/// number of levels; the approximation band carries the coarsest level.
#[derive(Debug, Clone, Copy)]
pub struct Subband {
    pub level: usize,
    pub orientation: Orientation,
    pub offset: usize,
    pub len: usize,
}

pub struct WaveletBasis {
    kind: WaveletKind,
    levels: usize,
    height: usize,
    width: usize,
    subbands: Vec<Subband>,
    coeff_len: usize,
}

impl WaveletBasis {
    pub fn orthogonal_haar(height: usize, width: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParam { name: "levels", reason: "need at least one level".into() });
        }
        let div = 1usize << levels;
        if height % div != 0 || width % div != 0 {
            return Err(Error::InvalidParam {
                name: "levels",
                reason: format!("{height}x{width} not divisible by 2^{levels}"),
            });
        }
        let mut subbands = Vec::new();
        let mut offset = 0;
        let approx_len = (height >> levels) * (width >> levels);
        subbands.push(Subband { level: levels, orientation: Orientation::Approx, offset, len: approx_len });
        offset += approx_len;
        for level in (1..=levels).rev() {
            let len = (height >> level) * (width >> level);
            for orientation in [Orientation::Horizontal, Orientation::Vertical, Orientation::Diagonal] {
                subbands.push(Subband { level, orientation, offset, len });
                offset += len;
            }
        }
        debug_assert_eq!(offset, height * width);
        Ok(Self { kind: WaveletKind::Orthogonal, levels, height, width, subbands, coeff_len: offset })
    }

    pub fn undecimated_haar(height: usize, width: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParam { name: "levels", reason: "need at least one level".into() });
        }
        // Hole spacing at the coarsest level must still fit in the image.
        if (1usize << (levels - 1)) >= height.min(width) {
            return Err(Error::InvalidParam {
                name: "levels",
                reason: format!("{levels} levels too deep for {height}x{width}"),
            });
        }
        let plane = height * width;
        let mut subbands = Vec::new();
        let mut offset = 0;
        subbands.push(Subband { level: levels, orientation: Orientation::Approx, offset, len: plane });
        offset += plane;
        for level in (1..=levels).rev() {
            for orientation in [Orientation::Horizontal, Orientation::Vertical, Orientation::Diagonal] {
                subbands.push(Subband { level, orientation, offset, len: plane });
                offset += plane;
            }
        }
        Ok(Self { kind: WaveletKind::Undecimated, levels, height, width, subbands, coeff_len: offset })
    }

    pub fn kind(&self) -> WaveletKind {
        self.kind
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width
    }

    pub fn coeff_len(&self) -> usize {
        self.coeff_len
    }

    pub fn subbands(&self) -> &[Subband] {
        &self.subbands
    }

    /// Subband containing a flat coefficient index.
    pub fn block_index(&self, coeff_idx: usize) -> Result<&Subband> {
        self.subbands
            .iter()
            .find(|s| coeff_idx >= s.offset && coeff_idx < s.offset + s.len)
            .ok_or_else(|| Error::InvalidParam {
                name: "coeff_idx",
                reason: format!("{coeff_idx} out of range for {} coefficients", self.coeff_len),
            })
    }

    /// Block lengths grouped per level (approximation band first, then
    /// each level's three detail bands merged), for separable per-level
    /// penalties. Blocks are contiguous because of the subband layout.
    pub fn level_block_lens(&self) -> Vec<usize> {
        let mut lens = vec![self.subbands[0].len];
        for chunk in self.subbands[1..].chunks(3) {
            lens.push(chunk.iter().map(|s| s.len).sum());
        }
        lens
    }

    pub fn analysis(&self, image: &[f64]) -> Vec<f64> {
        debug_assert_eq!(image.len(), self.image_len());
        match self.kind {
            WaveletKind::Orthogonal => self.analysis_orthogonal(image),
            WaveletKind::Undecimated => self.analysis_undecimated(image),
        }
    }

    pub fn synthesis(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.coeff_len);
        match self.kind {
            WaveletKind::Orthogonal => self.synthesis_orthogonal(coeffs),
            WaveletKind::Undecimated => self.synthesis_undecimated(coeffs),
        }
    }

    fn detail_offsets(&self, level: usize) -> (usize, usize, usize) {
        let mut it = self.subbands.iter().filter(|s| s.level == level && s.orientation != Orientation::Approx);
        let h = it.next().unwrap().offset;
        let v = it.next().unwrap().offset;
        let d = it.next().unwrap().offset;
        (h, v, d)
    }

    fn analysis_orthogonal(&self, image: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coeff_len];
        let mut cur = image.to_vec();
        let (mut h, mut w) = (self.height, self.width);
        for level in 1..=self.levels {
            let (hh, hw) = (h / 2, w / 2);
            let mut approx = vec![0.0; hh * hw];
            let (oh, ov, od) = self.detail_offsets(level);
            for i in 0..hh {
                for j in 0..hw {
                    let p = cur[(2 * i) * w + 2 * j];
                    let q = cur[(2 * i) * w + 2 * j + 1];
                    let r = cur[(2 * i + 1) * w + 2 * j];
                    let s = cur[(2 * i + 1) * w + 2 * j + 1];
                    let k = i * hw + j;
                    approx[k] = (p + q + r + s) / 2.0;
                    out[oh + k] = (p - q + r - s) / 2.0;
                    out[ov + k] = (p + q - r - s) / 2.0;
                    out[od + k] = (p - q - r + s) / 2.0;
                }
            }
            cur = approx;
            h = hh;
            w = hw;
        }
        out[self.subbands[0].offset..self.subbands[0].offset + cur.len()].copy_from_slice(&cur);
        out
    }

    fn synthesis_orthogonal(&self, coeffs: &[f64]) -> Vec<f64> {
        let approx_band = self.subbands[0];
        let mut cur = coeffs[approx_band.offset..approx_band.offset + approx_band.len].to_vec();
        let (mut h, mut w) = (self.height >> self.levels, self.width >> self.levels);
        for level in (1..=self.levels).rev() {
            let (nh, nw) = (h * 2, w * 2);
            let mut next = vec![0.0; nh * nw];
            let (oh, ov, od) = self.detail_offsets(level);
            for i in 0..h {
                for j in 0..w {
                    let k = i * w + j;
                    let a = cur[k];
                    let dh = coeffs[oh + k];
                    let dv = coeffs[ov + k];
                    let dd = coeffs[od + k];
                    next[(2 * i) * nw + 2 * j] = (a + dh + dv + dd) / 2.0;
                    next[(2 * i) * nw + 2 * j + 1] = (a - dh + dv - dd) / 2.0;
                    next[(2 * i + 1) * nw + 2 * j] = (a + dh - dv - dd) / 2.0;
                    next[(2 * i + 1) * nw + 2 * j + 1] = (a - dh - dv + dd) / 2.0;
                }
            }
            cur = next;
            h = nh;
            w = nw;
        }
        cur
    }

    fn analysis_undecimated(&self, image: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        let mut out = vec![0.0; self.coeff_len];
        let mut cur = image.to_vec();
        let mut ra = vec![0.0; plane];
        let mut rd = vec![0.0; plane];
        for level in 1..=self.levels {
            let s = 1usize << (level - 1);
            // Rows: averaging and differencing with hole spacing s. The
            // 1/2 factors make each level an isometry on its input.
            for i in 0..h {
                for j in 0..w {
                    let a = cur[i * w + j];
                    let b = cur[i * w + (j + s) % w];
                    ra[i * w + j] = (a + b) / 2.0;
                    rd[i * w + j] = (a - b) / 2.0;
                }
            }
            let (oh, ov, od) = self.detail_offsets(level);
            let mut approx = vec![0.0; plane];
            for i in 0..h {
                let i2 = (i + s) % h;
                for j in 0..w {
                    let k = i * w + j;
                    let k2 = i2 * w + j;
                    approx[k] = (ra[k] + ra[k2]) / 2.0;
                    out[ov + k] = (ra[k] - ra[k2]) / 2.0;
                    out[oh + k] = (rd[k] + rd[k2]) / 2.0;
                    out[od + k] = (rd[k] - rd[k2]) / 2.0;
                }
            }
            cur = approx;
        }
        out[self.subbands[0].offset..self.subbands[0].offset + plane].copy_from_slice(&cur);
        out
    }

    fn synthesis_undecimated(&self, coeffs: &[f64]) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        let approx_band = self.subbands[0];
        let mut cur = coeffs[approx_band.offset..approx_band.offset + plane].to_vec();
        let mut ra = vec![0.0; plane];
        let mut rd = vec![0.0; plane];
        for level in (1..=self.levels).rev() {
            let s = 1usize << (level - 1);
            let (oh, ov, od) = self.detail_offsets(level);
            // Transposed column step: spacing-s backward filters.
            for i in 0..h {
                let ib = (i + h - s) % h;
                for j in 0..w {
                    let k = i * w + j;
                    let kb = ib * w + j;
                    ra[k] = (cur[k] + cur[kb]) / 2.0 + (coeffs[ov + k] - coeffs[ov + kb]) / 2.0;
                    rd[k] = (coeffs[oh + k] + coeffs[oh + kb]) / 2.0 + (coeffs[od + k] - coeffs[od + kb]) / 2.0;
                }
            }
            // Transposed row step.
            let mut next = vec![0.0; plane];
            for i in 0..h {
                for j in 0..w {
                    let k = i * w + j;
                    let kb = i * w + (j + w - s) % w;
                    next[k] = (ra[k] + ra[kb]) / 2.0 + (rd[k] - rd[kb]) / 2.0;
                }
            }
            cur = next;
        }
        cur
    }
}

/// Wavelet synthesis as a `LinearOperator`: `apply` maps coefficients to
/// the pixel domain, `adjoint` is the analysis transform.
pub struct SynthesisOp {
    basis: Arc<WaveletBasis>,
}

impl SynthesisOp {
    pub fn new(basis: Arc<WaveletBasis>) -> Self {
        Self { basis }
    }

    pub fn basis(&self) -> &WaveletBasis {
        &self.basis
    }
}

impl LinearOperator for SynthesisOp {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.basis.synthesis(x)
    }

    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        self.basis.analysis(u)
    }

    fn input_dim(&self) -> usize {
        self.basis.coeff_len()
    }

    fn output_dim(&self) -> usize {
        self.basis.image_len()
    }

    fn operator_norm_bound(&self) -> f64 {
        // Orthogonal columns in both flavours: exact unit norm.
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::adjoint_identity_holds;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn orthogonal_single_level_on_constant_block() {
        let basis = WaveletBasis::orthogonal_haar(2, 2, 1).unwrap();
        let coeffs = basis.analysis(&[1.0, 1.0, 1.0, 1.0]);
        assert_relative_eq!(coeffs[0], 2.0, epsilon = 1e-14); // approximation
        for &c in &coeffs[1..] {
            assert_relative_eq!(c, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn orthogonal_round_trip_and_energy() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..16 * 16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let basis = WaveletBasis::orthogonal_haar(16, 16, 4).unwrap();
        let c = basis.analysis(&x);
        let back = basis.synthesis(&c);
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = c.iter().map(|v| v * v).sum();
        assert_relative_eq!(ex, ec, max_relative = 1e-12); // Parseval
        for (a, b) in x.iter().zip(&back) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn orthogonal_synthesis_is_adjoint_of_analysis() {
        let basis = Arc::new(WaveletBasis::orthogonal_haar(8, 8, 3).unwrap());
        let op = SynthesisOp::new(basis);
        assert!(adjoint_identity_holds(&op, 9, 1e-12));
    }

    #[test]
    fn undecimated_left_inverse_and_adjoint() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..12 * 10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let basis = Arc::new(WaveletBasis::undecimated_haar(12, 10, 3).unwrap());
        assert_eq!(basis.coeff_len(), 10 * x.len());
        let c = basis.analysis(&x);
        let back = basis.synthesis(&c);
        for (a, b) in x.iter().zip(&back) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let op = SynthesisOp::new(basis);
        assert!(adjoint_identity_holds(&op, 10, 1e-12));
    }

    #[test]
    fn undecimated_redundancy_is_one_plus_three_levels() {
        let basis = WaveletBasis::undecimated_haar(16, 16, 3).unwrap();
        assert_eq!(basis.coeff_len(), 10 * 256);
        assert_eq!(basis.level_block_lens(), vec![256, 3 * 256, 3 * 256, 3 * 256]);
    }

    #[test]
    fn block_index_finds_owning_subband() {
        let basis = WaveletBasis::orthogonal_haar(8, 8, 2).unwrap();
        let sb = basis.block_index(0).unwrap();
        assert_eq!(sb.orientation, Orientation::Approx);
        let last = basis.block_index(63).unwrap();
        assert_eq!(last.level, 1);
        assert!(basis.block_index(64).is_err());
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(WaveletBasis::orthogonal_haar(12, 12, 3).is_err()); // 12 % 8 != 0
        assert!(WaveletBasis::undecimated_haar(4, 4, 4).is_err()); // spacing 8 > 4
    }
}
