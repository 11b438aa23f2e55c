//! Shared fixtures for the criterion benchmarks: deterministic images
//! and pre-assembled models sized for timing runs.

use std::sync::Arc;

use sapg_core::model::{LikelihoodSpec, PosteriorModel, RegulariserSpec, ThetaDomain};
use sapg_core::transforms::CirculantBlur;
use sapg_core::{DomainTag, ImageVector, Shape};

/// Deterministic piecewise-constant test image (no RNG, so benches never
/// drift with dependency upgrades).
pub fn cartoon_image(height: usize, width: usize) -> Vec<f64> {
    let mut img = vec![0.2; height * width];
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 / height as f64, c as f64 / width as f64);
            if (y - 0.4).powi(2) + (x - 0.35).powi(2) < 0.04 {
                img[r * width + c] = 0.9;
            }
            if y > 0.6 && x > 0.55 && y < 0.85 && x < 0.9 {
                img[r * width + c] = 0.6;
            }
        }
    }
    img
}

/// Uniform-blur deconvolution model with a total-variation prior, the
/// workhorse configuration for kernel timing.
pub fn deblur_model(height: usize, width: usize) -> (PosteriorModel, ImageVector) {
    let truth = cartoon_image(height, width);
    let blur = Arc::new(CirculantBlur::uniform(5, height, width).unwrap());
    let y = blur.apply(&truth);
    let lik = LikelihoodSpec::gaussian(blur, y.clone(), 1e-3, None).unwrap();
    let model = PosteriorModel::new(
        lik,
        RegulariserSpec::tv_iso(height, width, 25),
        ThetaDomain::scalar(1e-3, 1e3).unwrap(),
    )
    .unwrap();
    let x0 = ImageVector::new(y, Shape::TwoD { height, width }, DomainTag::Pixel).unwrap();
    (model, x0)
}
