//! Reconstruction quality metrics.
//!
//! Sign convention: `mse_db = 10 log10(mean squared error)` and
//! `psnr_db = -mse_db`, so a better reconstruction has a lower `mse_db`
//! and a higher `psnr_db`. An exact match returns the infinite sentinels
//! (`-inf` / `+inf`).

/// Mean squared error against a reference, in decibels.
pub fn mse_db(x: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(x.len(), reference.len(), "metric operands must have equal length");
    let mse: f64 = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * mse.log10()
    }
}

/// Peak signal-to-noise ratio, `-10 log10(||x - ref||^2 / d)`.
pub fn psnr_db(x: &[f64], reference: &[f64]) -> f64 {
    -mse_db(x, reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_match_hits_sentinels() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(mse_db(&x, &x), f64::NEG_INFINITY);
        assert_eq!(psnr_db(&x, &x), f64::INFINITY);
    }

    #[test]
    fn unit_error_gives_zero_psnr() {
        let x = vec![0.0; 17];
        let y = vec![1.0; 17];
        assert_relative_eq!(psnr_db(&x, &y), 0.0, epsilon = 1e-12);
        assert_relative_eq!(mse_db(&x, &y), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scales_as_ten_log_ten() {
        let x = vec![0.0; 4];
        let y = vec![10.0; 4];
        assert_relative_eq!(mse_db(&x, &y), 20.0, epsilon = 1e-12);
    }
}
