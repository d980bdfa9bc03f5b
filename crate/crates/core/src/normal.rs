//! Standard normal helpers with tail-accurate survival functions.

use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, accurate in the lower tail.
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - cdf(z)`, accurate in the upper tail.
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// `E|Z|^3` for a standard normal `Z`.
pub fn abs_third_moment() -> f64 {
    (8.0 / PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_tails() {
        for &z in &[0.0, 0.3, 1.0, 2.5, 6.0] {
            assert!((cdf(-z) - sf(z)).abs() < 1e-16);
            assert!((cdf(z) + sf(z) - 1.0).abs() < 1e-15);
        }
        assert!((cdf(0.5) - cdf(-0.5) - 0.382_924_922_548_026).abs() < 1e-14);
    }

    #[test]
    fn far_tail_keeps_relative_precision() {
        // Mills-ratio asymptotics at z = 10: sf ~ pdf(z)/z * (1 - 1/z^2 + 3/z^4)
        let z = 10.0;
        let approx = pdf(z) / z * (1.0 - 1.0 / (z * z) + 3.0 / z.powi(4) - 15.0 / z.powi(6));
        assert!((sf(z) / approx - 1.0).abs() < 1e-4);
    }
}
