//! Standard normal distribution functions.
//!
//! `sf` and `cdf` are both evaluated through `erfc` so that either tail keeps
//! full relative precision; `upper_quantile` is the inverse of `sf`.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Φ(x).
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Φ̄(x) = 1 − Φ(x).
#[inline]
pub fn sf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Upper-tail quantile z_q, the value with Φ̄(z_q) = q.
///
/// Returns ±∞ at the endpoints of [0, 1].
pub fn upper_quantile(q: f64) -> f64 {
    if q.is_nan() || !(0.0..=1.0).contains(&q) {
        return f64::NAN;
    }
    if q == 0.0 {
        return f64::INFINITY;
    }
    if q == 1.0 {
        return f64::NEG_INFINITY;
    }
    let mut z = SQRT_2 * erfc_inv(2.0 * q);
    // Newton steps on log Φ̄ polish the statrs seed to full precision.
    for _ in 0..2 {
        let s = sf(z);
        let d = pdf(z);
        if !(s > 0.0 && d > 0.0 && z.is_finite()) {
            break;
        }
        let step = (s.ln() - q.ln()) * s / d;
        if !step.is_finite() {
            break;
        }
        z += step;
    }
    z
}

/// Quantile Φ⁻¹(p).
pub fn quantile(p: f64) -> f64 {
    -upper_quantile(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erf via the positive-term series
    /// erf(x) = 2/√π · e^{−x²} · Σ 2ⁿ x^{2n+1} / (1·3·…·(2n+1)).
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 * sum.abs() {
            n += 1.0;
            term *= 2.0 * x * x / (2.0 * n + 1.0);
            sum += term;
        }
        2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
    }

    fn cdf_oracle(x: f64) -> f64 {
        0.5 * (1.0 + erf_series(x / SQRT_2))
    }

    #[test]
    fn cdf_reference_points() {
        assert_eq!(cdf(0.0), 0.5);
        assert_eq!(cdf(f64::INFINITY), 1.0);
        assert_eq!(sf(f64::INFINITY), 0.0);
        assert!((cdf(1.644_853_6) - 0.95).abs() < 1e-6);
        assert!((cdf(1.644_853_6) - cdf_oracle(1.644_853_6)).abs() < 1e-12);
        assert!((cdf(-2.0) - 0.022_750_131_948_179_2).abs() < 1e-12);
    }

    #[test]
    fn cdf_matches_series_oracle() {
        for i in -60..=60 {
            let x = i as f64 * 0.1;
            assert!((cdf(x) - cdf_oracle(x)).abs() < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn sf_keeps_relative_precision_in_tail() {
        // Φ̄(10) = 7.619853024160527e-24
        let s = sf(10.0);
        assert!((s / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn upper_quantile_inverts_sf() {
        for &q in &[1e-15, 1e-10, 5e-6, 1e-3, 0.05, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-9] {
            let z = upper_quantile(q);
            assert!((sf(z) / q - 1.0).abs() < 1e-12, "q = {q}");
        }
        assert_eq!(upper_quantile(0.5), 0.0);
        assert!((upper_quantile(0.001_349_898_031_630_094_6) - 3.0).abs() < 1e-10);
    }
}
