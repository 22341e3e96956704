//! Discretized Gaussian probabilities.
//!
//! Everything here goes through `libm`, a pure-software libm, so tables built
//! from these values come out bit-identical on every platform.

use super::EntropyError;

/// Upper tail of the standard normal, Q(x) = 1 - Phi(x).
#[inline]
pub fn normal_upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    normal_upper_tail(-x)
}

/// Phi(b) - Phi(a) for a <= b, evaluated on whichever tail keeps precision.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_upper_tail(a) - normal_upper_tail(b)
    } else if b <= 0.0 {
        normal_upper_tail(-b) - normal_upper_tail(-a)
    } else {
        1.0 - normal_upper_tail(b) - normal_upper_tail(-a)
    }
}

/// Mass of the unit-width bin around `symbol` under N(mu, sigma^2).
pub fn discretized_gaussian_pmf(mu: f64, sigma: f64, symbol: i64) -> Result<f64, EntropyError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(EntropyError::InvalidSigma(sigma));
    }
    let s = symbol as f64;
    Ok(normal_mass((s - 0.5 - mu) / sigma, (s + 0.5 - mu) / sigma).max(0.0))
}

/// Zero-mean pmf of |symbol|, written so that +k and -k are bit-identical.
pub(crate) fn zero_mean_pmf_abs(sigma: f64, k: u64) -> f64 {
    if k == 0 {
        1.0 - 2.0 * normal_upper_tail(0.5 / sigma)
    } else {
        let k = k as f64;
        normal_upper_tail((k - 0.5) / sigma) - normal_upper_tail((k + 0.5) / sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gaussian_centre_bin() {
        // Phi(0.5) - Phi(-0.5) = 0.38292492254802620727...
        let p = discretized_gaussian_pmf(0.0, 1.0, 0).unwrap();
        assert!((p - 0.382_924_922_548_026_2).abs() < 1e-15);
    }

    #[test]
    fn symmetric_and_normalized() {
        for &sigma in &[0.11, 0.7, 3.0, 25.0] {
            for k in 0..30 {
                let a = discretized_gaussian_pmf(0.0, sigma, k).unwrap();
                let b = discretized_gaussian_pmf(0.0, sigma, -k).unwrap();
                assert!((a - b).abs() < 1e-15);
            }
            let span = (40.0 * sigma).ceil() as i64;
            let total: f64 = (-span..=span)
                .map(|s| discretized_gaussian_pmf(0.0, sigma, s).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "sigma {sigma}: {total}");
        }
    }

    #[test]
    fn shifted_mean_and_abs_form_agree() {
        let p = discretized_gaussian_pmf(2.0, 1.5, 2).unwrap();
        assert!((p - zero_mean_pmf_abs(1.5, 0)).abs() < 1e-15);
        for k in 1..10 {
            let direct = discretized_gaussian_pmf(0.0, 0.8, k as i64).unwrap();
            assert!((direct - zero_mean_pmf_abs(0.8, k)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(discretized_gaussian_pmf(0.0, 0.0, 0).is_err());
        assert!(discretized_gaussian_pmf(0.0, -1.0, 0).is_err());
        assert!(discretized_gaussian_pmf(0.0, f64::NAN, 0).is_err());
    }
}
