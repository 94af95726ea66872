//! Least-squares power-law fits in log-log coordinates.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_samples: usize,
}

impl DecayFit {
    pub fn predict(&self, x: f64) -> f64 {
        libm::exp(self.intercept) * libm::pow(x, self.slope)
    }
}

/// Fits `log y = intercept + slope * log x`. Requires at least three strictly
/// positive pairs with `x` spanning at least one decade.
pub fn fit_decay_exponent(samples: &[(f64, f64)]) -> Result<DecayFit> {
    if samples.len() < 3 {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            need: 3,
        });
    }
    if samples
        .iter()
        .any(|&(x, y)| !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite())
    {
        return Err(invalid(
            "power-law fit needs strictly positive finite samples",
        ));
    }
    let (xmin, xmax) = samples
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(x, _)| {
            (lo.min(x), hi.max(x))
        });
    if xmax / xmin < 10.0 * (1.0 - 1e-12) {
        return Err(invalid("abscissae must span at least one decade"));
    }
    fit_log_log(samples)
}

/// Same regression as [`fit_decay_exponent`] without the one-decade span requirement.
pub fn fit_log_log(samples: &[(f64, f64)]) -> Result<DecayFit> {
    if samples.len() < 3 {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            need: 3,
        });
    }
    if samples
        .iter()
        .any(|&(x, y)| !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite())
    {
        return Err(invalid(
            "power-law fit needs strictly positive finite samples",
        ));
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(x, y)| (libm::log(x), libm::log(y)))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let e = p.1 - intercept - slope * p.0;
            e * e
        })
        .sum();
    let r_squared = if syy <= 1e-300 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        slope,
        intercept,
        r_squared,
        n_samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| libm::pow(10.0, -3.0 + 2.0 * i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn exact_power() {
        let s: Vec<(f64, f64)> = grid(9)
            .into_iter()
            .map(|x| (x, libm::pow(x, -0.5)))
            .collect();
        let f = fit_decay_exponent(&s).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_gives_zero_slope() {
        let s: Vec<(f64, f64)> = grid(5).into_iter().map(|x| (x, 2.5)).collect();
        let f = fit_decay_exponent(&s).unwrap();
        assert!(f.slope.abs() < 1e-12);
    }

    #[test]
    fn noisy_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<(f64, f64)> = grid(20)
            .into_iter()
            .map(|x| (x, 3.0 / x * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))))
            .collect();
        let f = fit_decay_exponent(&s).unwrap();
        assert!((f.slope + 1.0).abs() < 0.02);
    }

    #[test]
    fn rejections() {
        assert!(fit_decay_exponent(&[(1.0, 1.0), (10.0, 1.0)]).is_err());
        assert!(fit_decay_exponent(&[(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
        assert!(fit_decay_exponent(&[(1.0, 0.0), (5.0, 1.0), (10.0, 1.0)]).is_err());
        assert!(fit_decay_exponent(&[(1.0, 1.0), (3.0, 2.0), (10.0, -1.0)]).is_err());
    }
}
