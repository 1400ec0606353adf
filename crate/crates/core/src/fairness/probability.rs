//! Probability that `n` uniform draws over `m` choices land exactly `n/m`
//! times on every choice:
//!
//! ```text
//! f(m, n) = n! / ((n/m)!)^m * m^(-n)
//! ```
//!
//! The exact value is a big rational. For large `n` the Stirling asymptote
//! `sqrt(m) / (2 pi n / m)^((m - 1) / 2)` tends to zero, so uniform sampling
//! almost never yields equal counts.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

fn check(m: u64, n: u64) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need m >= 2, got m = {m}")));
    }
    if n < m {
        return Err(Error::InvalidArgument(format!("need n >= m, got n = {n}, m = {m}")));
    }
    if !n.is_multiple_of(m) {
        return Err(Error::InvalidArgument(format!("n = {n} is not divisible by m = {m}")));
    }
    Ok(())
}

fn factorial(n: u64) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, k| acc * k)
}

/// Exact `f(m, n)` as a reduced rational.
pub fn equal_count_probability_exact(m: u64, n: u64) -> Result<BigRational> {
    check(m, n)?;
    let share = factorial(n / m);
    let numer = factorial(n) / share.pow(m as u32);
    let denom = BigUint::from(m).pow(n as u32);
    Ok(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
}

/// Exact `f(m, n)` rounded to the nearest `f64`.
pub fn equal_count_probability_f64(m: u64, n: u64) -> Result<f64> {
    let exact = equal_count_probability_exact(m, n)?;
    Ok(exact.to_f64().unwrap_or(0.0))
}

/// `ln f(m, n)` through the log-gamma function; usable for `n` far beyond
/// what the exact route can afford.
pub fn equal_count_probability_ln(m: u64, n: u64) -> Result<f64> {
    check(m, n)?;
    let (mf, nf) = (m as f64, n as f64);
    Ok(ln_gamma(nf + 1.0) - mf * ln_gamma(nf / mf + 1.0) - nf * mf.ln())
}

/// The Stirling asymptote `sqrt(m) / (2 pi n / m)^((m - 1) / 2)`.
pub fn equal_count_probability_stirling(m: u64, n: u64) -> Result<f64> {
    check(m, n)?;
    let (mf, nf) = (m as f64, n as f64);
    let ln = 0.5 * mf.ln() - 0.5 * (mf - 1.0) * (2.0 * std::f64::consts::PI * nf / mf).ln();
    Ok(ln.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;

    /// Counts balanced sequences among all `m^n` draw sequences.
    fn brute_force(m: u64, n: u64) -> BigRational {
        let total = m.pow(n as u32);
        let mut balanced = 0u64;
        let mut counts = vec![0u64; m as usize];
        for mut idx in 0..total {
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..n {
                counts[(idx % m) as usize] += 1;
                idx /= m;
            }
            if counts.iter().all(|&c| c == n / m) {
                balanced += 1;
            }
        }
        BigRational::new(BigInt::from(balanced), BigInt::from(total))
    }

    #[test]
    fn small_values() {
        let half = BigRational::new(1.into(), 2.into());
        assert_eq!(equal_count_probability_exact(2, 2).unwrap(), half);
        let f66 = equal_count_probability_exact(6, 6).unwrap();
        assert_eq!(f66, BigRational::new(720.into(), 46_656.into()));
        assert_eq!(f66, brute_force(6, 6));
        assert!((f66.to_f64().unwrap() - 0.015432).abs() < 1e-6);
    }

    #[test]
    fn matches_enumeration() {
        for (m, n) in [(2, 2), (2, 4), (2, 10), (2, 18), (3, 6), (3, 9), (4, 8), (5, 5), (5, 10)] {
            assert_eq!(equal_count_probability_exact(m, n).unwrap(), brute_force(m, n), "m={m} n={n}");
        }
    }

    #[test]
    fn strictly_decreasing_in_n() {
        for m in 2..=4u64 {
            let values: Vec<_> = (1..=40)
                .map(|k| equal_count_probability_exact(m, m * k).unwrap())
                .collect();
            assert!(values.windows(2).all(|w| w[1] < w[0]));
            assert!(values.iter().all(|v| *v > BigRational::zero()));
        }
    }

    #[test]
    fn curve_region_below_point_two() {
        assert!(equal_count_probability_f64(2, 20).unwrap() < 0.2);
        assert!(equal_count_probability_f64(2, 18).unwrap() > 0.1);
    }

    #[test]
    fn stirling_asymptote() {
        let s = equal_count_probability_stirling(2, 1000).unwrap();
        assert!((s - 0.025_231).abs() < 1e-5, "{s}");
        assert!(equal_count_probability_stirling(2, 1_000_000).unwrap() < 1e-3);
        let exact = equal_count_probability_f64(2, 100).unwrap();
        let approx = equal_count_probability_stirling(2, 100).unwrap();
        assert!((approx - exact).abs() / exact < 0.05);
    }

    #[test]
    fn log_route_agrees_with_exact() {
        for (m, n) in [(2, 100), (3, 300), (6, 600)] {
            let exact = equal_count_probability_f64(m, n).unwrap();
            let ln = equal_count_probability_ln(m, n).unwrap();
            assert!((ln.exp() - exact).abs() / exact < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(equal_count_probability_exact(2, 3).is_err());
        assert!(equal_count_probability_exact(1, 3).is_err());
        assert!(equal_count_probability_exact(4, 2).is_err());
        assert!(equal_count_probability_stirling(3, 10).is_err());
    }
}
