//! Closed-form acquisition and constraint-handling functions of a Gaussian
//! posterior. All functions take predictive means and standard deviations
//! on the original target scale.

use alloc::format;

use core::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::{Error, Result};

/// Smallest standard deviation used wherever `sigma` divides.
pub const STDDEV_FLOOR: f64 = 1e-10;
pub const DEFAULT_XI: f64 = 0.001;
pub const DEFAULT_NU: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.05;

/// Constants shared by the improvement-based and confidence-bound criteria.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcqContext {
    /// Incumbent (best) objective value.
    pub tau: f64,
    /// Exploration jitter subtracted from `tau`.
    pub xi: f64,
    /// Outer iteration counter, 1-based.
    pub t: usize,
    /// Input dimension.
    pub d: usize,
    pub nu: f64,
    pub delta: f64,
}

impl AcqContext {
    pub fn new(tau: f64, t: usize, d: usize) -> Self {
        Self {
            tau,
            xi: DEFAULT_XI,
            t,
            d,
            nu: DEFAULT_NU,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.xi >= 0.0 && self.nu > 0.0 && self.delta > 0.0 && self.delta < 1.0 && self.t >= 1;
        if ok && self.tau.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid acquisition context {self:?}")))
        }
    }
}

#[inline]
fn floored(stddev: f64) -> f64 {
    stddev.max(STDDEV_FLOOR)
}

/// Standard normal CDF via `erfc`, accurate far into both tails.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * PI)
}

#[inline]
fn improvement_z(mean: f64, stddev: f64, ctx: &AcqContext) -> f64 {
    (ctx.tau - ctx.xi - mean) / floored(stddev)
}

/// Probability of improvement `Phi(lambda)`, `lambda = (tau - xi - mean) / stddev`.
pub fn pi(mean: f64, stddev: f64, ctx: &AcqContext) -> f64 {
    std_normal_cdf(improvement_z(mean, stddev, ctx))
}

/// Expected improvement `stddev * (lambda Phi(lambda) + phi(lambda))`.
pub fn ei(mean: f64, stddev: f64, ctx: &AcqContext) -> f64 {
    let s = floored(stddev);
    let z = improvement_z(mean, stddev, ctx);
    (s * (z * std_normal_cdf(z) + std_normal_pdf(z))).max(0.0)
}

/// Confidence multiplier `sqrt(2 nu ln(t^(d/2+2) pi^2 / (3 delta)))`.
pub fn beta_schedule(ctx: &AcqContext) -> f64 {
    let t = ctx.t.max(1) as f64;
    let exponent = ctx.d as f64 / 2.0 + 2.0;
    let arg = exponent * libm::log(t) + libm::log(PI * PI / (3.0 * ctx.delta));
    libm::sqrt((2.0 * ctx.nu * arg).max(0.0))
}

pub fn lcb(mean: f64, stddev: f64, beta: f64) -> f64 {
    mean - beta * stddev
}

fn check_lengths(means: &[f64], stddevs: &[f64]) -> Result<()> {
    if means.len() != stddevs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} constraint means but {} stddevs",
            means.len(),
            stddevs.len()
        )));
    }
    Ok(())
}

/// Probability that every constraint is below zero, assuming independence.
pub fn pf(means: &[f64], stddevs: &[f64]) -> Result<f64> {
    check_lengths(means, stddevs)?;
    if means.is_empty() {
        return Err(Error::InvalidArgument(
            "probability of feasibility needs at least one constraint".into(),
        ));
    }
    Ok(means
        .iter()
        .zip(stddevs)
        .map(|(m, s)| std_normal_cdf(-m / floored(*s)))
        .product())
}

/// `sum_i max(0, mu_i)`.
pub fn naive_violation(means: &[f64]) -> f64 {
    means.iter().map(|m| m.max(0.0)).sum()
}

/// `sum_i max(0, mu_i / sigma_i)`.
pub fn adaptive_violation(means: &[f64], stddevs: &[f64]) -> Result<f64> {
    check_lengths(means, stddevs)?;
    Ok(means.iter().zip(stddevs).map(|(m, s)| (m / floored(*s)).max(0.0)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ctx(tau: f64, xi: f64) -> AcqContext {
        AcqContext {
            xi,
            ..AcqContext::new(tau, 1, 1)
        }
    }

    #[test]
    fn normal_reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_relative_eq!(std_normal_pdf(0.0), 0.398_942_280_401_432_7, epsilon = 1e-15);
        // reference values from a 50-digit erf evaluation
        assert_relative_eq!(std_normal_cdf(1.959964), 0.975_000_000_903_557_6, epsilon = 1e-12);
        assert!(std_normal_cdf(-10.0) > 0.0 && std_normal_cdf(-10.0) < 1e-22);
        assert_relative_eq!(std_normal_cdf(-10.0), 7.619_853_024_160_527e-24, max_relative = 1e-10);
    }

    #[test]
    fn pi_reference_values() {
        assert_relative_eq!(pi(0.999, 0.5, &ctx(1.0, 0.001)), 0.5, epsilon = 1e-12);
        assert!(pi(-4.0, 0.5, &ctx(1.0, 0.0)) >= 1.0 - 1e-15);
        assert_relative_eq!(
            pi(0.499, 1.0, &ctx(0.0, 0.001)),
            0.308_537_538_725_986_9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ei_reference_values() {
        assert_relative_eq!(
            ei(0.999, 1.0, &ctx(1.0, 0.001)),
            0.398_942_280_401_432_7,
            epsilon = 1e-12
        );
        assert_eq!(ei(2.0, 0.0, &ctx(1.0, 0.001)), 0.0);
        assert_relative_eq!(ei(-1.0, 1.0, &ctx(0.0, 0.0)), 1.083_315_470_587_686_3, epsilon = 1e-12);
    }

    #[test]
    fn beta_reference_values() {
        let c = AcqContext::new(0.0, 1, 1);
        assert_relative_eq!(beta_schedule(&c), 2.046_113_329_360_004_4, epsilon = 1e-10);
        let doubled = AcqContext { nu: 1.0, ..c };
        assert_relative_eq!(
            beta_schedule(&doubled),
            beta_schedule(&c) * 2f64.sqrt(),
            epsilon = 1e-12
        );
        let mut prev = 0.0;
        for t in 1..50 {
            let b = beta_schedule(&AcqContext { t, ..c });
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn lcb_values() {
        assert_eq!(lcb(1.0, 2.0, 2.0), -3.0);
        assert_eq!(lcb(1.0, 2.0, 0.0), 1.0);
        assert_eq!(lcb(1.0, 0.0, 5.0), 1.0);
    }

    #[test]
    fn pf_values() {
        assert_eq!(pf(&[0.0, 0.0], &[0.3, 7.0]).unwrap(), 0.25);
        assert!(pf(&[1.0, -3.0], &[0.1, 1.0]).unwrap() <= 1e-15);
        assert_relative_eq!(pf(&[-1.0], &[1.0]).unwrap(), 0.841_344_746_068_542_9, epsilon = 1e-12);
        assert!(pf(&[0.0], &[]).is_err());
        assert!(pf(&[], &[]).is_err());
    }

    #[test]
    fn violation_values() {
        assert_eq!(naive_violation(&[-1.0, 2.0, 3.0]), 5.0);
        assert_eq!(naive_violation(&[-1.0, -0.5]), 0.0);
        assert_eq!(naive_violation(&[0.5]), 0.5);
        assert_eq!(adaptive_violation(&[2.0, -1.0], &[4.0, 1.0]).unwrap(), 0.5);
        assert_eq!(adaptive_violation(&[0.0, -1.0], &[4.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(
            adaptive_violation(&[1.0, 1.0], &[0.1, 10.0]).unwrap(),
            10.1,
            epsilon = 1e-12
        );
        assert!(adaptive_violation(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_stddev_uses_floor() {
        let c = ctx(1.0, 0.001);
        let v = adaptive_violation(&[1e-3], &[0.0]).unwrap();
        assert!(v.is_finite() && v > 1e6);
        assert_eq!(pi(1.0, 0.0, &c), 0.0);
        assert_eq!(ei(1.0, 0.0, &c), 0.0);
        assert_relative_eq!(ei(0.5, 0.0, &c), 0.499, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn ei_non_negative(mean in -50.0f64..50.0, sd in 0.0f64..20.0, tau in -50.0f64..50.0) {
            prop_assert!(ei(mean, sd, &ctx(tau, 0.001)) >= 0.0);
        }

        // domains keep |lambda| small enough that neither value saturates
        #[test]
        fn improvement_monotone_in_mean(mean in -3.0f64..3.0, dm in 1e-3f64..1.0, sd in 1.0f64..5.0, tau in -3.0f64..3.0) {
            let c = ctx(tau, 0.001);
            prop_assert!(pi(mean - dm, sd, &c) >= pi(mean, sd, &c));
            prop_assert!(ei(mean - dm, sd, &c) > ei(mean, sd, &c));
        }

        #[test]
        fn pf_in_unit_interval_and_monotone(m1 in -5.0f64..5.0, m2 in -5.0f64..5.0, s1 in 0.7f64..3.0, s2 in 0.7f64..3.0, dm in 0.01f64..1.0) {
            let p = pf(&[m1, m2], &[s1, s2]).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert!(pf(&[m1 + dm, m2], &[s1, s2]).unwrap() <= p);
        }

        #[test]
        fn violations_zero_iff_feasible_means(ms in proptest::collection::vec(-3.0f64..3.0, 1..5)) {
            let sds = vec![0.7; ms.len()];
            let all_ok = ms.iter().all(|m| *m <= 0.0);
            prop_assert_eq!(naive_violation(&ms) == 0.0, all_ok);
            prop_assert_eq!(adaptive_violation(&ms, &sds).unwrap() == 0.0, all_ok);
        }

        #[test]
        fn shift_invariance(mean in -5.0f64..5.0, sd in 0.05f64..5.0, tau in -5.0f64..5.0, c in -10.0f64..10.0) {
            let a = ctx(tau, 0.001);
            let b = ctx(tau + c, 0.001);
            prop_assert!((pi(mean, sd, &a) - pi(mean + c, sd, &b)).abs() <= 1e-12);
            prop_assert!((ei(mean, sd, &a) - ei(mean + c, sd, &b)).abs() <= 1e-12);
            prop_assert!((lcb(mean + c, sd, 2.0) - lcb(mean, sd, 2.0) - c).abs() <= 1e-12);
        }
    }
}
