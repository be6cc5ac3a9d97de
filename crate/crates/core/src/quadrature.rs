//! Composite Simpson integration of functions given by their logarithm.
//!
//! The integrands handled here (likelihood ratios raised to large powers)
//! overflow `f64` long before their integrals do, so values are combined with
//! a log-sum-exp and the result is returned as a logarithm.

use crate::{Error, Result};

/// Refinement schedule for [`log_integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpsonSettings {
    /// log2 of the starting number of sub-intervals.
    pub initial_log2: u32,
    /// Refinement stops with an error past this many sub-intervals (log2).
    pub max_log2: u32,
    /// Successive estimates must agree to this relative tolerance.
    pub rel_tol: f64,
}

impl Default for SimpsonSettings {
    fn default() -> Self {
        Self {
            initial_log2: 12,
            max_log2: 24,
            rel_tol: 1e-8,
        }
    }
}

/// `log ∫_a^b exp(log_f(x)) dx` by composite Simpson with `n` (even) sub-intervals.
pub fn log_simpson<F: Fn(f64) -> f64>(log_f: F, a: f64, b: f64, n: usize) -> f64 {
    assert!(n >= 2 && n % 2 == 0, "Simpson needs an even interval count");
    let h = (b - a) / n as f64;
    let values: Vec<f64> = (0..=n).map(|i| log_f(a + i as f64 * h)).collect();
    combine(&values, h)
}

fn combine(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let weight = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += weight * (v - max).exp();
    }
    max + (sum * h / 3.0).ln()
}

/// Integrates with interval doubling until two successive log-estimates agree
/// within `settings.rel_tol`. `min_intervals` raises the starting resolution
/// for narrow integrands. Failing to converge is an error, never a truncation.
pub fn log_integrate<F: Fn(f64) -> f64>(
    log_f: F,
    a: f64,
    b: f64,
    min_intervals: usize,
    settings: &SimpsonSettings,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(Error::Domain(format!("bad integration range [{a}, {b}]")));
    }
    let mut n = (1usize << settings.initial_log2)
        .max(min_intervals)
        .next_power_of_two();
    let max_n = 1usize << settings.max_log2;
    let mut h = (b - a) / n as f64;
    let mut values: Vec<f64> = (0..=n).map(|i| log_f(a + i as f64 * h)).collect();
    let mut previous = combine(&values, h);
    if previous.is_nan() {
        return Err(Error::Numerical("integrand produced NaN".into()));
    }

    while n < max_n {
        // Reuse the current grid as the even points of the refined grid.
        n *= 2;
        h = (b - a) / n as f64;
        let mut refined = Vec::with_capacity(n + 1);
        for (i, &v) in values.iter().enumerate() {
            refined.push(v);
            if i + 1 < values.len() {
                refined.push(log_f(a + (2 * i + 1) as f64 * h));
            }
        }
        values = refined;
        let current = combine(&values, h);
        if current.is_nan() {
            return Err(Error::Numerical("integrand produced NaN".into()));
        }
        if previous == current
            || (current - previous).abs() < settings.rel_tol
            || (current == f64::NEG_INFINITY && previous == f64::NEG_INFINITY)
        {
            return Ok(current);
        }
        previous = current;
    }
    Err(Error::Numerical(format!(
        "quadrature did not converge within 2^{} intervals",
        settings.max_log2
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_standard_normal_density() {
        let log_pdf = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let v = log_integrate(log_pdf, -40.0, 40.0, 0, &SimpsonSettings::default()).unwrap();
        assert!(v.abs() < 1e-10, "{v}");
    }

    #[test]
    fn survives_huge_exponents() {
        // exp(1000 - x^2/2) integrates to exp(1000) * sqrt(2 pi)
        let v = log_integrate(|x| 1000.0 - 0.5 * x * x, -50.0, 50.0, 0, &SimpsonSettings::default())
            .unwrap();
        let expected = 1000.0 + 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-9);
    }

    #[test]
    fn polynomial_is_exact() {
        // Simpson is exact on cubics: ∫_0^2 (x^3 + 1) dx = 6
        let v = log_simpson(|x: f64| (x * x * x + 1.0).ln(), 0.0, 2.0, 2);
        assert!((v.exp() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let settings = SimpsonSettings {
            initial_log2: 2,
            max_log2: 3,
            rel_tol: 1e-14,
        };
        let r = log_integrate(|x: f64| (50.0 * x).sin().abs().ln(), 0.0, 3.0, 0, &settings);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }
}
