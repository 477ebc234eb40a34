//! Digamma and log-gamma on the positive real axis.
//!
//! Both use the same scheme: shift the argument upward with the recurrence
//! until it is at least [`SHIFT_THRESHOLD`], then evaluate the asymptotic
//! (Stirling / Bernoulli) series. Seven correction terms at x >= 10 leave a
//! truncation error below 1e-16.

use std::f64::consts::PI;

const SHIFT_THRESHOLD: f64 = 10.0;

/// B_{2n} / (2n) for n = 1..=7.
const DIGAMMA_COEFFS: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2n} / (2n (2n - 1)) for n = 1..=7.
const LN_GAMMA_COEFFS: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
];

/// Digamma function ψ(x) for x > 0. Returns NaN outside the domain.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { f64::INFINITY } else { f64::NAN };
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < SHIFT_THRESHOLD {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Horner over powers of 1/x^2
    let mut series = 0.0;
    for c in DIGAMMA_COEFFS.iter().rev() {
        series = series * inv2 + c;
    }
    series *= inv2;
    shift + x.ln() - 0.5 / x - series
}

/// Natural log of the gamma function for x > 0. Returns NaN outside the domain.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return if x == f64::INFINITY { f64::INFINITY } else { f64::NAN };
    }
    let mut x = x;
    let mut prod = 1.0;
    while x < SHIFT_THRESHOLD {
        prod *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for c in LN_GAMMA_COEFFS.iter().rev() {
        series = series * inv2 + c;
    }
    series *= inv;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + series - prod.ln()
}

/// Log of the multivariate gamma function Γ_p(a).
pub fn ln_multivariate_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut acc = pf * (pf - 1.0) / 4.0 * PI.ln();
    for i in 1..=p {
        acc += ln_gamma(a + (1.0 - i as f64) / 2.0);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_at_integers() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
        // ψ(n+1) = ψ(n) + 1/n
        let mut expected = -EULER_GAMMA;
        for n in 1..30 {
            assert!((digamma(n as f64) - expected).abs() < 1e-13, "n={n}");
            expected += 1.0 / n as f64;
        }
    }

    #[test]
    fn digamma_half() {
        // ψ(1/2) = -γ - 2 ln 2
        let expected = -EULER_GAMMA - 2.0 * 2f64.ln();
        assert!((digamma(0.5) - expected).abs() < 1e-14);
    }

    #[test]
    fn digamma_matches_reference_library() {
        for i in 1..2000 {
            let x = i as f64 * 0.037;
            let ours = digamma(x);
            let reference = statrs::function::gamma::digamma(x);
            assert!(
                (ours - reference).abs() < 1e-12 * (1.0 + reference.abs()),
                "x={x} ours={ours} ref={reference}"
            );
        }
    }

    #[test]
    fn ln_gamma_matches_factorials_and_reference() {
        let mut fact: f64 = 1.0;
        for n in 1..25 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n={n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
        for i in 1..2000 {
            let x = i as f64 * 0.051;
            let reference = statrs::function::gamma::ln_gamma(x);
            assert!((ln_gamma(x) - reference).abs() < 1e-11 * (1.0 + reference.abs()));
        }
    }

    #[test]
    fn outside_domain_is_nan() {
        assert!(digamma(0.0).is_nan());
        assert!(digamma(-1.5).is_nan());
        assert!(ln_gamma(-2.0).is_nan());
    }

    #[test]
    fn multivariate_gamma_reduces_to_gamma_for_p1() {
        for a in [0.7, 1.0, 3.3, 12.5] {
            assert!((ln_multivariate_gamma(1, a) - ln_gamma(a)).abs() < 1e-15);
        }
        // Γ_2(a) = sqrt(pi) Γ(a) Γ(a - 1/2)
        let a: f64 = 3.0;
        let expected = 0.5 * PI.ln() + ln_gamma(a) + ln_gamma(a - 0.5);
        assert!((ln_multivariate_gamma(2, a) - expected).abs() < 1e-13);
    }
}
