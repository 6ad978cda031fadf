//! Log-gamma, digamma and trigamma, and their multivariate sums as they
//! appear in inverse-Wishart normalizers and entropies.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lanczos coefficients (g = 7, 9 terms).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `log Γ(x)` for `x > 0`.
pub fn ln_gamma<T: Real>(x: T) -> Result<T> {
    if !(x > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "ln_gamma requires a positive argument, got {x:e}"
        )));
    }
    let half = T::of(0.5);
    if x < half {
        // reflection keeps the Lanczos argument comfortably large
        let pi = T::pi();
        let refl = (pi / (pi * x).sin()).ln();
        return Ok(refl - ln_gamma(T::one() - x)?);
    }
    let z = x - T::one();
    let mut a = T::of(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += T::of(c) / (z + T::of_usize(i));
    }
    let g = T::of(7.5);
    let t = z + g;
    Ok(T::of(0.918_938_533_204_672_78) + (z + half) * t.ln() - t + a.ln())
}

/// Digamma `ψ(x) = d/dx log Γ(x)` for `x > 0`.
pub fn digamma<T: Real>(x: T) -> Result<T> {
    if !(x > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "digamma requires a positive argument, got {x:e}"
        )));
    }
    let mut x = x;
    let mut acc = T::zero();
    let shift = T::of(10.0);
    while x < shift {
        acc -= T::one() / x;
        x += T::one();
    }
    let inv = T::one() / x;
    let inv2 = inv * inv;
    // asymptotic series through x⁻¹²; truncation ~2e-14 once x ≥ 10
    let series = T::of(1.0 / 12.0)
        - inv2
            * (T::of(1.0 / 120.0)
                - inv2
                    * (T::of(1.0 / 252.0)
                        - inv2 * (T::of(1.0 / 240.0) - inv2 * T::of(1.0 / 132.0))));
    Ok(acc + x.ln() - inv * T::of(0.5) - inv2 * series)
}

/// Trigamma `ψ′(x)` for `x > 0`.
pub fn trigamma<T: Real>(x: T) -> Result<T> {
    if !(x > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "trigamma requires a positive argument, got {x:e}"
        )));
    }
    let mut x = x;
    let mut acc = T::zero();
    let shift = T::of(10.0);
    while x < shift {
        acc += T::one() / (x * x);
        x += T::one();
    }
    let inv = T::one() / x;
    let inv2 = inv * inv;
    let series = T::one()
        + inv * T::of(0.5)
        + inv2
            * (T::of(1.0 / 6.0)
                - inv2
                    * (T::of(1.0 / 30.0) - inv2 * (T::of(1.0 / 42.0) - inv2 * T::of(1.0 / 30.0))));
    Ok(acc + inv * series)
}

/// Multivariate log-gamma:
/// `log Γ_p(a) = p(p−1)/4·log π + Σ_{j=1}^{p} log Γ(a + (1−j)/2)`.
/// Requires `a > (p−1)/2`.
pub fn log_multigamma<T: Real>(p: usize, a: T) -> Result<T> {
    let lim = T::of_usize(p.saturating_sub(1)) * T::of(0.5);
    if !(a > lim) {
        return Err(Error::InvalidDof {
            dof: (a + a).as_f64(),
            min: T::of_usize(p - 1).as_f64(),
            order: p,
        });
    }
    let mut acc = T::of_usize(p * (p - 1)) * T::of(0.25) * T::pi().ln();
    for j in 1..=p {
        acc += ln_gamma(a + (T::one() - T::of_usize(j)) * T::of(0.5))?;
    }
    Ok(acc)
}

/// `Σ_{i=1}^{p} ψ((ν − p + i)/2)`, the inverse-Wishart log-determinant
/// expectation sum. Requires `ν > p − 1`.
pub fn digamma_sum<T: Real>(p: usize, nu: T) -> Result<T> {
    let mut acc = T::zero();
    for i in 1..=p {
        let arg = (nu - T::of_usize(p) + T::of_usize(i)) * T::of(0.5);
        acc += digamma(arg)?;
    }
    Ok(acc)
}

/// `Σ_{i=1}^{p} ψ′((ν − p + i)/2)`, the derivative companion of
/// [`digamma_sum`] (up to the inner factor ½).
pub fn trigamma_sum<T: Real>(p: usize, nu: T) -> Result<T> {
    let mut acc = T::zero();
    for i in 1..=p {
        let arg = (nu - T::of_usize(p) + T::of_usize(i)) * T::of(0.5);
        acc += trigamma(arg)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0f64).unwrap().abs() < 1e-13);
        assert!(ln_gamma(2.0f64).unwrap().abs() < 1e-13);
        let half = ln_gamma(0.5f64).unwrap();
        assert!((half - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
        // Γ(7) = 720
        assert!((ln_gamma(7.0f64).unwrap() - 720.0f64.ln()).abs() < 1e-12);
        assert!(ln_gamma(-1.0f64).is_err());
    }

    #[test]
    fn digamma_known_values() {
        // ψ(1) = −γ
        assert!((digamma(1.0f64).unwrap() + 0.577_215_664_901_532_9).abs() < 1e-12);
        // ψ(x+1) = ψ(x) + 1/x
        let x = 3.7f64;
        assert!((digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x).abs() < 1e-12);
    }

    #[test]
    fn digamma_is_derivative_of_ln_gamma() {
        for &x in &[0.3f64, 1.1, 4.5, 27.0, 1803.5] {
            let h = 1e-6 * x.max(1.0);
            let fd = (ln_gamma(x + h).unwrap() - ln_gamma(x - h).unwrap()) / (2.0 * h);
            let psi = digamma(x).unwrap();
            assert!((fd - psi).abs() <= 1e-7 * psi.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn trigamma_known_values() {
        // ψ′(1) = π²/6
        let expect = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0f64).unwrap() - expect).abs() < 1e-12);
        // derivative of digamma
        for &x in &[0.7f64, 2.3, 11.0, 431.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            assert!((fd - trigamma(x).unwrap()).abs() <= 1e-6 * trigamma(x).unwrap());
        }
    }

    #[test]
    fn log_multigamma_reduces_to_ln_gamma() {
        for &a in &[0.8f64, 2.0, 9.5] {
            assert!((log_multigamma(1, a).unwrap() - ln_gamma(a).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn log_multigamma_order_two_expansion() {
        let a = 2.0f64;
        let expect =
            std::f64::consts::PI.ln() / 2.0 + ln_gamma(2.0f64).unwrap() + ln_gamma(1.5f64).unwrap();
        assert!((log_multigamma(2, a).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn digamma_sum_is_derivative_of_multigamma() {
        // d/dν log Γ_p(ν/2) = ½·Σ ψ((ν−p+i)/2)
        for (p, nu) in [(3usize, 7.5f64), (6, 9.25), (12, 40.0)] {
            let h = 1e-5;
            let fd = (log_multigamma(p, (nu + h) / 2.0).unwrap()
                - log_multigamma(p, (nu - h) / 2.0).unwrap())
                / (2.0 * h);
            let analytic = digamma_sum(p, nu).unwrap() / 2.0;
            assert!(
                (fd - analytic).abs() <= 1e-7 * analytic.abs().max(1.0),
                "p={p} nu={nu}"
            );
        }
    }

    #[test]
    fn dof_domain_is_enforced() {
        assert!(digamma_sum(4, 3.0f64).is_err());
        assert!(digamma_sum(4, 3.0 + 1e-9f64).is_ok());
        assert!(log_multigamma(4, 1.5f64).is_err());
        assert!(trigamma_sum(4, 2.5f64).is_err());
    }
}
