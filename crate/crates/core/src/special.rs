//! Digamma, trigamma and log-gamma for positive real arguments.
//!
//! Each function shifts the argument above [`ASYMPTOTIC_MIN`] with the
//! recurrence relation and then sums the asymptotic expansion.

const ASYMPTOTIC_MIN: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// ψ(x) = d/dx ln Γ(x), for x > 0.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < ASYMPTOTIC_MIN {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2k / (2k x^2k), k = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// ψ'(x), for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < ASYMPTOTIC_MIN {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x²) + Σ B_2k / x^(2k+1)
    let series = inv
        * (1.0
            + inv2
                * (1.0 / 6.0
                    - inv2
                        * (1.0 / 30.0
                            - inv2
                                * (1.0 / 42.0
                                    - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * 691.0 / 2730.0))))));
    acc + series + 0.5 * inv2
}

/// ln Γ(x), for x > 0.
pub fn ln_gamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut shift = 0.0;
    while x < ASYMPTOTIC_MIN {
        shift += x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series - shift
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-13);
        assert!((digamma(2.0) - (1.0 - EULER_GAMMA)).abs() < 1e-13);
        assert!((digamma(0.5) + EULER_GAMMA + 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((digamma(2.0) - digamma(1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-12);
        assert!((trigamma(2.0) - (pi2_6 - 1.0)).abs() < 1e-12);
        assert!((trigamma(0.5) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-11);
    }

    #[test]
    fn ln_gamma_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12 * fact.ln().max(1.0));
            fact *= n as f64;
        }
        let sqrt_pi_ln = 0.5 * std::f64::consts::PI.ln();
        assert!((ln_gamma(0.5) - sqrt_pi_ln).abs() < 1e-12);
    }

    #[test]
    fn derivatives_agree_with_finite_differences() {
        for &x in &[1.0, 1.3, 2.7, 5.5, 9.99, 10.0, 42.0, 1e4] {
            let h = 1e-5 * x;
            let dlg = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!((dlg - digamma(x)).abs() < 1e-8 * digamma(x).abs().max(1.0), "x={x}");
            let ddg = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((ddg - trigamma(x)).abs() < 1e-7 * trigamma(x).max(1e-3), "x={x}");
        }
    }

    #[test]
    fn recurrence_holds() {
        for &x in &[1.0, 3.3, 9.5, 11.0, 250.0] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-12);
            assert!((trigamma(x) - trigamma(x + 1.0) - 1.0 / (x * x)).abs() < 1e-12);
            assert!((ln_gamma(x + 1.0) - ln_gamma(x) - x.ln()).abs() < 1e-11 * ln_gamma(x + 1.0).abs().max(1.0));
        }
    }
}
