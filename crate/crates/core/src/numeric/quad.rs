//! Gauss-Legendre quadrature rules.
//!
//! Nodes are computed on demand by Newton iteration on the Legendre
//! recurrence (no hard-coded tables) and are accurate to machine precision;
//! the 64-point rule used by the Spearman-rho integrals is cached.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Nodes are returned in increasing order.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let mut rule = vec![(0.0_f64, 0.0_f64); n];
    // Solve for the roots of P_n one at a time; symmetry gives the other half.
    for i in 0..n.div_ceil(2) {
        // Tricomi-style initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule[i] = (-x, w);
        rule[n - 1 - i] = (x, w);
    }
    // Odd rules: the middle node is exactly zero.
    if n % 2 == 1 {
        rule[n / 2].0 = 0.0;
    }
    rule
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0; // P_0
    let mut p = x; // P_1
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    let d = n as f64 * (p_prev - x * p) / (1.0 - x * x);
    (p, d)
}

/// The `n`-point rule mapped onto `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    gauss_legendre(n)
        .into_iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

/// Cached 64-point rule on `[0, 1]`; the workhorse for copula integrals.
pub fn gl64_unit() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_unit(64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn low_order_rules_match_published_nodes() {
        // 2-point rule: nodes at +-1/sqrt(3), weights 1.
        let r2 = gauss_legendre(2);
        assert_abs_diff_eq!(r2[1].0, 1.0 / 3.0_f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r2[0].1, 1.0, epsilon = 1e-15);

        // 6-point rule, standard table values.
        let r6 = gauss_legendre(6);
        assert_abs_diff_eq!(r6[5].0, 0.932_469_514_203_152_1, epsilon = 1e-14);
        assert_abs_diff_eq!(r6[4].0, 0.661_209_386_466_264_5, epsilon = 1e-14);
        assert_abs_diff_eq!(r6[3].0, 0.238_619_186_083_197_0, epsilon = 1e-14);
        assert_abs_diff_eq!(r6[5].1, 0.171_324_492_379_170_4, epsilon = 1e-14);
        assert_abs_diff_eq!(r6[4].1, 0.360_761_573_048_138_6, epsilon = 1e-14);
        assert_abs_diff_eq!(r6[3].1, 0.467_913_934_572_691_0, epsilon = 1e-14);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 2, 7, 20, 64] {
            let total: f64 = gauss_legendre(n).iter().map(|&(_, w)| w).sum();
            assert_abs_diff_eq!(total, 2.0, epsilon = 1e-13);
            let unit: f64 = gauss_legendre_unit(n).iter().map(|&(_, w)| w).sum();
            assert_abs_diff_eq!(unit, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn integrates_polynomials_exactly() {
        // n-point Gauss-Legendre is exact through degree 2n-1.
        let rule = gauss_legendre_unit(5);
        let integral: f64 = rule.iter().map(|&(x, w)| w * x.powi(9)).sum();
        assert_abs_diff_eq!(integral, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn integrates_smooth_transcendental() {
        // int_0^1 exp(x) dx = e - 1, spectral accuracy at 64 nodes.
        let integral: f64 = gl64_unit().iter().map(|&(x, w)| w * x.exp()).sum();
        assert_abs_diff_eq!(integral, std::f64::consts::E - 1.0, epsilon = 1e-14);
    }
}
