//! Gauss–Legendre rules on the reference interval `[0, 1]`.

use crate::error::{Error, Result};

/// Largest Gauss rule used for integrands that are not polynomial or whose
/// degree exceeds the cap. Nine points integrate degree 16 (indeed 17) exactly.
pub const MAX_GAUSS_POINTS: usize = 9;

/// Integrand degree covered exactly before the cap kicks in.
pub const CAPPED_EXACTNESS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Highest polynomial degree integrated exactly.
    pub fn exactness(&self) -> usize {
        2 * self.points.len() - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let h = b - a;
        h * self.iter().map(|(x, w)| w * f(a + h * x)).sum::<f64>()
    }
}

/// The `n`-point Gauss–Legendre rule mapped to `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::invalid("a Gauss rule needs at least one point"));
    }
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Newton iteration on P_n from the Tricomi-style initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the i-th largest root on [-1, 1].
        points[n - 1 - i] = 0.5 * (1.0 + x);
        points[i] = 0.5 * (1.0 - x);
        weights[n - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.5;
    }
    Ok(QuadratureRule { points, weights })
}

/// Legendre polynomial P_n and its derivative at `x` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Number of Gauss points for an integrand of the given polynomial degree.
///
/// Returns the smallest `n` with `2n - 1 >= degree`, capped at
/// [`MAX_GAUSS_POINTS`] so that integrands above degree 16 (or non-polynomial
/// integrands, passed as a large degree) use the capped rule.
pub fn quadrature_order_policy(max_integrand_degree: usize) -> usize {
    (max_integrand_degree / 2 + 1).clamp(1, MAX_GAUSS_POINTS)
}

/// Rule chosen by [`quadrature_order_policy`].
pub fn policy_rule(max_integrand_degree: usize) -> QuadratureRule {
    gauss_legendre(quadrature_order_policy(max_integrand_degree)).expect("policy yields n >= 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_is_midpoint() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.points(), &[0.5]);
        assert_eq!(r.weights(), &[1.0]);
    }

    #[test]
    fn two_point_closed_form() {
        let r = gauss_legendre(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r.points()[0] - 0.5 * (1.0 - s)).abs() < 1e-15);
        assert!((r.points()[1] - 0.5 * (1.0 + s)).abs() < 1e-15);
        assert!((r.weights()[0] - 0.5).abs() < 1e-15);
        assert!((r.weights()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn five_point_ninth_power() {
        let r = gauss_legendre(5).unwrap();
        let v = r.integrate(0.0, 1.0, |x| x.powi(9));
        assert!((v - 0.1).abs() < 1e-14, "{v}");
    }

    #[test]
    fn zero_points_rejected() {
        assert!(gauss_legendre(0).is_err());
    }

    #[test]
    fn monomials_exact_up_to_rule_degree() {
        for n in 1..=12 {
            let r = gauss_legendre(n).unwrap();
            let total: f64 = r.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-14);
            assert!(r.weights().iter().all(|&w| w > 0.0));
            assert!(r.points().windows(2).all(|w| w[0] < w[1]));
            for k in 0..=(2 * n - 1) {
                let v = r.integrate(0.0, 1.0, |x| x.powi(k as i32));
                assert!((v - 1.0 / (k as f64 + 1.0)).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn policy_examples() {
        assert_eq!(quadrature_order_policy(0), 1);
        assert_eq!(quadrature_order_policy(1), 1);
        assert_eq!(quadrature_order_policy(2), 2);
        assert_eq!(quadrature_order_policy(3), 2);
        assert_eq!(quadrature_order_policy(16), 9);
        assert_eq!(quadrature_order_policy(40), 9);
        for d in 0..=16 {
            let n = quadrature_order_policy(d);
            assert!(2 * n - 1 >= d);
            assert!(n == 1 || 2 * (n - 1) - 1 < d, "not minimal for degree {d}");
        }
    }

    #[test]
    fn capped_rule_on_sech_profile_matches_reference() {
        // Non-polynomial integrand over a soliton-scale element, composite over
        // a refined mesh so the capped rule is in its asymptotic regime.
        let capped = policy_rule(40);
        let reference = gauss_legendre(64).unwrap();
        let f = |x: f64| {
            let s = 1.0 / x.cosh();
            4.0 * s * s
        };
        let mut errors = Vec::new();
        for m in [4usize, 8, 16] {
            let h = 8.0 / m as f64;
            let (mut a, mut b) = (0.0, 0.0);
            for e in 0..m {
                let x0 = -4.0 + e as f64 * h;
                a += capped.integrate(x0, x0 + h, f);
                b += reference.integrate(x0, x0 + h, f);
            }
            errors.push((a - b).abs());
        }
        assert!(errors[2] < 1e-13, "{errors:?}");
        assert!(errors[0] > errors[1] || errors[0] < 1e-13);
    }
}
