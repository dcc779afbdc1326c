use matern_bvm::kernels::{bessel_k, matern_correlation, spectral_density, MaternSpec};
use proptest::prelude::*;

/// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt` by the trapezoid rule,
/// which converges geometrically for this analytic, even integrand.
fn bessel_k_quadrature(nu: f64, x: f64) -> f64 {
    let t_max = (800.0 / x + 1.0).acosh();
    let h = 1e-3;
    let m = (t_max / h).ceil() as usize;
    let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
    let mut s = 0.5 * f(0.0);
    for i in 1..=m {
        s += f(i as f64 * h);
    }
    s * h
}

fn closed_form(nu: f64, x: f64) -> f64 {
    let base = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
    match nu {
        0.5 => base,
        1.5 => base * (1.0 + 1.0 / x),
        2.5 => base * (1.0 + 3.0 / x + 3.0 / (x * x)),
        _ => unreachable!(),
    }
}

#[test]
fn half_integer_closed_forms_match_quadrature() {
    for nu in [0.5, 1.5, 2.5] {
        for x in [0.05, 0.3, 1.0, 2.0, 5.0, 12.0, 30.0] {
            let q = bessel_k_quadrature(nu, x);
            let c = closed_form(nu, x);
            let k = bessel_k(nu, x).unwrap();
            assert!(((c - q) / q).abs() < 1e-10, "closed form nu={nu} x={x}: {c} vs {q}");
            assert!(((k - q) / q).abs() < 1e-10, "bessel_k nu={nu} x={x}: {k} vs {q}");
        }
    }
}

#[test]
fn general_order_matches_quadrature() {
    for nu in [0.2, 0.75, 1.0, 1.3, 2.0, 3.7] {
        for x in [0.1, 0.9, 1.99, 2.0, 4.5, 20.0] {
            let q = bessel_k_quadrature(nu, x);
            let k = bessel_k(nu, x).unwrap();
            assert!(((k - q) / q).abs() < 1e-10, "nu={nu} x={x}: {k} vs {q}");
        }
    }
}

#[test]
fn spec_examples() {
    assert!((bessel_k(0.5, 1.0).unwrap() - 0.4610685).abs() < 1e-7);
    let q = bessel_k_quadrature(1.5, 2.0);
    assert!(((bessel_k(1.5, 2.0).unwrap() - q) / q).abs() < 1e-10);
    let k50 = bessel_k(0.5, 50.0).unwrap();
    let want = (std::f64::consts::PI / 100.0).sqrt() * (-50f64).exp();
    assert!(((k50 - want) / want).abs() < 1e-12);
    assert!((matern_correlation(0.5, 0.5, 1.0).unwrap() - 0.6065307).abs() < 1e-7);
    assert!((matern_correlation(1.0, 1.5, 1.0).unwrap() - 0.7357589).abs() < 1e-7);
    assert_eq!(matern_correlation(3.0, 0.8, 0.0).unwrap(), 1.0);
}

#[test]
fn correlation_strictly_decreasing() {
    for nu in [0.5, 0.8, 1.5, 2.5, 3.2] {
        let mut prev = 1.0 + 1e-12;
        for i in 0..100 {
            let h = 0.01 + i as f64 * 0.05;
            let c = matern_correlation(1.7, nu, h).unwrap();
            assert!(c < prev, "nu={nu} h={h}");
            prev = c;
        }
    }
}

#[test]
fn spectral_density_integrates_to_variance() {
    // int_R f(w) dw over d = 1 with w = tan(u) to map onto a finite range
    for (sigma2, alpha, nu) in [(1.0, 1.0, 0.5), (2.0, 0.7, 1.5), (0.6, 3.0, 2.5), (1.3, 1.1, 0.9)] {
        let spec = MaternSpec::new(sigma2, alpha, nu).unwrap();
        let m = 200_000;
        let h = std::f64::consts::FRAC_PI_2 / m as f64;
        let mut s = 0.0;
        for i in 0..m {
            let u = (i as f64 + 0.5) * h;
            let w = u.tan();
            s += spectral_density(&spec, 1, w).unwrap() / (u.cos() * u.cos());
        }
        let total = 2.0 * s * h;
        assert!((total - sigma2).abs() < 1e-6, "{total} vs {sigma2}");
    }
}

#[test]
fn spectral_examples() {
    let s1 = MaternSpec::new(1.0, 1.0, 0.5).unwrap();
    assert!((spectral_density(&s1, 1, 0.0).unwrap() - 1.0 / std::f64::consts::PI).abs() < 1e-12);
    let s2 = MaternSpec::new(2.0, 1.0, 1.5).unwrap();
    let s1b = MaternSpec::new(1.0, 1.0, 1.5).unwrap();
    for d in 1..=3 {
        let a = spectral_density(&s2, d, 0.8).unwrap();
        let b = spectral_density(&s1b, d, 0.8).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-14 * a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn exponential_case(alpha in 1e-3f64..50.0, h in 0.0f64..5.0) {
        let c = matern_correlation(alpha, 0.5, h).unwrap();
        let e = (-alpha * h).exp();
        prop_assert!(c == e || ((c - e) / e).abs() < 1e-12);
    }

    #[test]
    fn half_integer_correlations(alpha in 1e-2f64..20.0, h in 1e-3f64..3.0) {
        let z = alpha * h;
        let c15 = matern_correlation(alpha, 1.5, h).unwrap();
        let c25 = matern_correlation(alpha, 2.5, h).unwrap();
        let w15 = (1.0 + z) * (-z).exp();
        let w25 = (1.0 + z + z * z / 3.0) * (-z).exp();
        prop_assert!(((c15 - w15) / w15).abs() < 1e-10);
        prop_assert!(((c25 - w25) / w25).abs() < 1e-10);
    }

    #[test]
    fn correlation_in_unit_interval(alpha in 1e-3f64..100.0, nu in 0.1f64..4.0, h in 0.0f64..10.0) {
        let c = matern_correlation(alpha, nu, h).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn theta_representation(sigma2 in 1e-3f64..1e3, alpha in 1e-3f64..1e3, nu in 0.1f64..3.0) {
        let s = MaternSpec::new(sigma2, alpha, nu).unwrap();
        let back = MaternSpec::from_theta(s.theta(), alpha, nu).unwrap();
        prop_assert!(((back.sigma2() - sigma2) / sigma2).abs() < 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// Spectral densities of a matched-theta pair have ratio between
    /// `(alpha0/alpha)^(2 nu + d)` and 1.
    #[test]
    fn spectral_ratio_bounds(alpha in 0.01f64..20.0, alpha0 in 0.01f64..20.0, w in 0.0f64..1e3, d in 1usize..=3, nu in prop::sample::select(vec![0.5, 1.5, 2.5, 0.8])) {
        let theta = 0.5;
        let f = spectral_density(&MaternSpec::from_theta(theta, alpha, nu).unwrap(), d, w).unwrap();
        let f0 = spectral_density(&MaternSpec::from_theta(theta, alpha0, nu).unwrap(), d, w).unwrap();
        let b = (alpha0 / alpha).powf(2.0 * nu + d as f64);
        let r = f / f0;
        prop_assert!(r >= b.min(1.0) * (1.0 - 1e-10) && r <= b.max(1.0) * (1.0 + 1e-10), "ratio {} bound {}", r, b);
    }
}
