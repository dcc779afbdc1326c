use matern_bvm::experiments::{gen_perturbed_grid, log_grid, sample_ou_path};
use matern_bvm::gp::{
    build_correlation_matrix, corr_summary, factorize, log_likelihood, ou_log_det_equispaced, ou_loglik_fast,
    ou_precision_equispaced, ou_profile_loglik, ou_stats, ou_stats_from_values, profile_stats, profile_stats_with,
    Design, GpDataset, LikelihoodRoute,
};
use matern_bvm::kernels::{matern_correlation, MaternSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ou_data(n: usize, seed: u64) -> GpDataset {
    let truth = MaternSpec::new(1.0, 0.5, 0.5).unwrap();
    sample_ou_path(&gen_perturbed_grid(1, n, seed).unwrap(), &truth, seed + 1000).unwrap()
}

#[test]
fn theta_tilde_monotone_in_alpha() {
    let grid = log_grid(1e-3, 1e3, 50);
    for seed in 0..20u64 {
        let n = 10 + 7 * seed as usize;
        let data = ou_data(n, seed);
        let tt: Vec<f64> = grid
            .iter()
            .map(|&a| profile_stats_with(&data, a, 0.5, LikelihoodRoute::OuMarkov).unwrap().theta_tilde)
            .collect();
        for w in tt.windows(2) {
            assert!(w[0] <= w[1] + 1e-10 * w[1], "seed {seed}: {} > {}", w[0], w[1]);
        }
    }
}

#[test]
fn theta_tilde_monotone_dense_general_nu() {
    // dense route on a moderate alpha range where R_alpha stays well conditioned
    let grid = log_grid(0.5, 200.0, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let pts: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
        let x: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
        let data = GpDataset::from_unsorted(1, 1.0, pts, x).unwrap();
        let tt: Vec<f64> = grid.iter().map(|&a| profile_stats(&data, a, 1.5).unwrap().theta_tilde).collect();
        for w in tt.windows(2) {
            assert!(w[0] <= w[1] + 1e-10 * w[1]);
        }
    }
}

#[test]
fn ou_closed_forms_match_dense() {
    for n in 2..=10 {
        let design = Design::equispaced(n).unwrap();
        for alpha in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let r = build_correlation_matrix(&design, alpha, 0.5).unwrap();
            let inv = r.clone().try_inverse().unwrap();
            let p = ou_precision_equispaced(n, alpha).unwrap();
            let err = (&inv - &p).abs().max();
            assert!(err < 1e-10, "n={n} alpha={alpha}: {err}");
            let ld = factorize(&r, 1.0).unwrap().log_det_corr();
            assert!((ld - ou_log_det_equispaced(n, alpha).unwrap()).abs() < 1e-10);
        }
    }
}

#[test]
fn ou_profile_loglik_matches_dense_up_to_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [5, 20, 100] {
        let design = Design::equispaced(n).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let data = GpDataset::new(design, x.clone()).unwrap();
        let stats = ou_stats_from_values(&x);
        let diff = |a: f64| ou_profile_loglik(&stats, n, a).unwrap() - profile_stats(&data, a, 0.5).unwrap().profile_loglik;
        let c = diff(1.0);
        for a in [0.05, 0.3, 2.0, 7.0] {
            assert!((diff(a) - c).abs() < 1e-8, "n={n} alpha={a}");
        }
    }
}

#[test]
fn ou_profile_loglik_limits() {
    let x = [0.5, -0.2, 0.1, 0.9, 1.2];
    let s = ou_stats_from_values(&x);
    assert!(ou_profile_loglik(&s, 5, 1e-12).unwrap() < ou_profile_loglik(&s, 5, 1e-3).unwrap());
    assert!(ou_profile_loglik(&s, 5, 1e-300).unwrap() < -100.0);
    let c = ou_stats_from_values(&[2.0; 6]);
    for a in log_grid(1e-4, 1e4, 40) {
        assert!(ou_profile_loglik(&c, 6, a).unwrap().is_finite());
    }
}

#[test]
fn markov_route_matches_dense_on_perturbed_grid() {
    let data = ou_data(200, 3);
    for (s2, a) in [(1.0, 0.5), (0.3, 2.0), (4.0, 0.05)] {
        let dense = log_likelihood(&data, &MaternSpec::new(s2, a, 0.5).unwrap()).unwrap();
        let fast = ou_loglik_fast(&data, s2, a).unwrap();
        assert!((dense - fast).abs() < 1e-8, "{dense} vs {fast}");
    }
}

#[test]
fn profile_identities() {
    let data = ou_data(40, 9);
    for a in [0.2, 1.0, 5.0] {
        let p = profile_stats(&data, a, 0.5).unwrap();
        assert!((p.theta_tilde - p.sigma2_tilde * a).abs() < 1e-12 * p.theta_tilde);
        let l = log_likelihood(&data, &MaternSpec::new(p.sigma2_tilde, a, 0.5).unwrap()).unwrap();
        assert!((l - (p.profile_loglik - 20.0)).abs() < 1e-9);
    }
    let single = GpDataset::new(Design::from_1d(vec![0.4]).unwrap(), vec![3.0]).unwrap();
    assert!((profile_stats(&single, 2.0, 0.5).unwrap().theta_tilde - 18.0).abs() < 1e-12);
}

#[test]
fn ou_stats_examples() {
    let s = ou_stats_from_values(&[0.0, 1.0, 0.0]);
    assert_eq!((s.a1, s.a2, s.a3), (1.0, 0.0, 1.0));
    let s = ou_stats_from_values(&[1.0; 4]);
    assert_eq!((s.a1, s.a2, s.a3), (2.0, 3.0, 4.0));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
    let s = ou_stats_from_values(&x);
    let a1: f64 = x[1..49].iter().map(|v| v * v).sum();
    let a2: f64 = (0..49).map(|i| x[i] * x[i + 1]).sum();
    let a3: f64 = x.iter().map(|v| v * v).sum();
    assert_eq!((s.a1, s.a2, s.a3), (a1, a2, a3));
    let data = GpDataset::new(Design::equispaced(50).unwrap(), x).unwrap();
    assert_eq!(ou_stats(&data).unwrap(), s);
}

#[test]
fn brute_force_matrix_entries() {
    let design = Design::from_1d(vec![0.05, 0.3, 0.62, 0.9]).unwrap();
    let r = build_correlation_matrix(&design, 2.2, 1.5).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let h = (design.coords()[i] - design.coords()[j]).abs();
            assert_eq!(r[(i, j)], matern_correlation(2.2, 1.5, h).unwrap());
        }
    }
    let two = build_correlation_matrix(&Design::from_1d(vec![0.0, 1.0]).unwrap(), 0.5, 0.5).unwrap();
    assert!((two[(0, 1)] - 0.6065307).abs() < 1e-7);
}

#[test]
fn factorization_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [1, 5, 20, 50] {
        let coords: Vec<f64> = (0..2 * n).map(|_| rng.random::<f64>()).collect();
        let design = Design::new(2, 1.0, coords).unwrap();
        let r = build_correlation_matrix(&design, 3.0, 2.5).unwrap();
        let f = factorize(&r, 1.7).unwrap();
        let l = f.lower();
        let err = (&l * l.transpose() - &r * 1.7).abs().max();
        assert!(err < 1e-8 * 1.7);
        let diag: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        assert!((f.log_det() - diag).abs() < 1e-10);
    }
}

#[test]
fn dense_route_agrees_with_markov_summary() {
    let data = ou_data(60, 21);
    for a in [0.1, 1.0, 8.0] {
        let d = corr_summary(&data, a, 0.5, LikelihoodRoute::Dense).unwrap();
        let m = corr_summary(&data, a, 0.5, LikelihoodRoute::OuMarkov).unwrap();
        assert!((d.quad - m.quad).abs() < 1e-8 * d.quad);
        assert!((d.log_det - m.log_det).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_scale_equivariance(seed in 0u64..1000, c in 0.1f64..10.0, s2 in 0.1f64..5.0, a in 0.1f64..10.0) {
        let data = ou_data(15, seed);
        let scaled = GpDataset::new(data.design().clone(), data.x().iter().map(|v| c * v).collect()).unwrap();
        let l = log_likelihood(&data, &MaternSpec::new(s2, a, 1.5).unwrap()).unwrap();
        let ls = log_likelihood(&scaled, &MaternSpec::new(c * c * s2, a, 1.5).unwrap()).unwrap();
        prop_assert!((ls - (l - 15.0 * c.ln())).abs() < 1e-10 * (1.0 + l.abs()));
    }

    #[test]
    fn markov_equals_dense(seed in 0u64..1000, s2 in 0.1f64..5.0, a in 0.05f64..20.0) {
        let data = ou_data(25, seed);
        let dense = log_likelihood(&data, &MaternSpec::new(s2, a, 0.5).unwrap()).unwrap();
        let fast = ou_loglik_fast(&data, s2, a).unwrap();
        prop_assert!((dense - fast).abs() < 1e-8 * (1.0 + dense.abs()));
    }
}
