use matern_bvm::experiments::{
    emit_contour_grid, gen_perturbed_grid, linear_grid, log_grid, replication_seed, run_table1, sample_gp_path,
    sample_ou_path, ExperimentConfig, SeedTag,
};
use matern_bvm::gp::Design;
use matern_bvm::kernels::MaternSpec;
use matern_bvm::posterior::{rng_for, McmcConfig};
use rand_distr::{Distribution, StandardNormal};

fn truth() -> MaternSpec {
    MaternSpec::new(1.0, 0.5, 0.5).unwrap()
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cab / (va * vb).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_stat(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn gp_path_moments() {
    let design = Design::from_1d(vec![0.2, 0.5, 0.9]).unwrap();
    let spec = MaternSpec::new(2.0, 1.5, 1.5).unwrap();
    let draws: Vec<Vec<f64>> = (0..10_000u64)
        .map(|s| sample_gp_path(&design, &spec, s).unwrap().x().to_vec())
        .collect();
    let col = |k: usize| draws.iter().map(|x| x[k]).collect::<Vec<f64>>();
    let (x0, x1) = (col(0), col(1));
    let var = x0.iter().map(|v| v * v).sum::<f64>() / 10_000.0;
    assert!((var / 2.0 - 1.0).abs() < 0.05, "var {var}");
    let want = matern_bvm::kernels::matern_correlation(1.5, 1.5, 0.3).unwrap();
    assert!((corr(&x0, &x1) - want).abs() < 0.02);
}

#[test]
fn ou_sampler_matches_dense_sampler() {
    let design = gen_perturbed_grid(1, 30, 1).unwrap();
    let (mut ou, mut dense): (Vec<f64>, Vec<f64>) = (0..10_000u64)
        .map(|s| {
            let a = sample_ou_path(&design, &truth(), s).unwrap().x()[29];
            let b = sample_gp_path(&design, &truth(), s + 1_000_000).unwrap().x()[29];
            (a, b)
        })
        .unzip();
    let d = ks_stat(&mut ou, &mut dense);
    // 1% critical value for equal samples of size m: 1.628 sqrt(2/m)
    let crit = 1.628 * (2.0f64 / 10_000.0).sqrt();
    assert!(d < crit, "KS {d} vs {crit}");
}

#[test]
fn ou_sampler_lag_correlation() {
    let design = Design::from_1d(vec![0.1, 0.3]).unwrap();
    let (a, b): (Vec<f64>, Vec<f64>) = (0..10_000u64)
        .map(|s| {
            let x = sample_ou_path(&design, &truth(), s).unwrap();
            (x.x()[0], x.x()[1])
        })
        .unzip();
    assert!((corr(&a, &b) - (-0.1f64).exp()).abs() < 0.02);
}

#[test]
fn contour_ridge_is_monotone() {
    let cfg = ExperimentConfig::one_d();
    for n in [50, 400] {
        let design = gen_perturbed_grid(1, n, 3).unwrap();
        let data = sample_ou_path(&design, &truth(), 4).unwrap();
        let alphas = log_grid(0.05, 20.0, 40);
        let thetas = linear_grid(0.05, 2.0, 60);
        let grid = emit_contour_grid(&data, &cfg, &thetas, &alphas).unwrap();
        assert_eq!(grid.ridge.len(), 40);
        for w in grid.ridge.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-10);
        }
        // at each alpha the posterior peaks in theta next to the ridge
        for (k, &(alpha, tt)) in grid.ridge.iter().enumerate() {
            if !(0.2..=2.0).contains(&alpha) {
                continue;
            }
            let row = &grid.points[k * 60..(k + 1) * 60];
            let best = row.iter().max_by(|a, b| a.log_posterior.total_cmp(&b.log_posterior)).unwrap();
            assert!((best.theta - tt).abs() < 0.1 + 2.0 * 2f64.sqrt() * tt / (n as f64).sqrt());
        }
    }
}

#[test]
fn replication_seeds_are_uncorrelated() {
    let first = |rep: usize, tag: SeedTag| -> f64 {
        StandardNormal.sample(&mut rng_for(replication_seed(20_240_601, 100, rep, 0, tag), 0))
    };
    let a: Vec<f64> = (0..4000).map(|r| first(r, SeedTag::Path)).collect();
    let b: Vec<f64> = (0..4000).map(|r| first(r + 1, SeedTag::Path)).collect();
    let c: Vec<f64> = (0..4000).map(|r| first(r, SeedTag::Mcmc)).collect();
    assert!(corr(&a, &b).abs() < 0.05);
    assert!(corr(&a, &c).abs() < 0.05);
}

#[test]
fn table_output_is_reproducible() {
    let mut cfg = ExperimentConfig::one_d();
    cfg.sizes = vec![20, 40];
    cfg.n_replications = 3;
    cfg.n_test_points = 50;
    cfg.mcmc = McmcConfig {
        n_samples: 300,
        n_burnin: 100,
        ..McmcConfig::default()
    };
    let a = run_table1(&cfg).unwrap();
    cfg.workers = 3;
    let b = run_table1(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.replications_csv(), b.replications_csv());
    cfg.master_seed += 1;
    assert_ne!(a.to_csv(), run_table1(&cfg).unwrap().to_csv());
}

#[test]
fn config_parsing() {
    let cfg = ExperimentConfig::parse("# study\nd = 2\nsizes = 4, 6\nreps: 7\nroute = dense\n").unwrap();
    assert_eq!((cfg.d, cfg.sizes.clone(), cfg.n_replications), (2, vec![4, 6], 7));
    assert_eq!(cfg.n_test_points, 2500);
    assert_eq!(ExperimentConfig::parse(&cfg.to_kv_string()).unwrap(), cfg);
    assert!(ExperimentConfig::parse("bogus = 1").is_err());
    assert!(ExperimentConfig::parse("d = 2\nroute = fast-ou").is_err());
    assert!(ExperimentConfig::parse("reps = many").is_err());
}
