use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use matern_bvm::diagnostics::{generalized_lambdas, whitened_data, LambdaSpectrum};
use matern_bvm::error::{Error, Result};
use matern_bvm::experiments::{
    emit_contour_grid, gen_perturbed_grid, linear_grid, log_grid, run_table1, run_table2, run_table3,
    sample_gp_path, simulate_dataset, ExperimentConfig, Manifest, TableRun,
};
use matern_bvm::gp::{profile_stats, Design, LikelihoodRoute};
use matern_bvm::kernels::MaternSpec;
use matern_bvm::kriging::kl_report;
use matern_bvm::posterior::{joint_limit_sampler, sample_joint_posterior, JointPosterior, LimitInputs, LimitKind};

#[derive(Parser)]
#[command(name = "matern-bvm", version, about = "Posterior inference for Matérn Gaussian processes under infill asymptotics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per size
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// O(n) OU likelihood and sampler (d = 1, nu = 1/2 only)
    #[arg(long, conflicts_with = "dense")]
    fast_ou: bool,
    /// Dense Cholesky likelihood and sampler
    #[arg(long)]
    dense: bool,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated sizes (n for d = 1, grid side m for d = 2)
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset and sample its posterior and limiting posterior
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// n for d = 1, grid side m for d = 2
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        rep: usize,
    },
    /// Posterior means and W2 distances, d = 1
    Table1 {
        #[command(flatten)]
        common: Common,
    },
    /// Posterior means and W2 distances, d = 2
    Table2 {
        #[command(flatten)]
        common: Common,
    },
    /// Posterior means of the maximal MSE ratios
    Table3 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        d: usize,
    },
    /// Log-density surfaces and the theta~ ridge on a (theta, alpha) grid
    Contour {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long, default_value_t = 0.1)]
        theta_min: f64,
        #[arg(long, default_value_t = 1.5)]
        theta_max: f64,
        #[arg(long, default_value_t = 80)]
        theta_points: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha_min: f64,
        #[arg(long, default_value_t = 10.0)]
        alpha_max: f64,
        #[arg(long, default_value_t = 80)]
        alpha_points: usize,
    },
    /// Symmetrized KL r_n(alpha) against its limit on equispaced designs
    KlCheck {
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha0: f64,
        #[arg(long, value_delimiter = ',', default_value = "100,200,400,800")]
        sizes: Vec<usize>,
    },
    /// Simultaneous-diagonalization eigenvalues against their bounds
    LambdaCheck {
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 50)]
        size: usize,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha0: f64,
        #[arg(long, default_value_t = 0.5)]
        theta0: f64,
        #[arg(long, default_value_t = 0.5)]
        nu: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(common: &Common, d: usize) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::defaults_for(d)?,
    };
    if c.d != d {
        return Err(Error::Config(format!("this command needs d = {d}, config has d = {}", c.d)));
    }
    if let Some(s) = common.seed {
        c.master_seed = s;
    }
    if let Some(r) = common.reps {
        c.n_replications = r;
    }
    if let Some(o) = &common.out {
        c.output_dir = o.clone();
    }
    if let Some(w) = common.workers {
        c.workers = w;
    }
    if let Some(s) = &common.sizes {
        c.sizes = s.clone();
    }
    if common.fast_ou {
        c.route = LikelihoodRoute::OuMarkov;
    }
    if common.dense {
        c.route = LikelihoodRoute::Dense;
    }
    c.validate()?;
    Ok(c)
}

fn emit_table(run: &TableRun, config: &ExperimentConfig) -> Result<()> {
    let manifest = run.write(config, &config.output_dir)?;
    print!("{}", run.to_csv());
    eprintln!(
        "wrote {} to {}",
        manifest.outputs.join(", "),
        config.output_dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, d, size, rep } => {
            let mut config = load_config(&common, d)?;
            config.sizes = vec![size];
            let data = simulate_dataset(&config, size, rep, 0)?;
            let dir = &config.output_dir;
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("dataset.csv"), data.to_csv_string())?;
            let nu = config.truth.nu();
            let post = JointPosterior::new(&data, nu, config.prior).with_route(config.route);
            let mcmc = config.mcmc.with_seed(config.master_seed);
            let chain = sample_joint_posterior(&post, &mcmc)?;
            chain.write(dir, "chain", &mcmc)?;
            let inputs = LimitInputs {
                data: &data,
                nu,
                prior: config.prior,
                theta0: config.truth.theta(),
                alpha0: config.truth.alpha(),
                route: config.route,
            };
            let limit = joint_limit_sampler(LimitKind::JointProfile, &inputs, &mcmc)?;
            limit.write(dir, "limit_profile", &mcmc)?;
            let mut outputs = vec!["dataset.csv", "chain.csv", "chain.json", "limit_profile.csv", "limit_profile.json"];
            if d == 1 && nu == 0.5 {
                joint_limit_sampler(LimitKind::OuTilted, &inputs, &mcmc)?.write(dir, "limit_tilted", &mcmc)?;
                outputs.extend(["limit_tilted.csv", "limit_tilted.json"]);
            }
            Manifest::new("simulate", &config, outputs.iter().map(|s| s.to_string()).collect())
                .write(dir.join("simulate_manifest.json"))?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "n = {}, E(theta|X) = {:.4}, E(alpha|X) = {:.3}, acceptance = {:.2}",
                data.n(),
                mean(&chain.theta),
                mean(&chain.alpha),
                chain.acceptance_rate
            );
        }
        Command::Table1 { common } => {
            let config = load_config(&common, 1)?;
            emit_table(&run_table1(&config)?, &config)?;
        }
        Command::Table2 { common } => {
            let config = load_config(&common, 2)?;
            emit_table(&run_table2(&config)?, &config)?;
        }
        Command::Table3 { common, d } => {
            let config = load_config(&common, d)?;
            emit_table(&run_table3(&config)?, &config)?;
        }
        Command::Contour {
            common,
            size,
            theta_min,
            theta_max,
            theta_points,
            alpha_min,
            alpha_max,
            alpha_points,
        } => {
            let config = load_config(&common, 1)?;
            if !(0.0 < theta_min && theta_min < theta_max && 0.0 < alpha_min && alpha_min < alpha_max) {
                return Err(Error::Config("grid bounds must be positive and increasing".into()));
            }
            let data = simulate_dataset(&config, size, 0, 0)?;
            let grid = emit_contour_grid(
                &data,
                &config,
                &linear_grid(theta_min, theta_max, theta_points),
                &log_grid(alpha_min, alpha_max, alpha_points),
            )?;
            let dir = &config.output_dir;
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("contour.csv"), grid.to_csv())?;
            std::fs::write(dir.join("ridge.csv"), grid.ridge_csv())?;
            std::fs::write(dir.join("dataset.csv"), data.to_csv_string())?;
            Manifest::new(
                "contour",
                &config,
                vec!["contour.csv".into(), "ridge.csv".into(), "dataset.csv".into()],
            )
            .write(dir.join("contour_manifest.json"))?;
            println!("wrote {} grid nodes to {}", grid.points.len(), dir.display());
        }
        Command::KlCheck { alpha, alpha0, sizes } => {
            println!("n,r_n,r_limit,gap");
            for n in sizes {
                let design = Design::equispaced(n)?;
                let r = kl_report(&design, alpha, alpha0)?;
                println!("{n},{:.10},{:.10},{:.6e}", r.r_n, r.r_limit, r.gap);
            }
        }
        Command::LambdaCheck {
            d,
            size,
            alpha,
            alpha0,
            theta0,
            nu,
            seed,
        } => {
            let design = gen_perturbed_grid(d, size, seed)?;
            let spec = generalized_lambdas(&design, nu, alpha, alpha0, theta0)?;
            let (lo, hi) = LambdaSpectrum::bounds(nu, d, alpha, alpha0);
            let min = spec.lambdas.first().copied().unwrap_or(f64::NAN);
            let max = spec.lambdas.last().copied().unwrap_or(f64::NAN);
            let inside = min >= lo - 1e-8 && max <= hi + 1e-8;
            println!("n = {}, lambda in [{min:.6e}, {max:.6e}], bounds [{lo:.6e}, {hi:.6e}], inside = {inside}", design.n());
            let truth = MaternSpec::from_theta(theta0, alpha0, nu)?;
            let data = sample_gp_path(&design, &truth, seed)?;
            let (s, y) = whitened_data(&data, nu, alpha, alpha0, theta0)?;
            let lhs = design.n() as f64
                * (profile_stats(&data, alpha, nu)?.theta_tilde - profile_stats(&data, alpha0, nu)?.theta_tilde)
                / theta0;
            let rhs: f64 = s.lambdas.iter().zip(&y).map(|(l, y)| (1.0 / l - 1.0) * y * y).sum();
            println!("n (theta~_alpha - theta~_alpha0) / theta0 = {lhs:.10e}, spectral form = {rhs:.10e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Parse(_) => 2,
                Error::FailureBudget { .. } => 3,
                _ => 1,
            })
        }
    }
}
