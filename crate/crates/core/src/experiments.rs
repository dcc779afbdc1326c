//! Seeded simulation harness: perturbed-grid designs, Latin hypercube test
//! points, GP path simulation, replication loops for the three summary
//! tables, contour grids, and their CSV/JSON outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{mean_sd, w2_distance_slices};
use crate::error::{Error, Result};
use crate::gp::{build_correlation_matrix, ou_stats, profile_stats_with, Design, GpDataset, LikelihoodRoute};
use crate::kernels::MaternSpec;
use crate::kriging::{max_ratios, KrigingRoute, MseEvaluator, PointMse, PredictionQuery};
use crate::linalg::Cholesky;
use crate::posterior::{
    conditional_bvm_logdensity, joint_limit_sampler, rng_for, sample_joint_posterior, tilted_logdensity,
    tilted_params, GammaPrior, JointPosterior, LimitInputs, LimitKind, McmcConfig, PriorSpec,
};

/// Perturbation half-width for one-dimensional grids.
pub const NOISE_1D: f64 = 0.0002;
/// Perturbation half-width per axis for two-dimensional grids.
pub const NOISE_2D: f64 = 0.001;

/// Everything a table run needs. `sizes` holds `n` for `d = 1` and the grid
/// side `m` (so `n = m^2`) for `d = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub sizes: Vec<usize>,
    pub truth: MaternSpec,
    pub prior: PriorSpec,
    pub mcmc: McmcConfig,
    pub n_replications: usize,
    pub n_test_points: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Half-width of the uniform perturbation added to each grid coordinate.
    pub noise: f64,
    pub route: LikelihoodRoute,
    /// Posterior draws used per replication for the efficiency ratios;
    /// 0 uses every draw.
    pub table3_draws: usize,
    pub max_retries: usize,
    /// Worker threads; 0 picks the available parallelism.
    pub workers: usize,
}

impl ExperimentConfig {
    /// Defaults for the one-dimensional OU study.
    pub fn one_d() -> Self {
        Self {
            d: 1,
            sizes: vec![25, 50, 100, 200, 400],
            truth: MaternSpec::new(1.0, 0.5, 0.5).expect("valid truth"),
            prior: PriorSpec::default(),
            mcmc: McmcConfig::default(),
            n_replications: 100,
            n_test_points: 1000,
            master_seed: 20_240_601,
            output_dir: PathBuf::from("out"),
            noise: NOISE_1D,
            route: LikelihoodRoute::OuMarkov,
            table3_draws: 0,
            max_retries: 5,
            workers: 0,
        }
    }

    /// Defaults for the two-dimensional study on `m x m` grids.
    pub fn two_d() -> Self {
        Self {
            d: 2,
            sizes: vec![10, 20, 30],
            n_test_points: 2500,
            noise: NOISE_2D,
            route: LikelihoodRoute::Dense,
            table3_draws: 100,
            ..Self::one_d()
        }
    }

    pub fn defaults_for(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Self::one_d()),
            2 => Ok(Self::two_d()),
            _ => Err(Error::Config(format!("d must be 1 or 2, got {d}"))),
        }
    }

    /// Number of observations for a size entry.
    pub fn n_for(&self, size: usize) -> usize {
        size.pow(self.d as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(1..=2).contains(&self.d) {
            return fail("d must be 1 or 2");
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s < 2) {
            return fail("sizes must be non-empty with every entry >= 2");
        }
        if self.n_replications == 0 || self.n_test_points == 0 {
            return fail("n_replications and n_test_points must be positive");
        }
        if !(0.0..0.5).contains(&self.noise) {
            return fail("noise must lie in [0, 0.5)");
        }
        if self.route == LikelihoodRoute::OuMarkov && (self.d != 1 || self.truth.nu() != 0.5) {
            return fail("route fast-ou needs d = 1 and nu = 0.5");
        }
        self.mcmc.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.mcmc.step_sizes.len() != 2 {
            return fail("exactly two step sizes (theta, alpha) are required");
        }
        Ok(())
    }

    /// Parses flat `key = value` text; `#` starts a comment. Keys absent
    /// from the text keep the defaults for the configured `d`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let d = match kv.remove("d") {
            Some(v) => parse_num::<usize>("d", &v)?,
            None => 1,
        };
        let mut c = Self::defaults_for(d)?;
        let mut sigma0_2 = c.truth.sigma2();
        let mut alpha0 = c.truth.alpha();
        let mut nu = c.truth.nu();
        let mut theta_prior = c.prior.theta.unwrap_or(GammaPrior { shape: 1.1, rate: 0.1 });
        let mut alpha_prior = c.prior.alpha.unwrap_or(GammaPrior { shape: 1.1, rate: 0.1 });
        for (k, v) in &kv {
            match k.as_str() {
                "sizes" | "n" | "m" => {
                    c.sizes = v
                        .split(',')
                        .map(|s| parse_num::<usize>(k, s.trim()))
                        .collect::<Result<_>>()?
                }
                "sigma0_2" => sigma0_2 = parse_num(k, v)?,
                "alpha0" => alpha0 = parse_num(k, v)?,
                "nu" => nu = parse_num(k, v)?,
                "prior_theta_shape" => theta_prior.shape = parse_num(k, v)?,
                "prior_theta_rate" => theta_prior.rate = parse_num(k, v)?,
                "prior_alpha_shape" => alpha_prior.shape = parse_num(k, v)?,
                "prior_alpha_rate" => alpha_prior.rate = parse_num(k, v)?,
                "n_samples" => c.mcmc.n_samples = parse_num(k, v)?,
                "n_burnin" => c.mcmc.n_burnin = parse_num(k, v)?,
                "step_theta" => c.mcmc.step_sizes[0] = parse_num(k, v)?,
                "step_alpha" => c.mcmc.step_sizes[1] = parse_num(k, v)?,
                "adapt" => c.mcmc.adapt_during_burnin = parse_num(k, v)?,
                "n_replications" | "reps" => c.n_replications = parse_num(k, v)?,
                "n_test_points" => c.n_test_points = parse_num(k, v)?,
                "master_seed" | "seed" => c.master_seed = parse_num(k, v)?,
                "output_dir" => c.output_dir = PathBuf::from(v),
                "noise" => c.noise = parse_num(k, v)?,
                "route" => {
                    c.route = match v.as_str() {
                        "fast-ou" | "ou" => LikelihoodRoute::OuMarkov,
                        "dense" => LikelihoodRoute::Dense,
                        _ => return Err(Error::Config(format!("route must be fast-ou or dense, got {v}"))),
                    }
                }
                "table3_draws" => c.table3_draws = parse_num(k, v)?,
                "max_retries" => c.max_retries = parse_num(k, v)?,
                "workers" => c.workers = parse_num(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        c.truth = MaternSpec::new(sigma0_2, alpha0, nu).map_err(|e| Error::Config(e.to_string()))?;
        c.prior = PriorSpec {
            theta: Some(GammaPrior::new(theta_prior.shape, theta_prior.rate).map_err(|e| Error::Config(e.to_string()))?),
            alpha: Some(GammaPrior::new(alpha_prior.shape, alpha_prior.rate).map_err(|e| Error::Config(e.to_string()))?),
        };
        // a default fast route that no longer applies (e.g. nu changed) falls back to dense
        if !kv.contains_key("route") && c.route == LikelihoodRoute::OuMarkov && (c.d != 1 || nu != 0.5) {
            c.route = LikelihoodRoute::Dense;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// The config in the flat format accepted by [`ExperimentConfig::parse`].
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let sizes: Vec<String> = self.sizes.iter().map(|v| v.to_string()).collect();
        let tp = self.prior.theta.unwrap_or(GammaPrior { shape: 1.1, rate: 0.1 });
        let ap = self.prior.alpha.unwrap_or(GammaPrior { shape: 1.1, rate: 0.1 });
        let route = match self.route {
            LikelihoodRoute::OuMarkov => "fast-ou",
            LikelihoodRoute::Dense => "dense",
        };
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "sizes = {}", sizes.join(","));
        let _ = writeln!(s, "sigma0_2 = {}", self.truth.sigma2());
        let _ = writeln!(s, "alpha0 = {}", self.truth.alpha());
        let _ = writeln!(s, "nu = {}", self.truth.nu());
        let _ = writeln!(s, "prior_theta_shape = {}", tp.shape);
        let _ = writeln!(s, "prior_theta_rate = {}", tp.rate);
        let _ = writeln!(s, "prior_alpha_shape = {}", ap.shape);
        let _ = writeln!(s, "prior_alpha_rate = {}", ap.rate);
        let _ = writeln!(s, "n_samples = {}", self.mcmc.n_samples);
        let _ = writeln!(s, "n_burnin = {}", self.mcmc.n_burnin);
        let _ = writeln!(s, "step_theta = {}", self.mcmc.step_sizes[0]);
        let _ = writeln!(s, "step_alpha = {}", self.mcmc.step_sizes[1]);
        let _ = writeln!(s, "adapt = {}", self.mcmc.adapt_during_burnin);
        let _ = writeln!(s, "n_replications = {}", self.n_replications);
        let _ = writeln!(s, "n_test_points = {}", self.n_test_points);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(s, "route = {route}");
        let _ = writeln!(s, "table3_draws = {}", self.table3_draws);
        let _ = writeln!(s, "max_retries = {}", self.max_retries);
        let _ = writeln!(s, "workers = {}", self.workers);
        s
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse value {v:?} for key {key:?}")))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of integers into an independent seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(master), |h, &p| splitmix(h ^ splitmix(p)))
}

/// Seed purposes inside one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum SeedTag {
    Design = 1,
    Path = 2,
    Mcmc = 3,
    Limit = 4,
    TestPoints = 5,
}

/// Seed for replication `rep` at size `size`, retry `attempt`.
pub fn replication_seed(master: u64, size: usize, rep: usize, attempt: usize, tag: SeedTag) -> u64 {
    derive_seed(master, &[rep as u64, size as u64, attempt as u64, tag as u64])
}

/// Midpoint grid with uniform jitter of half-width `noise`, clamped to
/// `[0, 1]^d`. Jitter draws that produce coincident points are redrawn.
pub fn gen_perturbed_grid_with_noise(d: usize, n_or_m: usize, noise: f64, seed: u64) -> Result<Design> {
    if n_or_m < 2 && !(d == 1 && n_or_m == 1) {
        return Err(Error::InvalidDesign(format!("grid size must be >= 2, got {n_or_m}")));
    }
    let mid = |i: usize| (2 * i + 1) as f64 / (2 * n_or_m) as f64;
    let mut last = None;
    for stream in 0..64u64 {
        let mut rng = rng_for(seed, stream);
        let mut jitter = || {
            if noise > 0.0 {
                rng.random_range(-noise..=noise)
            } else {
                0.0
            }
        };
        let coords: Vec<f64> = match d {
            1 => (0..n_or_m).map(|i| (mid(i) + jitter()).clamp(0.0, 1.0)).collect(),
            2 => {
                let mut c = Vec::with_capacity(2 * n_or_m * n_or_m);
                for i in 0..n_or_m {
                    for j in 0..n_or_m {
                        c.push((mid(i) + jitter()).clamp(0.0, 1.0));
                        c.push((mid(j) + jitter()).clamp(0.0, 1.0));
                    }
                }
                c
            }
            _ => return Err(Error::InvalidDesign(format!("grid dimension must be 1 or 2, got {d}"))),
        };
        match Design::new(d, 1.0, coords) {
            Ok(design) => return Ok(design),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::InvalidDesign("could not draw a grid".into())))
}

/// [`gen_perturbed_grid_with_noise`] at the default noise for `d`.
pub fn gen_perturbed_grid(d: usize, n_or_m: usize, seed: u64) -> Result<Design> {
    let noise = if d == 1 { NOISE_1D } else { NOISE_2D };
    gen_perturbed_grid_with_noise(d, n_or_m, noise, seed)
}

/// Latin hypercube sample of `count` points in `[0, 1]^d`: each axis has one
/// point per stratum `[k / count, (k + 1) / count)`.
pub fn gen_lhs_testpoints(d: usize, count: usize, seed: u64) -> Vec<PredictionQuery> {
    let mut rng = rng_for(seed, 0);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut perm: Vec<usize> = (0..count).collect();
        perm.shuffle(&mut rng);
        axes.push(
            perm.iter()
                .map(|&k| (k as f64 + rng.random::<f64>()) / count as f64)
                .collect(),
        );
    }
    (0..count)
        .map(|i| PredictionQuery::new(axes.iter().map(|a| a[i]).collect()))
        .collect()
}

/// Like [`gen_lhs_testpoints`] but redraws the in-stratum offset of any point
/// that coincides with a design point.
pub fn gen_lhs_testpoints_avoiding(d: usize, count: usize, seed: u64, design: &Design) -> Vec<PredictionQuery> {
    let mut pts = gen_lhs_testpoints(d, count, seed);
    let mut rng = rng_for(seed, 1);
    for q in &mut pts {
        while design.points().any(|p| p == q.s_star.as_slice()) {
            for c in &mut q.s_star {
                let k = (*c * count as f64).floor().min(count as f64 - 1.0);
                *c = (k + rng.random::<f64>()) / count as f64;
            }
        }
    }
    pts
}

/// `X = L Z` with `L L^T = sigma0^2 R_alpha0` and `Z` standard normal.
pub fn sample_gp_path(design: &Design, truth: &MaternSpec, seed: u64) -> Result<GpDataset> {
    let r = build_correlation_matrix(design, truth.alpha(), truth.nu())?;
    let chol = Cholesky::new(&r)?;
    let mut rng = rng_for(seed, 0);
    let z: Vec<f64> = (0..design.n()).map(|_| rng.sample(StandardNormal)).collect();
    let sd = truth.sigma2().sqrt();
    let x: Vec<f64> = (0..design.n())
        .map(|i| sd * (0..=i).map(|j| chol.get(i, j) * z[j]).sum::<f64>())
        .collect();
    GpDataset::new(design.clone(), x)
}

/// Sequential Markov sampler for OU paths on a sorted one-dimensional design.
/// Same law as [`sample_gp_path`], different draws for the same seed.
pub fn sample_ou_path(design: &Design, truth: &MaternSpec, seed: u64) -> Result<GpDataset> {
    if truth.nu() != 0.5 {
        return Err(Error::Domain(format!("the Markov sampler needs nu = 1/2, got {}", truth.nu())));
    }
    let gaps = design.gaps()?;
    let mut rng = rng_for(seed, 0);
    let sd = truth.sigma2().sqrt();
    let mut x = Vec::with_capacity(design.n());
    x.push(sd * rng.sample::<f64, _>(StandardNormal));
    for g in gaps {
        let rho = (-truth.alpha() * g).exp();
        let innov = (-(-2.0 * truth.alpha() * g).exp_m1()).sqrt();
        let prev = *x.last().expect("non-empty");
        x.push(rho * prev + sd * innov * rng.sample::<f64, _>(StandardNormal));
    }
    GpDataset::new(design.clone(), x)
}

/// Per-replication statistics feeding one table cell each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub n: usize,
    pub rep_index: usize,
    /// Attempts used, 1 when the first try succeeded.
    pub attempts: usize,
    pub posterior_mean_theta: f64,
    pub posterior_mean_alpha: f64,
    pub limit_mean_theta: f64,
    pub limit_mean_alpha: f64,
    pub w2_theta: f64,
    pub w2_alpha_profile: f64,
    pub w2_alpha_tilted: Option<f64>,
    pub mean_max_r1: Option<f64>,
    pub mean_max_r2: Option<f64>,
    pub acceptance_rate: f64,
    /// Posterior draws skipped in the efficiency ratios after a failure.
    pub skipped_draws: usize,
}

/// Which statistics a replication computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationOptions {
    pub efficiency: bool,
}

/// Runs one replication, retrying up to `config.max_retries` times with
/// derived seeds.
pub fn run_replication(
    config: &ExperimentConfig,
    size: usize,
    rep: usize,
    opts: ReplicationOptions,
) -> Result<ReplicationResult> {
    let mut last = None;
    for attempt in 0..=config.max_retries {
        match replication_attempt(config, size, rep, attempt, opts) {
            Ok(mut r) => {
                r.attempts = attempt + 1;
                return Ok(r);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(Error::FailureBudget {
        n: config.n_for(size),
        rep,
        attempts: config.max_retries + 1,
        last: last.map(|e| e.to_string()).unwrap_or_default(),
    })
}

/// Simulates the observed dataset of one replication attempt.
pub fn simulate_dataset(config: &ExperimentConfig, size: usize, rep: usize, attempt: usize) -> Result<GpDataset> {
    let seed = |tag| replication_seed(config.master_seed, size, rep, attempt, tag);
    let design = gen_perturbed_grid_with_noise(config.d, size, config.noise, seed(SeedTag::Design))?;
    match config.route {
        LikelihoodRoute::OuMarkov => sample_ou_path(&design, &config.truth, seed(SeedTag::Path)),
        LikelihoodRoute::Dense => sample_gp_path(&design, &config.truth, seed(SeedTag::Path)),
    }
}

fn replication_attempt(
    config: &ExperimentConfig,
    size: usize,
    rep: usize,
    attempt: usize,
    opts: ReplicationOptions,
) -> Result<ReplicationResult> {
    let seed = |tag| replication_seed(config.master_seed, size, rep, attempt, tag);
    let data = simulate_dataset(config, size, rep, attempt)?;
    let n = data.n();
    let nu = config.truth.nu();
    let post = JointPosterior::new(&data, nu, config.prior).with_route(config.route);
    let chain = sample_joint_posterior(&post, &config.mcmc.with_seed(seed(SeedTag::Mcmc)))?;

    let inputs = LimitInputs {
        data: &data,
        nu,
        prior: config.prior,
        theta0: config.truth.theta(),
        alpha0: config.truth.alpha(),
        route: config.route,
    };
    let limit_cfg = config.mcmc.with_seed(seed(SeedTag::Limit));
    let profile = joint_limit_sampler(LimitKind::JointProfile, &inputs, &limit_cfg)?;
    let tilted = if config.d == 1 && nu == 0.5 {
        Some(joint_limit_sampler(LimitKind::OuTilted, &inputs, &limit_cfg)?)
    } else {
        None
    };

    let w2_theta = w2_distance_slices(&chain.theta, &profile.theta)?;
    let w2_alpha_profile = w2_distance_slices(&chain.alpha, &profile.alpha)?;
    let w2_alpha_tilted = match &tilted {
        Some(t) => Some(w2_distance_slices(&chain.alpha, &t.alpha)?),
        None => None,
    };

    let (mut mean_max_r1, mut mean_max_r2, mut skipped_draws) = (None, None, 0);
    if opts.efficiency {
        let tests = gen_lhs_testpoints_avoiding(config.d, config.n_test_points, seed(SeedTag::TestPoints), data.design());
        let route = match config.route {
            LikelihoodRoute::OuMarkov => KrigingRoute::OuNeighbor,
            LikelihoodRoute::Dense => KrigingRoute::Dense,
        };
        let eval = MseEvaluator::new(data.design(), &config.truth, route)?;
        let oracle = eval.oracle(&tests)?;
        let draws = thin_indices(chain.len(), config.table3_draws);
        let (mut s1, mut s2, mut used) = (0.0, 0.0, 0usize);
        let mut cache: Option<(f64, Vec<PointMse>)> = None;
        for i in draws {
            let (theta, alpha) = (chain.theta[i], chain.alpha[i]);
            if cache.as_ref().map(|c| c.0) != Some(alpha) {
                match eval.at_alpha(alpha, &tests) {
                    Ok(p) => cache = Some((alpha, p)),
                    Err(_) => {
                        skipped_draws += 1;
                        continue;
                    }
                }
            }
            let pts = &cache.as_ref().expect("cached").1;
            let sigma2 = theta / alpha.powf(2.0 * nu);
            let (m1, m2) = max_ratios(sigma2, pts, &oracle);
            s1 += m1;
            s2 += m2;
            used += 1;
        }
        if used == 0 {
            return Err(Error::DegenerateData("every posterior draw failed in the efficiency ratios".into()));
        }
        mean_max_r1 = Some(s1 / used as f64);
        mean_max_r2 = Some(s2 / used as f64);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ReplicationResult {
        n,
        rep_index: rep,
        attempts: attempt + 1,
        posterior_mean_theta: mean(&chain.theta),
        posterior_mean_alpha: mean(&chain.alpha),
        limit_mean_theta: mean(&profile.theta),
        limit_mean_alpha: mean(&profile.alpha),
        w2_theta,
        w2_alpha_profile,
        w2_alpha_tilted,
        mean_max_r1,
        mean_max_r2,
        acceptance_rate: chain.acceptance_rate,
        skipped_draws,
    })
}

// `k` evenly spaced indices out of `len`, or all of them when `k` is 0 or
// at least `len`.
fn thin_indices(len: usize, k: usize) -> Vec<usize> {
    if k == 0 || k >= len {
        return (0..len).collect();
    }
    (0..k).map(|i| i * len / k).collect()
}

/// Cross-replication mean and standard deviation of one statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub mean: f64,
    pub sd: f64,
}

impl CellStat {
    pub fn of(v: &[f64]) -> Self {
        let (mean, sd) = mean_sd(v);
        Self {
            mean,
            sd: if v.len() > 1 { sd } else { 0.0 },
        }
    }
}

/// Aggregated statistics at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub n: usize,
    pub replications: usize,
    pub retries: usize,
    pub e_theta: CellStat,
    pub e_alpha: CellStat,
    pub w2_theta: CellStat,
    pub w2_alpha_profile: CellStat,
    pub w2_alpha_tilted: Option<CellStat>,
    pub max_r1: Option<CellStat>,
    pub max_r2: Option<CellStat>,
}

impl TableRow {
    pub fn aggregate(reps: &[ReplicationResult]) -> Self {
        let col = |f: &dyn Fn(&ReplicationResult) -> f64| CellStat::of(&reps.iter().map(f).collect::<Vec<_>>());
        let opt = |f: &dyn Fn(&ReplicationResult) -> Option<f64>| {
            let v: Option<Vec<f64>> = reps.iter().map(f).collect();
            v.map(|v| CellStat::of(&v))
        };
        Self {
            n: reps.first().map_or(0, |r| r.n),
            replications: reps.len(),
            retries: reps.iter().map(|r| r.attempts - 1).sum(),
            e_theta: col(&|r| r.posterior_mean_theta),
            e_alpha: col(&|r| r.posterior_mean_alpha),
            w2_theta: col(&|r| r.w2_theta),
            w2_alpha_profile: col(&|r| r.w2_alpha_profile),
            w2_alpha_tilted: opt(&|r| r.w2_alpha_tilted),
            max_r1: opt(&|r| r.mean_max_r1),
            max_r2: opt(&|r| r.mean_max_r2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Table1,
    Table2,
    Table3,
}

impl TableKind {
    pub fn name(self) -> &'static str {
        match self {
            TableKind::Table1 => "table1",
            TableKind::Table2 => "table2",
            TableKind::Table3 => "table3",
        }
    }
}

/// Output of a table run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRun {
    pub kind: TableKind,
    pub rows: Vec<TableRow>,
    pub replications: Vec<ReplicationResult>,
}

/// Runs every `(size, replication)` task over a bounded pool of scoped
/// threads; results are ordered by task so output does not depend on
/// scheduling.
pub fn run_replications(config: &ExperimentConfig, opts: ReplicationOptions) -> Result<Vec<ReplicationResult>> {
    config.validate()?;
    let tasks: Vec<(usize, usize)> = config
        .sizes
        .iter()
        .flat_map(|&s| (0..config.n_replications).map(move |r| (s, r)))
        .collect();
    let workers = match config.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    }
    .min(tasks.len())
    .max(1);
    let slots: Vec<Mutex<Option<Result<ReplicationResult>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(size, rep)) = tasks.get(i) else { break };
                let r = run_replication(config, size, rep, opts);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every task ran"))
        .collect()
}

fn run_table(config: &ExperimentConfig, kind: TableKind) -> Result<TableRun> {
    let opts = ReplicationOptions {
        efficiency: kind == TableKind::Table3,
    };
    let replications = run_replications(config, opts)?;
    let rows = replications
        .chunks(config.n_replications)
        .map(TableRow::aggregate)
        .collect();
    Ok(TableRun {
        kind,
        rows,
        replications,
    })
}

/// Posterior means and W2 distances to the limiting posteriors, `d = 1`.
pub fn run_table1(config: &ExperimentConfig) -> Result<TableRun> {
    if config.d != 1 {
        return Err(Error::Config("table1 needs d = 1".into()));
    }
    run_table(config, TableKind::Table1)
}

/// As [`run_table1`] for `d = 2`, without the tilted column.
pub fn run_table2(config: &ExperimentConfig) -> Result<TableRun> {
    if config.d != 2 {
        return Err(Error::Config("table2 needs d = 2".into()));
    }
    run_table(config, TableKind::Table2)
}

/// Posterior means of the max-over-test-points MSE ratios, plus the Table 1
/// statistics of the same chains.
pub fn run_table3(config: &ExperimentConfig) -> Result<TableRun> {
    run_table(config, TableKind::Table3)
}

impl TableRun {
    /// One row per `n`, `<stat>_mean,<stat>_sd` pairs.
    pub fn to_csv(&self) -> String {
        let has_tilted = self.rows.iter().all(|r| r.w2_alpha_tilted.is_some());
        let has_eff = self.rows.iter().all(|r| r.max_r1.is_some());
        let mut names = vec!["e_theta", "e_alpha", "w2_theta", "w2_alpha_profile"];
        if has_tilted {
            names.push("w2_alpha_tilted");
        }
        if has_eff {
            names.extend(["max_r1", "max_r2"]);
        }
        let mut out = String::from("n,replications,retries");
        for n in &names {
            let _ = write!(out, ",{n}_mean,{n}_sd");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.n, r.replications, r.retries);
            let mut cells = vec![r.e_theta, r.e_alpha, r.w2_theta, r.w2_alpha_profile];
            if has_tilted {
                cells.extend(r.w2_alpha_tilted);
            }
            if has_eff {
                cells.extend(r.max_r1);
                cells.extend(r.max_r2);
            }
            for c in cells {
                let _ = write!(out, ",{:.6},{:.6}", c.mean, c.sd);
            }
            out.push('\n');
        }
        out
    }

    pub fn replications_csv(&self) -> String {
        let mut out = String::from(
            "n,rep,attempts,post_mean_theta,post_mean_alpha,limit_mean_theta,limit_mean_alpha,\
             w2_theta,w2_alpha_profile,w2_alpha_tilted,mean_max_r1,mean_max_r2,acceptance_rate,skipped_draws\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.10e}"));
        for r in &self.replications {
            let _ = writeln!(
                out,
                "{},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{},{},{:.4},{}",
                r.n,
                r.rep_index,
                r.attempts,
                r.posterior_mean_theta,
                r.posterior_mean_alpha,
                r.limit_mean_theta,
                r.limit_mean_alpha,
                r.w2_theta,
                r.w2_alpha_profile,
                opt(r.w2_alpha_tilted),
                opt(r.mean_max_r1),
                opt(r.mean_max_r2),
                r.acceptance_rate,
                r.skipped_draws
            );
        }
        out
    }

    /// Writes `<kind>.csv`, `<kind>_replications.csv` and
    /// `<kind>_manifest.json` into `dir`.
    pub fn write(&self, config: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let name = self.kind.name();
        let table = format!("{name}.csv");
        let reps = format!("{name}_replications.csv");
        std::fs::write(dir.join(&table), self.to_csv())?;
        std::fs::write(dir.join(&reps), self.replications_csv())?;
        let manifest = Manifest::new(name, config, vec![table, reps])
            .with_retries(self.rows.iter().map(|r| (r.n, r.retries)).collect())
            .with_skipped(self.replications.iter().map(|r| r.skipped_draws).sum());
        manifest.write(dir.join(format!("{name}_manifest.json")))?;
        Ok(manifest)
    }
}

/// JSON record of a run: config echo, build id, seeds, retries and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub build_id: String,
    pub master_seed: u64,
    pub seed_derivation: String,
    pub config: ExperimentConfig,
    pub retries_by_n: Vec<(usize, usize)>,
    pub skipped_draws: usize,
    pub outputs: Vec<String>,
}

/// Package version plus the `MATERN_BVM_BUILD_REV` value seen at compile time.
pub fn build_id() -> String {
    format!(
        "{}-{}+{}",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        option_env!("MATERN_BVM_BUILD_REV").unwrap_or("unversioned")
    )
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, outputs: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            build_id: build_id(),
            master_seed: config.master_seed,
            seed_derivation: "splitmix64(master_seed; rep, size, attempt, purpose) seeding ChaCha20".into(),
            config: config.clone(),
            retries_by_n: Vec::new(),
            skipped_draws: 0,
            outputs,
        }
    }

    pub fn with_retries(mut self, r: Vec<(usize, usize)>) -> Self {
        self.retries_by_n = r;
        self
    }

    pub fn with_skipped(mut self, s: usize) -> Self {
        self.skipped_draws = s;
        self
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

/// One `(theta, alpha)` node of a contour grid with three unnormalized log
/// densities: the posterior, the profile limit and the tilted limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub theta: f64,
    pub alpha: f64,
    pub log_posterior: f64,
    pub log_profile_limit: f64,
    pub log_tilted_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub points: Vec<ContourPoint>,
    /// `(alpha, theta~_alpha)` per grid `alpha`.
    pub ridge: Vec<(f64, f64)>,
}

/// Evaluates the three surfaces on `theta_grid x alpha_grid` for an OU
/// dataset. Nodes where a density is undefined hold `-inf`.
pub fn emit_contour_grid(
    data: &GpDataset,
    config: &ExperimentConfig,
    theta_grid: &[f64],
    alpha_grid: &[f64],
) -> Result<ContourGrid> {
    data.design().gaps()?;
    let nu = config.truth.nu();
    if nu != 0.5 {
        return Err(Error::Domain("contour grids are defined for OU data (nu = 1/2)".into()));
    }
    let n = data.n();
    let theta0 = config.truth.theta();
    let route = LikelihoodRoute::OuMarkov;
    let post = JointPosterior::new(data, nu, config.prior).with_route(route);
    let center = profile_stats_with(data, config.truth.alpha(), nu, route)?.theta_tilde;
    let tilted = tilted_params(&ou_stats(data)?, n)?;
    let mut points = Vec::with_capacity(theta_grid.len() * alpha_grid.len());
    let mut ridge = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let summary = post.summary(alpha).ok();
        let prof = summary
            .as_ref()
            .and_then(|s| crate::gp::ProfileStats::from_summary(s, alpha, nu).ok());
        if let Some(p) = prof {
            ridge.push((alpha, p.theta_tilde));
        }
        let log_prof_alpha = prof.map_or(f64::NEG_INFINITY, |p| p.profile_loglik + config.prior.log_alpha(alpha));
        let log_tilt_alpha = tilted_logdensity(&tilted, &config.prior, theta0, alpha).unwrap_or(f64::NEG_INFINITY);
        for &theta in theta_grid {
            let log_posterior = summary
                .as_ref()
                .map_or(f64::NEG_INFINITY, |s| post.log_density_from(s, theta, alpha));
            let lt = conditional_bvm_logdensity(theta, center, theta0, n);
            points.push(ContourPoint {
                theta,
                alpha,
                log_posterior,
                log_profile_limit: lt + log_prof_alpha,
                log_tilted_limit: lt + log_tilt_alpha,
            });
        }
    }
    Ok(ContourGrid { points, ridge })
}

impl ContourGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,alpha,log_post,log_profile_limit,log_tilted_limit\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                p.theta, p.alpha, p.log_posterior, p.log_profile_limit, p.log_tilted_limit
            );
        }
        out
    }

    pub fn ridge_csv(&self) -> String {
        let mut out = String::from("alpha,theta_tilde\n");
        for (a, t) in &self.ridge {
            let _ = writeln!(out, "{a:.10e},{t:.10e}");
        }
        out
    }
}

/// `k` points from `lo` to `hi` inclusive, evenly spaced.
pub fn linear_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect(),
    }
}

/// `k` points from `lo` to `hi` inclusive, evenly spaced on the log scale.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    linear_grid(lo.ln(), hi.ln(), k).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_grid() {
        let d = gen_perturbed_grid_with_noise(1, 2, 0.0, 1).unwrap();
        assert_eq!(d.coords(), &[0.25, 0.75]);
        let d2 = gen_perturbed_grid_with_noise(2, 2, 0.0, 1).unwrap();
        assert_eq!(d2.coords(), &[0.25, 0.25, 0.25, 0.75, 0.75, 0.25, 0.75, 0.75]);
    }

    #[test]
    fn perturbed_grid_gaps_and_determinism() {
        let n = 400;
        let a = gen_perturbed_grid(1, n, 7).unwrap();
        let b = gen_perturbed_grid(1, n, 7).unwrap();
        assert_eq!(a, b);
        let min_gap = a.gaps().unwrap().into_iter().fold(f64::INFINITY, f64::min);
        assert!(min_gap >= 1.0 / n as f64 - 2.0 * NOISE_1D - 1e-15);
        assert_ne!(a, gen_perturbed_grid(1, n, 8).unwrap());
    }

    #[test]
    fn lhs_strata() {
        let pts = gen_lhs_testpoints(1, 4, 3);
        let mut bins: Vec<usize> = pts.iter().map(|p| (p.s_star[0] * 4.0) as usize).collect();
        bins.sort();
        assert_eq!(bins, vec![0, 1, 2, 3]);
        let pts2 = gen_lhs_testpoints(2, 100, 3);
        for axis in 0..2 {
            let mut counts = [0usize; 10];
            for p in &pts2 {
                counts[(p.s_star[axis] * 10.0) as usize] += 1;
            }
            assert_eq!(counts, [10; 10]);
        }
        assert_eq!(pts2, gen_lhs_testpoints(2, 100, 3));
    }

    #[test]
    fn config_round_trip_and_errors() {
        let c = ExperimentConfig::two_d();
        let parsed = ExperimentConfig::parse(&c.to_kv_string()).unwrap();
        assert_eq!(parsed, c);
        let c1 = ExperimentConfig::parse("# defaults\nsizes = 25, 50\nreps = 3\n").unwrap();
        assert_eq!(c1.sizes, vec![25, 50]);
        assert_eq!(c1.n_replications, 3);
        assert!(matches!(ExperimentConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("alpha0 = -1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("d = 4"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("no separator"), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_differ_by_purpose() {
        let a = replication_seed(1, 25, 0, 0, SeedTag::Design);
        let b = replication_seed(1, 25, 0, 0, SeedTag::Path);
        let c = replication_seed(1, 25, 1, 0, SeedTag::Design);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, replication_seed(1, 25, 0, 0, SeedTag::Design));
    }

    #[test]
    fn thinning() {
        assert_eq!(thin_indices(5, 0), vec![0, 1, 2, 3, 4]);
        assert_eq!(thin_indices(10, 5), vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn small_replication_runs() {
        let mut c = ExperimentConfig::one_d();
        c.sizes = vec![25];
        c.n_replications = 2;
        c.mcmc.n_samples = 300;
        c.mcmc.n_burnin = 100;
        c.n_test_points = 50;
        c.workers = 2;
        let run = run_table3(&c).unwrap();
        assert_eq!(run.rows.len(), 1);
        let r = &run.rows[0];
        assert_eq!(r.n, 25);
        assert!(r.max_r1.is_some() && r.w2_alpha_tilted.is_some());
        let again = run_table3(&c).unwrap();
        assert_eq!(run.to_csv(), again.to_csv());
        assert_eq!(run.replications_csv(), again.replications_csv());
    }
}
