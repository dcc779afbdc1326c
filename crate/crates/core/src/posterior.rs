//! Priors, the joint posterior of `(theta, alpha)`, random-walk Metropolis,
//! and the limiting posteriors used as Bernstein–von Mises comparisons.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{require_positive, Error, Result};
use crate::gp::{corr_summary, ou_stats, CorrSummary, GpDataset, LikelihoodRoute, OuStats, ProfileStats};

/// Gamma(shape, rate) density on `(0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        require_positive("gamma shape", shape)?;
        require_positive("gamma rate", rate)?;
        Ok(Self { shape, rate })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Independent priors on `theta` and `alpha`; `None` is a flat (improper)
/// prior on the positive half-line, meant for debugging only.
///
/// Independence means `pi(alpha | theta0) = pi(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub theta: Option<GammaPrior>,
    pub alpha: Option<GammaPrior>,
}

impl Default for PriorSpec {
    /// Gamma(1.1, 0.1) on both parameters.
    fn default() -> Self {
        let g = GammaPrior { shape: 1.1, rate: 0.1 };
        Self {
            theta: Some(g),
            alpha: Some(g),
        }
    }
}

impl PriorSpec {
    pub fn flat() -> Self {
        Self { theta: None, alpha: None }
    }

    pub fn log_theta(&self, theta: f64) -> f64 {
        match self.theta {
            Some(g) => g.log_density(theta),
            None if theta > 0.0 => 0.0,
            None => f64::NEG_INFINITY,
        }
    }

    pub fn log_alpha(&self, alpha: f64) -> f64 {
        match self.alpha {
            Some(g) => g.log_density(alpha),
            None if alpha > 0.0 => 0.0,
            None => f64::NEG_INFINITY,
        }
    }

    /// Prior means, falling back to 1 for flat components.
    pub fn means(&self) -> (f64, f64) {
        (
            self.theta.map_or(1.0, |g| g.mean()),
            self.alpha.map_or(1.0, |g| g.mean()),
        )
    }
}

/// The joint posterior `pi(theta, alpha | X_n)` up to normalization.
#[derive(Debug, Clone)]
pub struct JointPosterior<'a> {
    pub data: &'a GpDataset,
    pub nu: f64,
    pub prior: PriorSpec,
    pub route: LikelihoodRoute,
}

impl<'a> JointPosterior<'a> {
    pub fn new(data: &'a GpDataset, nu: f64, prior: PriorSpec) -> Self {
        Self {
            data,
            nu,
            prior,
            route: LikelihoodRoute::auto(data.design(), nu),
        }
    }

    pub fn with_route(mut self, route: LikelihoodRoute) -> Self {
        self.route = route;
        self
    }

    pub fn summary(&self, alpha: f64) -> Result<CorrSummary> {
        corr_summary(self.data, alpha, self.nu, self.route)
    }

    /// `L_n(theta / alpha^(2 nu), alpha) + log pi(theta) + log pi(alpha)`;
    /// `-inf` for non-positive parameters or a failed factorization.
    pub fn log_density(&self, theta: f64, alpha: f64) -> f64 {
        if !(theta > 0.0 && alpha > 0.0 && theta.is_finite() && alpha.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match self.summary(alpha) {
            Ok(s) => self.log_density_from(&s, theta, alpha),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Reuses a summary computed at `alpha`; `theta` only rescales.
    pub fn log_density_from(&self, s: &CorrSummary, theta: f64, alpha: f64) -> f64 {
        let sigma2 = theta / alpha.powf(2.0 * self.nu);
        let v = s.log_likelihood(sigma2) + self.prior.log_theta(theta) + self.prior.log_alpha(alpha);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    pub fn profile(&self, alpha: f64) -> Result<ProfileStats> {
        ProfileStats::from_summary(&self.summary(alpha)?, alpha, self.nu)
    }
}

/// Unnormalized joint log-posterior of `(theta, alpha)`.
pub fn log_joint_posterior(data: &GpDataset, nu: f64, prior: &PriorSpec, theta: f64, alpha: f64) -> f64 {
    JointPosterior::new(data, nu, *prior).log_density(theta, alpha)
}

/// Log density of `N(theta~_alpha, 2 theta0^2 / n)` at `theta`.
pub fn conditional_bvm_logdensity(theta: f64, theta_tilde_alpha: f64, theta0: f64, n: usize) -> f64 {
    let var = 2.0 * theta0 * theta0 / n as f64;
    let d = theta - theta_tilde_alpha;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

/// Profile posterior `L~_n(alpha) + log pi(alpha | theta0)`; with independent
/// priors the conditioning on `theta0` drops out.
pub fn profile_posterior_logdensity(data: &GpDataset, nu: f64, prior: &PriorSpec, _theta0: f64, alpha: f64) -> f64 {
    profile_posterior_logdensity_with(data, nu, prior, alpha, LikelihoodRoute::auto(data.design(), nu))
}

pub fn profile_posterior_logdensity_with(
    data: &GpDataset,
    nu: f64,
    prior: &PriorSpec,
    alpha: f64,
    route: LikelihoodRoute,
) -> f64 {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return f64::NEG_INFINITY;
    }
    match corr_summary(data, alpha, nu, route) {
        Ok(s) if s.quad > 0.0 => s.profile_loglik() + prior.log_alpha(alpha),
        _ => f64::NEG_INFINITY,
    }
}

/// Center and scale of the polynomially tilted normal limit for OU paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltedParams {
    pub u_star: f64,
    pub v_star: f64,
}

/// `u* = n (A1 - A2) / A1`, `v* = n (A1 - 2 A2 + A3) / A1`.
pub fn tilted_params(stats: &OuStats, n: usize) -> Result<TiltedParams> {
    if !(stats.a1 > 0.0) {
        return Err(Error::DegenerateData(format!("A1 = {} must be positive", stats.a1)));
    }
    let nf = n as f64;
    let u_star = nf * (stats.a1 - stats.a2) / stats.a1;
    let v_star = nf * (stats.a1 - 2.0 * stats.a2 + stats.a3) / stats.a1;
    if !(v_star > 0.0) {
        return Err(Error::DegenerateData(format!("v* = {v_star} must be positive")));
    }
    Ok(TiltedParams { u_star, v_star })
}

/// `(1/2) log alpha - (alpha - u*)^2 / (2 v*) + log pi(alpha | theta0)`.
pub fn tilted_logdensity(params: &TiltedParams, prior: &PriorSpec, _theta0: f64, alpha: f64) -> Result<f64> {
    require_positive("alpha", alpha)?;
    let d = alpha - params.u_star;
    Ok(0.5 * alpha.ln() - d * d / (2.0 * params.v_star) + prior.log_alpha(alpha))
}

/// Sampling protocol for random-walk Metropolis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_samples: usize,
    pub n_burnin: usize,
    /// Initial proposal standard deviations on the log scale, one per coordinate.
    pub step_sizes: Vec<f64>,
    pub seed: u64,
    pub adapt_during_burnin: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            n_burnin: 1000,
            step_sizes: vec![0.5, 0.5],
            seed: 20_240_601,
            adapt_during_burnin: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Domain("n_samples must be positive".into()));
        }
        if self.step_sizes.is_empty() {
            return Err(Error::Empty("step_sizes"));
        }
        for &s in &self.step_sizes {
            require_positive("step size", s)?;
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Acceptance rate the burn-in adaptation aims for.
pub const TARGET_ACCEPTANCE: f64 = 0.3;

/// Post-burn-in draws of a random-walk Metropolis chain over positive variables.
#[derive(Debug, Clone, PartialEq)]
pub struct RwmOutput {
    /// `draws[k]` holds the chain for coordinate `k`.
    pub draws: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    /// Proposal scales frozen at the end of burn-in.
    pub step_sizes: Vec<f64>,
}

/// Deterministic RNG for a `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random-walk Metropolis over `k` positive variables with Gaussian proposals
/// on `log x`.
///
/// `log_target` is the log density in the original coordinates; the
/// log-Jacobian `sum log x_k` is added internally. During burn-in the
/// per-coordinate scales track the running standard deviation of the chain
/// and a Robbins–Monro global factor drives acceptance towards
/// [`TARGET_ACCEPTANCE`]; both are frozen afterwards so the retained draws
/// form a time-homogeneous Metropolis chain.
pub fn rwm_chain<F>(mut log_target: F, config: &McmcConfig, init: &[f64]) -> Result<RwmOutput>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    let k = init.len();
    if config.step_sizes.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: config.step_sizes.len(),
        });
    }
    let mut rng = rng_for(config.seed, 0);
    let mut y: Vec<f64> = init.iter().map(|v| v.ln()).collect();
    let mut x: Vec<f64> = init.to_vec();
    let log_jac = |y: &[f64]| y.iter().sum::<f64>();
    let mut current = log_target(&x) + log_jac(&y);
    if !current.is_finite() {
        return Err(Error::Initialization(current));
    }

    let base = config.step_sizes.clone();
    let mut steps = base.clone();
    let mut log_scale = 0.0f64;
    // Welford accumulators over burn-in log-coordinates
    let mut mean = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    let warm = config.n_burnin / 4;

    let mut draws = vec![Vec::with_capacity(config.n_samples); k];
    let mut accepted = 0usize;
    let mut prop_y = vec![0.0; k];
    let mut prop_x = vec![0.0; k];
    let total = config.n_burnin + config.n_samples;
    for it in 0..total {
        for j in 0..k {
            let z: f64 = rng.sample(StandardNormal);
            prop_y[j] = y[j] + steps[j] * z;
            prop_x[j] = prop_y[j].exp();
        }
        let cand = log_target(&prop_x) + log_jac(&prop_y);
        let log_u: f64 = rng.random::<f64>().ln();
        let accept = cand.is_finite() && log_u < cand - current;
        if accept {
            y.copy_from_slice(&prop_y);
            x.copy_from_slice(&prop_x);
            current = cand;
        }

        if it < config.n_burnin {
            if config.adapt_during_burnin {
                let t = (it + 1) as f64;
                for j in 0..k {
                    let d = y[j] - mean[j];
                    mean[j] += d / t;
                    m2[j] += d * (y[j] - mean[j]);
                }
                let a = if accept { 1.0 } else { 0.0 };
                log_scale += (a - TARGET_ACCEPTANCE) / t.powf(0.6);
                log_scale = log_scale.clamp(-12.0, 6.0);
                for j in 0..k {
                    let shape = if it >= warm && it > 10 {
                        let sd = (m2[j] / (t - 1.0)).sqrt();
                        // bounded away from a collapsed history
                        sd.max(0.05 * base[j]).min(20.0 * base[j]) * 2.38 / (k as f64).sqrt()
                    } else {
                        base[j]
                    };
                    steps[j] = shape * log_scale.exp();
                }
            }
        } else {
            if accept {
                accepted += 1;
            }
            for j in 0..k {
                draws[j].push(x[j]);
            }
        }
    }
    Ok(RwmOutput {
        draws,
        acceptance_rate: accepted as f64 / config.n_samples as f64,
        step_sizes: steps,
    })
}

/// Which posterior a chain targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetLabel {
    TruePosterior,
    Conditional,
    JointProfile,
    OuTilted,
    Prior,
}

/// Draws of `(theta, alpha)` from one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSamples {
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub acceptance_rate: f64,
    pub target: TargetLabel,
}

impl ChainSamples {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `iter,theta,alpha` rows.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("iter,theta,alpha\n");
        for (i, (t, a)) in self.theta.iter().zip(&self.alpha).enumerate() {
            out.push_str(&format!("{i},{t:.12e},{a:.12e}\n"));
        }
        out
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str, config: &McmcConfig) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv_string())?;
        let sidecar = ChainSidecar {
            target: self.target,
            acceptance_rate: self.acceptance_rate,
            seed: config.seed,
            n_draws: self.len(),
            config: config.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }
}

/// JSON metadata written next to a chain CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSidecar {
    pub target: TargetLabel,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub n_draws: usize,
    pub config: McmcConfig,
}

/// Chain initialization: prior means, or `(theta~_1, 1)` if the posterior
/// is not finite there.
pub fn default_init(post: &JointPosterior<'_>) -> Result<(f64, f64)> {
    let (t, a) = post.prior.means();
    if post.log_density(t, a).is_finite() {
        return Ok((t, a));
    }
    let p = post.profile(1.0)?;
    Ok((p.theta_tilde, 1.0))
}

/// RWM on the joint posterior of `(theta, alpha)`.
pub fn sample_joint_posterior(post: &JointPosterior<'_>, config: &McmcConfig) -> Result<ChainSamples> {
    let (t0, a0) = default_init(post)?;
    let out = rwm_chain(|p| post.log_density(p[0], p[1]), config, &[t0, a0])?;
    let mut draws = out.draws.into_iter();
    Ok(ChainSamples {
        theta: draws.next().unwrap_or_default(),
        alpha: draws.next().unwrap_or_default(),
        acceptance_rate: out.acceptance_rate,
        target: TargetLabel::TruePosterior,
    })
}

/// Which limiting posterior to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitKind {
    /// `N(theta~_alpha, 2 theta0^2 / n)` at a fixed `alpha`.
    Conditional { alpha_bits: u64 },
    /// `N(theta~_{alpha0}, 2 theta0^2 / n) x profile posterior of alpha`.
    JointProfile,
    /// `N(theta~_{alpha0}, 2 theta0^2 / n) x tilted normal in alpha` (OU only).
    OuTilted,
}

impl LimitKind {
    pub fn conditional(alpha: f64) -> Self {
        LimitKind::Conditional {
            alpha_bits: alpha.to_bits(),
        }
    }
}

/// Inputs shared by the limiting samplers. `theta0` and `alpha0` are the
/// simulation truth.
#[derive(Debug, Clone, Copy)]
pub struct LimitInputs<'a> {
    pub data: &'a GpDataset,
    pub nu: f64,
    pub prior: PriorSpec,
    pub theta0: f64,
    pub alpha0: f64,
    pub route: LikelihoodRoute,
}

/// Samples a limiting posterior: `theta` i.i.d. from the normal limit on one
/// RNG stream, `alpha` by one-dimensional RWM on an independent stream.
///
/// `theta` draws come from an exact normal and may be non-positive for very
/// small `n`.
pub fn joint_limit_sampler(kind: LimitKind, inputs: &LimitInputs<'_>, config: &McmcConfig) -> Result<ChainSamples> {
    config.validate()?;
    let n = inputs.data.n();
    let route = inputs.route;
    let center_alpha = match kind {
        LimitKind::Conditional { alpha_bits } => f64::from_bits(alpha_bits),
        _ => inputs.alpha0,
    };
    let center = crate::gp::profile_stats_with(inputs.data, center_alpha, inputs.nu, route)?.theta_tilde;
    let sd = (2.0 * inputs.theta0 * inputs.theta0 / n as f64).sqrt();
    let mut theta_rng = rng_for(config.seed, 1);
    let theta: Vec<f64> = (0..config.n_samples)
        .map(|_| center + sd * theta_rng.sample::<f64, _>(StandardNormal))
        .collect();

    let alpha_cfg = McmcConfig {
        step_sizes: vec![config.step_sizes.last().copied().unwrap_or(0.5)],
        seed: config.seed ^ 0x9e37_79b9_7f4a_7c15,
        ..config.clone()
    };
    let init_alpha = inputs.prior.means().1;
    let (alpha, acceptance_rate, target) = match kind {
        LimitKind::Conditional { .. } => (vec![center_alpha; config.n_samples], 1.0, TargetLabel::Conditional),
        LimitKind::JointProfile => {
            let f = |a: &[f64]| profile_posterior_logdensity_with(inputs.data, inputs.nu, &inputs.prior, a[0], route);
            let init = if f(&[init_alpha]).is_finite() { init_alpha } else { 1.0 };
            let out = rwm_chain(f, &alpha_cfg, &[init])?;
            (out.draws.into_iter().next().unwrap_or_default(), out.acceptance_rate, TargetLabel::JointProfile)
        }
        LimitKind::OuTilted => {
            let params = tilted_params(&ou_stats(inputs.data)?, n)?;
            let f = |a: &[f64]| tilted_logdensity(&params, &inputs.prior, inputs.theta0, a[0]).unwrap_or(f64::NEG_INFINITY);
            let out = rwm_chain(f, &alpha_cfg, &[init_alpha])?;
            (out.draws.into_iter().next().unwrap_or_default(), out.acceptance_rate, TargetLabel::OuTilted)
        }
    };
    Ok(ChainSamples {
        theta,
        alpha,
        acceptance_rate,
        target,
    })
}
