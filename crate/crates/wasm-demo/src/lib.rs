//! wasm-bindgen bindings behind `www/index.html`.
//!
//! Every export returns a JSON string so the page needs no generated type
//! glue beyond `wasm-bindgen`'s string passing.

use matern_bvm::experiments::{gen_perturbed_grid, log_grid, sample_ou_path};
use matern_bvm::gp::{profile_stats_with, ou_stats, Design, LikelihoodRoute};
use matern_bvm::kernels::{matern_correlation, MaternSpec};
use matern_bvm::kriging::{kl_report, KlReport};
use matern_bvm::posterior::{profile_posterior_logdensity_with, tilted_logdensity, tilted_params, PriorSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

fn err(e: matern_bvm::error::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct Curve {
    h: Vec<f64>,
    rho: Vec<f64>,
}

/// Matérn correlation on `points` lags in `[0, h_max]`.
#[wasm_bindgen]
pub fn matern_curve(alpha: f64, nu: f64, h_max: f64, points: usize) -> Result<String, JsError> {
    let points = points.clamp(2, 2000);
    let h: Vec<f64> = (0..points).map(|i| h_max * i as f64 / (points - 1) as f64).collect();
    let rho = h.iter().map(|&x| matern_correlation(alpha, nu, x)).collect::<Result<_, _>>().map_err(err)?;
    to_js(&Curve { h, rho })
}

#[derive(Serialize)]
struct AlphaPosterior {
    s: Vec<f64>,
    x: Vec<f64>,
    alpha: Vec<f64>,
    theta_tilde: Vec<f64>,
    log_profile: Vec<f64>,
    log_tilted: Vec<f64>,
    u_star: f64,
    v_star: f64,
}

/// Simulates an OU path on a perturbed grid and evaluates, on a log grid of
/// `alpha`, the ridge `theta~_alpha`, the profile posterior and the tilted
/// normal limit (both as unnormalized log densities).
#[wasm_bindgen]
pub fn ou_alpha_posterior(n: usize, alpha0: f64, seed: u64, alpha_max: f64) -> Result<String, JsError> {
    let n = n.clamp(5, 5000);
    let truth = MaternSpec::from_theta(0.5, alpha0, 0.5).map_err(err)?;
    let design = gen_perturbed_grid(1, n, seed).map_err(err)?;
    let data = sample_ou_path(&design, &truth, seed.wrapping_add(1)).map_err(err)?;
    let prior = PriorSpec::default();
    let params = tilted_params(&ou_stats(&data).map_err(err)?, n).map_err(err)?;
    let alpha = log_grid(0.02, alpha_max.max(0.1), 200);
    let route = LikelihoodRoute::OuMarkov;
    let mut theta_tilde = Vec::with_capacity(alpha.len());
    let mut log_profile = Vec::with_capacity(alpha.len());
    let mut log_tilted = Vec::with_capacity(alpha.len());
    for &a in &alpha {
        theta_tilde.push(profile_stats_with(&data, a, 0.5, route).map_err(err)?.theta_tilde);
        log_profile.push(profile_posterior_logdensity_with(&data, 0.5, &prior, a, route));
        log_tilted.push(tilted_logdensity(&params, &prior, truth.theta(), a).map_err(err)?);
    }
    to_js(&AlphaPosterior {
        s: data.design().coords().to_vec(),
        x: data.x().to_vec(),
        alpha,
        theta_tilde,
        log_profile,
        log_tilted,
        u_star: params.u_star,
        v_star: params.v_star,
    })
}

#[derive(Serialize)]
struct KlRow {
    n: usize,
    #[serde(flatten)]
    report: KlReport,
}

/// Symmetrized KL between matched-`theta` OU models on equispaced designs,
/// for `n = n0, 2 n0, 4 n0, ...` (`levels` values).
#[wasm_bindgen]
pub fn kl_sweep(alpha: f64, alpha0: f64, n0: usize, levels: usize) -> Result<String, JsError> {
    let mut rows = Vec::new();
    let mut n = n0.clamp(2, 100_000);
    for _ in 0..levels.clamp(1, 12) {
        let design = Design::equispaced(n).map_err(err)?;
        rows.push(KlRow {
            n,
            report: kl_report(&design, alpha, alpha0).map_err(err)?,
        });
        n *= 2;
    }
    to_js(&rows)
}
