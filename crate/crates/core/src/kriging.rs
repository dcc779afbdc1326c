//! Simple kriging: the BLUP, its mean squared error under assumed, true and
//! oracle parameters, efficiency ratios, and the symmetrized Kullback–Leibler
//! divergence between matched-`theta` OU models.
//!
//! Under the OU model (`d = 1`, `nu = 1/2`) the BLUP at `s*` only weights the
//! two design points bracketing `s*`, so per-point MSEs cost O(1) after a
//! binary search. [`KrigingRoute::OuNeighbor`] uses this; it agrees with the
//! dense route to rounding.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::gp::{correlation_matrix, Design, GpDataset};
use crate::kernels::{MaternCorrelation, MaternSpec};
use crate::linalg::Cholesky;

/// A prediction location `s*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionQuery {
    pub s_star: Vec<f64>,
}

impl PredictionQuery {
    pub fn new(s_star: Vec<f64>) -> Self {
        Self { s_star }
    }

    pub fn at(s: f64) -> Self {
        Self { s_star: vec![s] }
    }

    fn check(&self, design: &Design) -> Result<()> {
        if self.s_star.len() != design.dim() {
            return Err(Error::DimensionMismatch {
                expected: design.dim(),
                got: self.s_star.len(),
            });
        }
        if let Some(i) = design.points().position(|p| p == self.s_star.as_slice()) {
            return Err(Error::CoincidentPoint(i));
        }
        Ok(())
    }
}

/// Prediction MSEs of the BLUP built from the assumed range parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseBreakdown {
    /// MSE when the assumed model is true.
    pub mse_assumed: f64,
    /// MSE of the assumed BLUP under the true model.
    pub mse_under_truth: f64,
    /// MSE of the true-model BLUP under the true model.
    pub mse_oracle: f64,
}

/// `r1 = |assumed / under_truth - 1|`, `r2 = |assumed / oracle - 1|`, and
/// `varsigma_hat = max(r1, r2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRatios {
    pub r1: f64,
    pub r2: f64,
    pub varsigma_hat: f64,
}

pub fn efficiency_ratios(b: &MseBreakdown) -> EfficiencyRatios {
    let r1 = (b.mse_assumed / b.mse_under_truth - 1.0).abs();
    let r2 = (b.mse_assumed / b.mse_oracle - 1.0).abs();
    EfficiencyRatios {
        r1,
        r2,
        varsigma_hat: r1.max(r2),
    }
}

/// How kriging quantities are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KrigingRoute {
    Dense,
    /// Two-neighbor OU formulas; requires `d = 1`, `nu = 1/2`.
    OuNeighbor,
}

impl KrigingRoute {
    pub fn auto(design: &Design, nu: f64) -> Self {
        if design.dim() == 1 && nu == 0.5 {
            KrigingRoute::OuNeighbor
        } else {
            KrigingRoute::Dense
        }
    }
}

/// `r_alpha(s*)^T R_alpha^{-1} X_n`. Independent of `sigma2`.
pub fn blup(data: &GpDataset, alpha: f64, nu: f64, query: &PredictionQuery) -> Result<f64> {
    let design = data.design();
    query.check(design)?;
    let kernel = MaternCorrelation::new(alpha, nu)?;
    let chol = Cholesky::new(&correlation_matrix(design, &kernel))?;
    let r: Vec<f64> = design.distances_to(&query.s_star).iter().map(|&h| kernel.eval(h)).collect();
    let w = chol.solve(&r);
    Ok(w.iter().zip(data.x()).map(|(a, b)| a * b).sum())
}

/// The three prediction MSEs at one location.
pub fn mse_breakdown(
    design: &Design,
    nu: f64,
    assumed: &MaternSpec,
    truth: &MaternSpec,
    query: &PredictionQuery,
) -> Result<MseBreakdown> {
    if assumed.nu() != nu || truth.nu() != nu {
        return Err(Error::Domain("specs must share the smoothness nu".into()));
    }
    let eval = MseEvaluator::new(design, truth, KrigingRoute::Dense)?;
    let oracle = eval.oracle(std::slice::from_ref(query))?[0];
    let p = eval.at_alpha(assumed.alpha(), std::slice::from_ref(query))?[0];
    Ok(p.breakdown(assumed.sigma2(), oracle))
}

/// Per-location MSE pieces for one assumed `alpha`, with `sigma2 = 1` in the
/// assumed model so any `sigma2` can be applied afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMse {
    /// `1 - r_alpha^T R_alpha^{-1} r_alpha`.
    pub unit_assumed: f64,
    /// MSE of the `alpha`-BLUP under the truth (includes `sigma0^2`).
    pub under_truth: f64,
}

impl PointMse {
    pub fn breakdown(&self, sigma2: f64, oracle: f64) -> MseBreakdown {
        MseBreakdown {
            mse_assumed: sigma2 * self.unit_assumed,
            mse_under_truth: self.under_truth,
            mse_oracle: oracle,
        }
    }
}

/// Evaluates kriging MSEs for many assumed `alpha` values against a fixed
/// truth on a fixed design.
#[derive(Debug, Clone)]
pub struct MseEvaluator<'a> {
    design: &'a Design,
    truth: MaternSpec,
    route: KrigingRoute,
    // dense route only
    truth_corr: Option<DMatrix<f64>>,
}

impl<'a> MseEvaluator<'a> {
    pub fn new(design: &'a Design, truth: &MaternSpec, route: KrigingRoute) -> Result<Self> {
        if route == KrigingRoute::OuNeighbor && (design.dim() != 1 || truth.nu() != 0.5) {
            return Err(Error::Domain("the OU neighbor route needs d = 1 and nu = 1/2".into()));
        }
        let truth_corr = match route {
            KrigingRoute::Dense => Some(correlation_matrix(design, &truth.correlation())),
            KrigingRoute::OuNeighbor => None,
        };
        Ok(Self {
            design,
            truth: *truth,
            route,
            truth_corr,
        })
    }

    pub fn truth(&self) -> &MaternSpec {
        &self.truth
    }

    /// Oracle MSE at each query.
    pub fn oracle(&self, queries: &[PredictionQuery]) -> Result<Vec<f64>> {
        let pts = self.at_alpha(self.truth.alpha(), queries)?;
        Ok(pts.iter().map(|p| self.truth.sigma2() * p.unit_assumed).collect())
    }

    /// MSE pieces of the `alpha`-BLUP at each query.
    pub fn at_alpha(&self, alpha: f64, queries: &[PredictionQuery]) -> Result<Vec<PointMse>> {
        require_positive("alpha", alpha)?;
        for q in queries {
            q.check(self.design)?;
        }
        match self.route {
            KrigingRoute::Dense => self.dense(alpha, queries),
            KrigingRoute::OuNeighbor => Ok(queries
                .iter()
                .map(|q| ou_point(self.design.coords(), alpha, self.truth.alpha(), self.truth.sigma2(), q.s_star[0]))
                .collect()),
        }
    }

    fn dense(&self, alpha: f64, queries: &[PredictionQuery]) -> Result<Vec<PointMse>> {
        let nu = self.truth.nu();
        let kernel = MaternCorrelation::new(alpha, nu)?;
        let truth_kernel = self.truth.correlation();
        let r_alpha = correlation_matrix(self.design, &kernel);
        let chol = Cholesky::new(&r_alpha)?;
        let r0 = self.truth_corr.as_ref().expect("dense route keeps the truth matrix");
        let n = self.design.n();
        let s0 = self.truth.sigma2();
        let mut out = Vec::with_capacity(queries.len());
        let mut r0w = vec![0.0; n];
        for q in queries {
            let dists = self.design.distances_to(&q.s_star);
            let ra: Vec<f64> = dists.iter().map(|&h| kernel.eval(h)).collect();
            let rt: Vec<f64> = dists.iter().map(|&h| truth_kernel.eval(h)).collect();
            let w = chol.solve(&ra);
            let unit_assumed = 1.0 - dot(&w, &ra);
            for (i, v) in r0w.iter_mut().enumerate() {
                *v = (0..n).map(|j| r0[(i, j)] * w[j]).sum();
            }
            let under_truth = s0 * (1.0 - 2.0 * dot(&w, &rt) + dot(&w, &r0w));
            out.push(PointMse {
                unit_assumed,
                under_truth,
            });
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// OU BLUP at s* uses only the bracketing neighbors (one neighbor outside
// the hull); `coords` must be sorted.
fn ou_point(coords: &[f64], alpha: f64, alpha0: f64, sigma0_2: f64, s: f64) -> PointMse {
    let k = coords.partition_point(|&c| c < s);
    let n = coords.len();
    if k == 0 || k == n {
        // outside the hull: only the nearest endpoint carries weight
        let h = if k == 0 { coords[0] - s } else { s - coords[n - 1] };
        let a = (-alpha * h).exp();
        let a0 = (-alpha0 * h).exp();
        let unit_assumed = -(-2.0 * alpha * h).exp_m1();
        let under_truth = sigma0_2 * (1.0 - 2.0 * a * a0 + a * a);
        return PointMse {
            unit_assumed,
            under_truth,
        };
    }
    let (h1, h2) = (s - coords[k - 1], coords[k] - s);
    let (a, b) = ((-alpha * h1).exp(), (-alpha * h2).exp());
    let one_c2 = -(-2.0 * alpha * (h1 + h2)).exp_m1();
    let w1 = a * -(-2.0 * alpha * h2).exp_m1() / one_c2;
    let w2 = b * -(-2.0 * alpha * h1).exp_m1() / one_c2;
    let unit_assumed = 1.0 - w1 * a - w2 * b;
    let (a0, b0) = ((-alpha0 * h1).exp(), (-alpha0 * h2).exp());
    let c0 = a0 * b0;
    let under_truth = sigma0_2 * (1.0 - 2.0 * (w1 * a0 + w2 * b0) + w1 * w1 + w2 * w2 + 2.0 * w1 * w2 * c0);
    PointMse {
        unit_assumed,
        under_truth,
    }
}

/// `max` over test points of `r1` and of `r2` for assumed variance `sigma2`.
pub fn max_ratios(sigma2: f64, points: &[PointMse], oracle: &[f64]) -> (f64, f64) {
    points.iter().zip(oracle).fold((0.0f64, 0.0f64), |(m1, m2), (p, &o)| {
        let r = efficiency_ratios(&p.breakdown(sigma2, o));
        (m1.max(r.r1), m2.max(r.r2))
    })
}

/// Empirical `varsigma_n(alpha)`: the larger of the two ratio deviations,
/// maximized over the test points, with `sigma2 = theta0 / alpha^(2 nu)`.
pub fn efficiency_envelope(
    design: &Design,
    nu: f64,
    alpha: f64,
    truth: &MaternSpec,
    test_points: &[PredictionQuery],
) -> Result<f64> {
    if test_points.is_empty() {
        return Err(Error::Empty("test_points"));
    }
    if truth.nu() != nu {
        return Err(Error::Domain("truth smoothness differs from nu".into()));
    }
    let eval = MseEvaluator::new(design, truth, KrigingRoute::auto(design, nu))?;
    let assumed = truth.with_alpha_matched_theta(alpha)?;
    let oracle = eval.oracle(test_points)?;
    let pts = eval.at_alpha(alpha, test_points)?;
    let (m1, m2) = max_ratios(assumed.sigma2(), &pts, &oracle);
    Ok(m1.max(m2))
}

/// Finite-sample and limiting symmetrized KL for a matched-`theta` OU pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub r_n: f64,
    pub r_limit: f64,
    /// `r_limit - r_n`.
    pub gap: f64,
}

/// `-n + (alpha / 2 alpha0) tr(R_alpha^{-1} R_alpha0) + (alpha0 / 2 alpha) tr(R_alpha0^{-1} R_alpha)`
/// for `nu = 1/2`.
pub fn sym_kl_finite(design: &Design, nu: f64, alpha: f64, alpha0: f64) -> Result<f64> {
    if nu != 0.5 {
        return Err(Error::Domain(format!(
            "symmetrized KL is only supported for nu = 1/2 (got {nu}); see sym_kl_finite_experimental"
        )));
    }
    sym_kl_finite_experimental(design, nu, alpha, alpha0)
}

/// Symmetrized KL between `N(0, sigma2 R_alpha)` and `N(0, sigma0^2 R_alpha0)`
/// with `sigma2 alpha^(2 nu) = sigma0^2 alpha0^(2 nu)`, for any `nu`.
/// Experimental outside `nu = 1/2`: there is no closed-form limit to check.
pub fn sym_kl_finite_experimental(design: &Design, nu: f64, alpha: f64, alpha0: f64) -> Result<f64> {
    require_positive("alpha", alpha)?;
    require_positive("alpha0", alpha0)?;
    if alpha == alpha0 {
        return Ok(0.0);
    }
    let (t1, t2) = if design.dim() == 1 && nu == 0.5 {
        (ou_trace(design, alpha, alpha0)?, ou_trace(design, alpha0, alpha)?)
    } else {
        dense_traces(design, nu, alpha, alpha0)?
    };
    let ratio = (alpha / alpha0).powf(2.0 * nu);
    let n = design.n() as f64;
    Ok(-n + 0.5 * ratio * t1 + 0.5 * t2 / ratio)
}

/// `(tr(R_a^{-1} R_b), tr(R_b^{-1} R_a))` as squared Frobenius norms of
/// `L_a^{-1} L_b` and `L_b^{-1} L_a`.
pub fn dense_traces(design: &Design, nu: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    let ra = correlation_matrix(design, &MaternCorrelation::new(a, nu)?);
    let rb = correlation_matrix(design, &MaternCorrelation::new(b, nu)?);
    let la = Cholesky::new(&ra)?;
    let lb = Cholesky::new(&rb)?;
    let t1 = la.solve_lower_matrix(&lb.to_matrix()).norm_squared();
    let t2 = lb.solve_lower_matrix(&la.to_matrix()).norm_squared();
    Ok((t1, t2))
}

/// `tr(R_a^{-1} R_b)` for OU on a 1-d design, using the tridiagonal precision
/// of `R_a`.
pub fn ou_trace(design: &Design, a: f64, b: f64) -> Result<f64> {
    let gaps = design.gaps()?;
    let n = design.n();
    if n == 1 {
        return Ok(1.0);
    }
    // c_i = 1 / (1 - rho_i^2)
    let c: Vec<f64> = gaps.iter().map(|&g| 1.0 / -(-2.0 * a * g).exp_m1()).collect();
    let mut tr = 0.0;
    for i in 0..n {
        let mut p = if i == 0 { 1.0 } else { c[i - 1] };
        if i + 1 < n {
            p += c[i] - 1.0;
        }
        tr += p;
    }
    for (i, &g) in gaps.iter().enumerate() {
        let off = -(-a * g).exp() * c[i];
        tr += 2.0 * off * (-b * g).exp();
    }
    Ok(tr)
}

/// `(alpha - alpha0)^2 (alpha + alpha0 + 2) / (4 alpha alpha0)`, the limit of
/// [`sym_kl_finite`] on `[0, 1]`.
pub fn sym_kl_limit(alpha: f64, alpha0: f64) -> Result<f64> {
    require_positive("alpha", alpha)?;
    require_positive("alpha0", alpha0)?;
    let d = alpha - alpha0;
    Ok(d * d * (alpha + alpha0 + 2.0) / (4.0 * alpha * alpha0))
}

pub fn kl_report(design: &Design, alpha: f64, alpha0: f64) -> Result<KlReport> {
    let r_n = sym_kl_finite(design, 0.5, alpha, alpha0)?;
    let r_limit = sym_kl_limit(alpha, alpha0)?;
    Ok(KlReport {
        r_n,
        r_limit,
        gap: r_limit - r_n,
    })
}

/// One row of an efficiency sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub n: usize,
    pub alpha: f64,
    pub s_star: Vec<f64>,
    pub breakdown: MseBreakdown,
}

/// `n,alpha,s1[,s2...],mse_assumed,mse_true,mse_oracle,r1,r2`.
pub fn efficiency_csv(rows: &[EfficiencyRow]) -> String {
    let d = rows.first().map_or(1, |r| r.s_star.len());
    let mut out = String::from("n,alpha");
    for k in 1..=d {
        let _ = write!(out, ",s{k}");
    }
    out.push_str(",mse_assumed,mse_true,mse_oracle,r1,r2\n");
    for r in rows {
        let e = efficiency_ratios(&r.breakdown);
        let _ = write!(out, "{},{}", r.n, r.alpha);
        for s in &r.s_star {
            let _ = write!(out, ",{s}");
        }
        let b = &r.breakdown;
        let _ = writeln!(
            out,
            ",{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            b.mse_assumed, b.mse_under_truth, b.mse_oracle, e.r1, e.r2
        );
    }
    out
}

pub fn write_efficiency_csv(path: impl AsRef<Path>, rows: &[EfficiencyRow]) -> Result<()> {
    std::fs::write(path, efficiency_csv(rows))?;
    Ok(())
}
