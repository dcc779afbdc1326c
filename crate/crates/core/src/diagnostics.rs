//! Wasserstein-2 distances between one-dimensional samples, sample summaries,
//! and the simultaneous-diagonalization spectrum of two matched-`theta`
//! Matérn covariances.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::gp::{correlation_matrix, Design, GpDataset};
use crate::kernels::MaternCorrelation;
use crate::linalg::Cholesky;

/// At least two finite draws from a one-dimensional distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSample {
    values: Vec<f64>,
}

impl EmpiricalSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(format!("a sample needs at least 2 values, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample value {v}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// `sqrt(mean((a_(i) - b_(i))^2))` over order statistics, the exact W2
/// between the two empirical measures. Sample sizes must match.
pub fn w2_distance(a: &EmpiricalSample, b: &EmpiricalSample) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let (sa, sb) = (a.sorted(), b.sorted());
    let ss: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Convenience wrapper over raw slices.
pub fn w2_distance_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    w2_distance(&EmpiricalSample::new(a.to_vec())?, &EmpiricalSample::new(b.to_vec())?)
}

/// Mean and sample standard deviation (`m - 1` denominator).
pub fn summarize(sample: &EmpiricalSample) -> (f64, f64) {
    mean_sd(sample.values())
}

/// [`summarize`] on a raw slice; the sd is `NaN` below two values.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (m - 1.0)).sqrt())
}

/// Eigenvalues `lambda_k` of `L0^{-1} Sigma_alpha L0^{-T}`, ascending, where
/// `Sigma_alpha0 = L0 L0^T` and both covariances carry microergodic parameter
/// `theta0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSpectrum {
    pub lambdas: Vec<f64>,
}

impl LambdaSpectrum {
    /// `[min, max]` of `{(alpha0 / alpha)^(2 nu + d), 1}`.
    pub fn bounds(nu: f64, d: usize, alpha: f64, alpha0: f64) -> (f64, f64) {
        let b = (alpha0 / alpha).powf(2.0 * nu + d as f64);
        (b.min(1.0), b.max(1.0))
    }
}

struct Whitening {
    lambdas: Vec<f64>,
    vectors: DMatrix<f64>,
    l0: Cholesky,
}

fn whiten(design: &Design, nu: f64, alpha: f64, alpha0: f64, theta0: f64) -> Result<Whitening> {
    require_positive("alpha", alpha)?;
    require_positive("alpha0", alpha0)?;
    require_positive("theta0", theta0)?;
    let s2 = theta0 / alpha.powf(2.0 * nu);
    let s02 = theta0 / alpha0.powf(2.0 * nu);
    let r0 = correlation_matrix(design, &MaternCorrelation::new(alpha0, nu)?) * s02;
    let ra = correlation_matrix(design, &MaternCorrelation::new(alpha, nu)?) * s2;
    let l0 = Cholesky::new(&r0)?;
    // L0^{-1} Sigma L0^{-T} = L0^{-1} (L0^{-1} Sigma)^T since Sigma is symmetric
    let half = l0.solve_lower_matrix(&ra);
    let mut m = l0.solve_lower_matrix(&half.transpose());
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(order.len(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Whitening { lambdas, vectors, l0 })
}

pub fn generalized_lambdas(design: &Design, nu: f64, alpha: f64, alpha0: f64, theta0: f64) -> Result<LambdaSpectrum> {
    let w = whiten(design, nu, alpha, alpha0, theta0)?;
    if let Some(&l) = w.lambdas.first() {
        if !(l > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: 0, value: l });
        }
    }
    Ok(LambdaSpectrum { lambdas: w.lambdas })
}

/// The spectrum together with the whitened data `Y = U^T L0^{-1} X`, so that
/// `n (theta~_alpha - theta~_alpha0) / theta0 = sum_k (1/lambda_k - 1) Y_k^2`.
pub fn whitened_data(
    data: &GpDataset,
    nu: f64,
    alpha: f64,
    alpha0: f64,
    theta0: f64,
) -> Result<(LambdaSpectrum, Vec<f64>)> {
    let w = whiten(data.design(), nu, alpha, alpha0, theta0)?;
    let z = w.l0.solve_lower(data.x());
    let y: Vec<f64> = (0..z.len())
        .map(|k| w.vectors.column(k).iter().zip(&z).map(|(u, v)| u * v).sum())
        .collect();
    Ok((LambdaSpectrum { lambdas: w.lambdas }, y))
}
