//! Comparator estimators: the linear rule family and its risk estimate,
//! Ledoit–Wolf shrinkage, adaptive soft thresholding, NERCOME and the
//! rotation-invariant oracle.
//!
//! The linear-rule functions use the zero-mean convention (`S = XᵀX / n`).
//! `d2` and `b2` carry the `1/p` normalization of the squared Frobenius
//! norm, which is what makes `β̂_I = μ̂ · b2 / d2` hold.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{CovError, Result};
use crate::la::{sample_covariance, sym_eigen, CovMode, DataMatrix, SymmetricEstimate};
use crate::seed;

/// Minimizers of the linear risk estimate and the quantities behind them.
#[derive(Debug, Clone)]
pub struct LinearCoefs {
    pub beta_s: f64,
    pub beta_i: f64,
    /// `tr(S) / p`
    pub mu_hat: f64,
    /// `‖S − μ̂I‖²_F / p`
    pub d2: f64,
    /// `min(d2, Σ_jk Δ̂²_jk / p)`
    pub b2: f64,
    /// `Δ̂²_jk = Σ_i (X_ij X_ik − s_jk)² / n²`
    pub delta2: DMatrix<f64>,
}

fn zero_mean_parts(x: &DataMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = sample_covariance(x, CovMode::ZeroMean)?.into_inner();
    let (n, p) = (x.n(), x.p());
    let xv = x.values();
    let mut delta2 = DMatrix::zeros(p, p);
    for k in 0..p {
        for j in k..p {
            let mut acc = 0.0;
            for i in 0..n {
                let d = xv[(i, j)] * xv[(i, k)] - s[(j, k)];
                acc += d * d;
            }
            let v = acc / (n * n) as f64;
            delta2[(j, k)] = v;
            delta2[(k, j)] = v;
        }
    }
    Ok((s, delta2))
}

/// `p⁻² Σ_jk [(2β_S − 1)Δ̂²_jk + {(1 − β_S)s_jk − β_I u_jk}²]`
pub fn linear_risk_estimate(x: &DataMatrix, beta_s: f64, beta_i: f64) -> Result<f64> {
    let (s, delta2) = zero_mean_parts(x)?;
    Ok(risk_from_parts(&s, &delta2, beta_s, beta_i))
}

fn risk_from_parts(s: &DMatrix<f64>, delta2: &DMatrix<f64>, beta_s: f64, beta_i: f64) -> f64 {
    let p = s.nrows();
    let mut acc = 0.0;
    for k in 0..p {
        for j in 0..p {
            let u = if j == k { 1.0 } else { 0.0 };
            let r = (1.0 - beta_s) * s[(j, k)] - beta_i * u;
            acc += (2.0 * beta_s - 1.0) * delta2[(j, k)] + r * r;
        }
    }
    acc / (p * p) as f64
}

/// Solves the 2×2 normal equations of the quadratic risk estimate.
pub fn linear_risk_minimizers(x: &DataMatrix) -> Result<LinearCoefs> {
    let (s, delta2) = zero_mean_parts(x)?;
    let p = s.nrows() as f64;
    let trace = s.trace();
    let mu_hat = trace / p;
    let d2 = (&s - DMatrix::identity(s.nrows(), s.nrows()) * mu_hat).norm_squared() / p;
    if d2 <= 0.0 {
        return Err(CovError::DegenerateSpread);
    }
    let sum_s2 = s.norm_squared();
    let sum_delta2 = delta2.sum();

    // (ZᵀZ) β = Zᵀv_S − M with Z = (vec S, vec I)
    let (a11, a12, a22) = (sum_s2, trace, p);
    let (r1, r2) = (sum_s2 - sum_delta2, trace);
    let det = a11 * a22 - a12 * a12;
    if det <= 0.0 {
        return Err(CovError::DegenerateSpread);
    }
    let beta_s = (a22 * r1 - a12 * r2) / det;
    let beta_i = (a11 * r2 - a12 * r1) / det;

    Ok(LinearCoefs { beta_s, beta_i, mu_hat, d2, b2: d2.min(sum_delta2 / p), delta2 })
}

/// Ledoit–Wolf shrinkage toward `μ̂ I`.
pub fn lw_estimate(x: &DataMatrix) -> Result<SymmetricEstimate> {
    let (s, delta2) = zero_mean_parts(x)?;
    let p = s.nrows();
    let mu_hat = s.trace() / p as f64;
    if mu_hat <= 0.0 {
        return Err(CovError::UndefinedScale);
    }
    let target = DMatrix::identity(p, p) * mu_hat;
    let d2 = (&s - &target).norm_squared() / p as f64;
    if d2 <= 0.0 {
        return Ok(SymmetricEstimate::new(target, "linear")?.with_param("shrinkage", 1.0));
    }
    let b2 = d2.min(delta2.sum() / p as f64);
    let w = b2 / d2;
    let out = s * (1.0 - w) + target * w;
    Ok(SymmetricEstimate::from_lower(out, "linear")?.with_param("shrinkage", w))
}

/// `max(β̂_S, 0) · S + min(β̂_I, μ̂) · I`
pub fn optimal_linear_estimate(x: &DataMatrix) -> Result<SymmetricEstimate> {
    let coefs = linear_risk_minimizers(x)?;
    let s = sample_covariance(x, CovMode::ZeroMean)?.into_inner();
    let p = s.nrows();
    let out = s * coefs.beta_s.max(0.0) + DMatrix::identity(p, p) * coefs.beta_i.min(coefs.mu_hat);
    Ok(SymmetricEstimate::from_lower(out, "optimal_linear")?
        .with_param("beta_s", coefs.beta_s)
        .with_param("beta_i", coefs.beta_i))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Entry-adaptive soft thresholding of the sample covariance.
///
/// Off-diagonal `(j, k)` is soft-thresholded at
/// `δ · sqrt(θ̂_jk · ln p / n)` with `θ̂_jk = n⁻¹ Σ_i (x̃_ij x̃_ik − s_jk)²`.
pub fn adaptive_threshold_estimate(x: &DataMatrix, delta: f64) -> Result<SymmetricEstimate> {
    let (n, p) = (x.n(), x.p());
    if n < 2 || p < 2 {
        return Err(CovError::Dimension(format!("adaptive thresholding needs n, p >= 2, got n = {n}, p = {p}")));
    }
    if !(delta >= 0.0) {
        return Err(CovError::InvalidParameter(format!("threshold multiplier must be >= 0, got {delta}")));
    }
    let xc = crate::la::center_columns(x)?;
    let s = sample_covariance(x, CovMode::Centered)?.into_inner();
    let xv = xc.values();
    let log_p = (p as f64).ln();
    let mut out = s.clone();
    for k in 0..p {
        for j in (k + 1)..p {
            let mut theta = 0.0;
            for i in 0..n {
                let d = xv[(i, j)] * xv[(i, k)] - s[(j, k)];
                theta += d * d;
            }
            theta /= n as f64;
            let lambda = delta * (theta * log_p / n as f64).sqrt();
            out[(j, k)] = soft_threshold(s[(j, k)], lambda);
        }
    }
    Ok(SymmetricEstimate::from_lower(out, "adap")?.with_param("delta", delta))
}

pub fn default_nercome_split(n: usize) -> usize {
    n.div_ceil(2)
}

/// NERCOME: average over random splits of `Q₁ diag(Q₁ᵀ S₂ Q₁) Q₁ᵀ`, where
/// `Q₁` are the eigenvectors of the first group's covariance and `S₂` is
/// the second group's covariance.
pub fn nercome_estimate(x: &DataMatrix, n1: usize, splits: usize, seed: u64) -> Result<SymmetricEstimate> {
    let n = x.n();
    if n1 < 2 || n1 + 2 > n {
        return Err(CovError::InvalidParameter(format!("split size n1 = {n1} must lie in [2, n - 2] for n = {n}")));
    }
    if splits == 0 {
        return Err(CovError::InvalidParameter("need at least one split".into()));
    }
    let groups: Vec<Vec<usize>> = (0..splits)
        .map(|s| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut seed::rng(seed::derive(seed, s as u64)));
            idx.truncate(n1);
            idx
        })
        .collect();
    Ok(nercome_from_groups(x, &groups)?.with_param("n1", n1).with_param("splits", splits).with_param("seed", seed))
}

/// NERCOME over explicit first-group row sets; the remaining rows form the
/// second group of each split.
pub fn nercome_from_groups(x: &DataMatrix, first_groups: &[Vec<usize>]) -> Result<SymmetricEstimate> {
    let n = x.n();
    let p = x.p();
    let parts: Vec<DMatrix<f64>> = first_groups
        .par_iter()
        .map(|g1| {
            let mut in_g1 = vec![false; n];
            for &i in g1 {
                if i >= n {
                    return Err(CovError::Dimension(format!("row {i} out of range")));
                }
                in_g1[i] = true;
            }
            let g2: Vec<usize> = (0..n).filter(|&i| !in_g1[i]).collect();
            let s1 = sample_covariance(&x.select_rows(g1)?, CovMode::Centered)?;
            let s2 = sample_covariance(&x.select_rows(&g2)?, CovMode::Centered)?;
            let eig = sym_eigen(&s1)?;
            let mut d = eig.values.clone();
            for (i, q) in eig.vectors.column_iter().enumerate() {
                d[i] = (s2.values() * q).dot(&q);
            }
            let eig = crate::la::EigenPair { vectors: eig.vectors, values: d };
            Ok(eig.recompose(|v| v))
        })
        .collect::<Result<_>>()?;
    let mut acc = DMatrix::zeros(p, p);
    for m in &parts {
        acc += m;
    }
    acc /= parts.len() as f64;
    SymmetricEstimate::from_lower(acc, "nercome")
}

/// Sample eigenvectors with oracle eigenvalues `u_iᵀ Σ u_i`.
pub fn oracle_rotation_invariant(x: &DataMatrix, sigma: &SymmetricEstimate) -> Result<SymmetricEstimate> {
    if sigma.dim() != x.p() {
        return Err(CovError::Dimension(format!("Sigma is {0}x{0} but data has {1} features", sigma.dim(), x.p())));
    }
    let s = sample_covariance(x, CovMode::Centered)?;
    let mut eig = sym_eigen(&s)?;
    for (i, u) in eig.vectors.column_iter().enumerate() {
        eig.values[i] = (sigma.values() * u).dot(&u);
    }
    SymmetricEstimate::new(eig.recompose(|v| v), "oracle_nonlin")
}
