//! Population covariance models and seeded Gaussian data.
//!
//! | id | name            | structure                                               |
//! |----|-----------------|---------------------------------------------------------|
//! | 1  | sparse          | banded block `max(1 − |j−k|/10, 0)` ⊕ identity          |
//! | 2  | hypercorrelated | compound-symmetric blocks 0.8 / 0.2, cross blocks 0.4   |
//! | 3  | dense-0.7       | constant correlation 0.7                                |
//! | 4  | dense-0.9       | constant correlation 0.9                                |
//! | 5  | orthogonal      | Haar eigenvectors, eigenvalues `U(1, 4)`                |
//! | 6  | spiked          | Haar eigenvectors, eigenvalues `(4, 3, 2, 1, …, 1)`     |
//!
//! Models 1–4 assign the low standard deviation to the first `⌊p/2⌋`
//! features and the high one to the rest. Models 1 and 2 need even `p`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{CovError, Result};
use crate::la::{sym_eigen, DataMatrix, SymmetricEstimate};
use crate::seed;

/// Optional overrides of a model's fixed constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Standard deviations of the first and second halves of the features.
    pub sds: Option<(f64, f64)>,
    /// Constant correlation for models 3 and 4.
    pub rho: Option<f64>,
    /// Model 2 correlations: (first block, second block, cross blocks).
    pub block_rhos: Option<(f64, f64, f64)>,
    /// Model 1 band width (correlation reaches zero at this lag).
    pub band: Option<f64>,
    /// Model 5 eigenvalue range.
    pub eig_range: Option<(f64, f64)>,
    /// Model 6 leading eigenvalues; the rest are 1.
    pub spikes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: u8,
    pub p: usize,
    #[serde(default)]
    pub params: ModelParams,
    /// Fixes the random parts of models 5 and 6.
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(model_id: u8, p: usize) -> Self {
        Self { model_id, p, params: ModelParams::default(), seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.model_id {
            1 => "sparse",
            2 => "hypercorrelated",
            3 => "dense-0.7",
            4 => "dense-0.9",
            5 => "orthogonal",
            6 => "spiked",
            _ => "unknown",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.model_id) {
            return Err(CovError::Config(format!("model id must be 1..6, got {}", self.model_id)));
        }
        if self.p < 2 {
            return Err(CovError::Config(format!("model dimension must be >= 2, got {}", self.p)));
        }
        if matches!(self.model_id, 1 | 2) && !self.p.is_multiple_of(2) {
            return Err(CovError::Config(format!("model {} needs an even dimension, got {}", self.model_id, self.p)));
        }
        Ok(())
    }
}

fn half_sds(p: usize, (low, high): (f64, f64)) -> Vec<f64> {
    (0..p).map(|j| if j < p / 2 { low } else { high }).collect()
}

fn scale_correlation(corr: DMatrix<f64>, sds: &[f64], label: &str) -> Result<SymmetricEstimate> {
    let p = sds.len();
    let sigma = DMatrix::from_fn(p, p, |j, k| corr[(j, k)] * sds[j] * sds[k]);
    SymmetricEstimate::from_lower(sigma, label)
}

/// Population covariance of the given model. Deterministic in `spec`.
pub fn make_sigma(spec: &ModelSpec) -> Result<SymmetricEstimate> {
    spec.validate()?;
    let p = spec.p;
    let prm = &spec.params;
    let label = format!("model{}", spec.model_id);
    let sigma = match spec.model_id {
        1 => {
            let band = prm.band.unwrap_or(10.0);
            let h = p / 2;
            let corr = DMatrix::from_fn(p, p, |j, k| {
                if j < h && k < h {
                    (1.0 - j.abs_diff(k) as f64 / band).max(0.0)
                } else if j == k {
                    1.0
                } else {
                    0.0
                }
            });
            scale_correlation(corr, &half_sds(p, prm.sds.unwrap_or((1.0, 1.5))), &label)?
        }
        2 => {
            let (r11, r22, r12) = prm.block_rhos.unwrap_or((0.8, 0.2, 0.4));
            let h = p / 2;
            let corr = DMatrix::from_fn(p, p, |j, k| match (j < h, k < h) {
                _ if j == k => 1.0,
                (true, true) => r11,
                (false, false) => r22,
                _ => r12,
            });
            scale_correlation(corr, &half_sds(p, prm.sds.unwrap_or((1.0, 2.0))), &label)?
        }
        3 | 4 => {
            let rho = prm.rho.unwrap_or(if spec.model_id == 3 { 0.7 } else { 0.9 });
            let corr = DMatrix::from_fn(p, p, |j, k| if j == k { 1.0 } else { rho });
            scale_correlation(corr, &half_sds(p, prm.sds.unwrap_or((1.0, 1.5))), &label)?
        }
        5 | 6 => {
            let mut rng = seed::rng(seed::derive(spec.seed, spec.model_id as u64));
            let u = haar_orthogonal_with(p, &mut rng);
            let eig: Vec<f64> = if spec.model_id == 5 {
                let (lo, hi) = prm.eig_range.unwrap_or((1.0, 4.0));
                if !(lo > 0.0 && hi >= lo) {
                    return Err(CovError::Config(format!("invalid eigenvalue range ({lo}, {hi})")));
                }
                let dist = Uniform::new_inclusive(lo, hi).map_err(|e| CovError::Config(e.to_string()))?;
                (0..p).map(|_| rng.sample(dist)).collect()
            } else {
                let spikes = prm.spikes.clone().unwrap_or_else(|| vec![4.0, 3.0, 2.0]);
                (0..p).map(|i| spikes.get(i).copied().unwrap_or(1.0)).collect()
            };
            if eig.iter().any(|&l| !(l > 0.0)) {
                return Err(CovError::Config("eigenvalues must be positive".into()));
            }
            // Σ = Uᵀ diag(l) U
            let scaled = DMatrix::from_fn(p, p, |i, j| eig[i] * u[(i, j)]);
            SymmetricEstimate::symmetrized(u.transpose() * scaled, &label)?
        }
        _ => unreachable!("validated above"),
    };
    let min_eig = sym_eigen(&sigma)?.values[p - 1];
    if !(min_eig > 0.0) {
        return Err(CovError::Config(format!(
            "model {} with these parameters is not positive definite",
            spec.model_id
        )));
    }
    Ok(sigma.with_param("model", spec.model_id).with_param("seed", spec.seed))
}

fn haar_orthogonal_with(p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for (i, mut col) in q.column_iter_mut().enumerate() {
        if r[(i, i)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// Haar-distributed `p × p` orthogonal matrix: QR of a standard Gaussian
/// matrix with the columns of `Q` flipped so that `R` has a positive diagonal.
pub fn haar_orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    haar_orthogonal_with(p, &mut seed::rng(seed))
}

/// `n` rows of `N(0, Σ)` as `L z` with `Σ = L Lᵀ`. Normals are drawn row by row.
pub fn sample_mvn(sigma: &SymmetricEstimate, n: usize, seed: u64) -> Result<DataMatrix> {
    if n == 0 {
        return Err(CovError::InvalidParameter("sample size must be >= 1".into()));
    }
    let p = sigma.dim();
    let chol = sigma.values().clone().cholesky().ok_or(CovError::NotPositiveDefinite)?;
    let l = chol.l();
    let mut rng = seed::rng(seed);
    let z = DMatrix::from_row_iterator(n, p, (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)));
    DataMatrix::new(z * l.transpose())
}

/// Eigenvalues used to generate models 5 and 6, sorted descending.
pub fn generating_spectrum(spec: &ModelSpec) -> Option<DVector<f64>> {
    if !matches!(spec.model_id, 5 | 6) {
        return None;
    }
    let p = spec.p;
    let mut eig: Vec<f64> = if spec.model_id == 5 {
        let mut rng = seed::rng(seed::derive(spec.seed, 5));
        let _ = haar_orthogonal_with(p, &mut rng);
        let (lo, hi) = spec.params.eig_range.unwrap_or((1.0, 4.0));
        let dist = Uniform::new_inclusive(lo, hi).ok()?;
        (0..p).map(|_| rng.sample(dist)).collect()
    } else {
        let spikes = spec.params.spikes.clone().unwrap_or_else(|| vec![4.0, 3.0, 2.0]);
        (0..p).map(|i| spikes.get(i).copied().unwrap_or(1.0)).collect()
    };
    eig.sort_by(|a, b| b.total_cmp(a));
    Some(DVector::from_vec(eig))
}
