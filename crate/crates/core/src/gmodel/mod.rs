//! Empirical-Bayes covariance estimation through a nonparametric prior on
//! `(σ_j, σ_k, r_jk)`.
//!
//! The prior lives on a fixed grid of `D = 2K` atoms: `K` k-means centroids of
//! the pair triples plus their coordinate-swapped copies. Weights are fitted
//! by EM on the pairwise composite likelihood, with the weight of each atom
//! tied to that of its swap. Entries of the estimate are posterior means.

mod em;
mod kernel;
mod kmeans;
mod msg;

use serde::{Deserialize, Serialize};

use crate::error::{CovError, Result};

pub use em::{composite_loglik, em_fit, posterior_diag, posterior_offdiag, EmOptions, FitReport};
pub use kernel::{log_lik_diag, log_lik_pair};
pub use kmeans::kmeans;
pub use msg::{msg_estimate, pair_triples, MsgFit, MsgOptions, SupportSource};

pub const DEFAULT_GAMMA_CLAMP: f64 = 1e-4;
pub const DEFAULT_SIGMA_FLOOR_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportAtom {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
}

impl SupportAtom {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(CovError::InvalidParameter(format!(
                "atom scales must be positive, got ({}, {})",
                self.a, self.b
            )));
        }
        if !(self.gamma.abs() < 1.0) {
            return Err(CovError::InvalidParameter(format!(
                "atom correlation must lie in (-1, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a, gamma: self.gamma }
    }

    /// Covariance `a·b·γ` implied by the atom.
    pub fn cov(&self) -> f64 {
        self.a * self.b * self.gamma
    }
}

/// Discrete prior whose second half is the first half with `a` and `b`
/// swapped, carrying identical weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportGrid {
    atoms: Vec<SupportAtom>,
    weights: Vec<f64>,
}

impl SupportGrid {
    /// Grid from the first `K` atoms, with uniform weights `1/(2K)`.
    pub fn from_half(half: Vec<SupportAtom>) -> Result<Self> {
        if half.is_empty() {
            return Err(CovError::InvalidParameter("support needs at least one atom".into()));
        }
        for atom in &half {
            atom.validate()?;
        }
        let d = 2 * half.len();
        let mut atoms = half.clone();
        atoms.extend(half.iter().map(SupportAtom::swapped));
        Ok(Self { atoms, weights: vec![1.0 / d as f64; d] })
    }

    /// Replaces the weights. They must be nonnegative, tied across swaps and
    /// sum to one within `1e-12`.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        let d = self.atoms.len();
        if weights.len() != d {
            return Err(CovError::Dimension(format!("expected {d} weights, got {}", weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(CovError::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let h = d / 2;
        if (0..h).any(|t| weights[t].to_bits() != weights[t + h].to_bits()) {
            return Err(CovError::InvalidParameter("weights of swapped atoms must be equal".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CovError::InvalidParameter(format!("weights must sum to 1, got {total}")));
        }
        self.weights = weights;
        Ok(self)
    }

    /// Ties each weight to its swap and rescales to a probability vector.
    pub fn with_half_weights(self, half: &[f64]) -> Result<Self> {
        let total: f64 = 2.0 * half.iter().sum::<f64>();
        if !(total > 0.0) {
            return Err(CovError::InvalidParameter("weights must not all be zero".into()));
        }
        let mut w: Vec<f64> = half.iter().map(|v| v / total).collect();
        w.extend_from_within(..);
        self.with_weights(w)
    }

    pub fn atoms(&self) -> &[SupportAtom] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn half_len(&self) -> usize {
        self.atoms.len() / 2
    }

    pub(crate) fn set_weights_unchecked(&mut self, weights: Vec<f64>) {
        debug_assert_eq!(weights.len(), self.atoms.len());
        self.weights = weights;
    }
}

/// Support grid from pair triples `(s_j, s_k, r_jk)`: `K` k-means centroids
/// plus their swaps, correlations clamped to `±(1 − gamma_clamp)` and scales
/// floored at `sigma_floor`.
pub fn build_support_grid(
    triples: &[[f64; 3]],
    k: usize,
    gamma_clamp: f64,
    sigma_floor: f64,
    seed: u64,
) -> Result<SupportGrid> {
    if triples.is_empty() {
        return Err(CovError::InvalidParameter("no pair triples to build a support from".into()));
    }
    if k < 1 {
        return Err(CovError::InvalidParameter("support size K must be >= 1".into()));
    }
    if !(gamma_clamp > 0.0 && gamma_clamp < 1.0) || !(sigma_floor > 0.0) {
        return Err(CovError::InvalidParameter(format!(
            "need 0 < gamma_clamp < 1 and sigma_floor > 0, got {gamma_clamp} and {sigma_floor}"
        )));
    }
    let centroids = kmeans(triples, k, seed, 100)?;
    let g_max = 1.0 - gamma_clamp;
    let half = centroids
        .into_iter()
        .map(|[a, b, g]| SupportAtom { a: a.max(sigma_floor), b: b.max(sigma_floor), gamma: g.clamp(-g_max, g_max) })
        .collect();
    SupportGrid::from_half(half)
}
