//! Log-densities of the sufficient statistics.
//!
//! A pair's scatter matrix `V = m·Ŝ` is Wishart₂(m, Σ(a, b, γ)) and a single
//! feature's `V = m·s²` is `a²·χ²_m`. Normalizing constants are kept so the
//! composite log-likelihood is an absolute number.

use std::f64::consts::{LN_2, PI};

use statrs::function::gamma::ln_gamma;

use super::SupportAtom;
use crate::error::{CovError, Result};
use crate::la::PairStats;

/// `ln Γ₂(x) = ½ ln π + ln Γ(x) + ln Γ(x − ½)`
pub(crate) fn ln_mv_gamma2(x: f64) -> f64 {
    0.5 * PI.ln() + ln_gamma(x) + ln_gamma(x - 0.5)
}

/// Atom-dependent pieces of the bivariate kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AtomTerms {
    inv_a2: f64,
    inv_b2: f64,
    gamma_over_ab: f64,
    inv_one_minus_g2: f64,
    ln_det: f64,
}

impl AtomTerms {
    pub(crate) fn new(atom: &SupportAtom) -> Self {
        let (a, b, g) = (atom.a, atom.b, atom.gamma);
        let one_minus_g2 = 1.0 - g * g;
        Self {
            inv_a2: 1.0 / (a * a),
            inv_b2: 1.0 / (b * b),
            gamma_over_ab: g / (a * b),
            inv_one_minus_g2: 1.0 / one_minus_g2,
            ln_det: 2.0 * a.ln() + 2.0 * b.ln() + one_minus_g2.ln(),
        }
    }
}

/// Data-dependent pieces of the bivariate kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairTerms {
    v11: f64,
    v12: f64,
    v22: f64,
    half_m: f64,
    constant: f64,
}

impl PairTerms {
    pub(crate) fn new(stats: &PairStats) -> Result<Self> {
        let m = stats.dof;
        if m < 2 {
            return Err(CovError::InvalidParameter(format!("pair kernel needs dof >= 2, got {m}")));
        }
        let v = stats.scatter();
        let det = v[(0, 0)] * v[(1, 1)] - v[(0, 1)] * v[(0, 1)];
        if !(det > 0.0) {
            return Err(CovError::DegeneratePair { j: stats.j, k: stats.k });
        }
        let mf = m as f64;
        Ok(Self {
            v11: v[(0, 0)],
            v12: v[(0, 1)],
            v22: v[(1, 1)],
            half_m: 0.5 * mf,
            constant: 0.5 * (mf - 3.0) * det.ln() - mf * LN_2 - ln_mv_gamma2(0.5 * mf),
        })
    }

    #[inline]
    pub(crate) fn eval(&self, t: &AtomTerms) -> f64 {
        let trace = (self.v11 * t.inv_a2 - 2.0 * self.v12 * t.gamma_over_ab + self.v22 * t.inv_b2) * t.inv_one_minus_g2;
        self.constant - 0.5 * trace - self.half_m * t.ln_det
    }
}

/// Data-dependent pieces of the univariate kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DiagTerms {
    v: f64,
    half_m: f64,
    constant: f64,
}

impl DiagTerms {
    pub(crate) fn new(s2: f64, m: usize) -> Result<Self> {
        if !(s2 > 0.0) {
            return Err(CovError::InvalidParameter(format!("sample variance must be > 0, got {s2}")));
        }
        if m < 1 {
            return Err(CovError::InvalidParameter("variance kernel needs dof >= 1".into()));
        }
        let mf = m as f64;
        let v = mf * s2;
        Ok(Self { v, half_m: 0.5 * mf, constant: (0.5 * mf - 1.0) * v.ln() - ln_gamma(0.5 * mf) })
    }

    #[inline]
    pub(crate) fn eval(&self, a: f64) -> f64 {
        let a2 = a * a;
        self.constant - self.v / (2.0 * a2) - self.half_m * (2.0 * a2).ln()
    }
}

/// Log Wishart₂ density of the pair's scatter matrix under `Σ(a, b, γ)`:
///
/// `((m−3)/2) ln|V| − ½ tr(Σ⁻¹V) − m ln 2 − (m/2) ln|Σ| − ln Γ₂(m/2)`
pub fn log_lik_pair(stats: &PairStats, atom: &SupportAtom) -> Result<f64> {
    atom.validate()?;
    Ok(PairTerms::new(stats)?.eval(&AtomTerms::new(atom)))
}

/// Log density of `V = m·s²` under `a²·χ²_m`:
///
/// `((m−2)/2) ln V − V/(2a²) − (m/2) ln(2a²) − ln Γ(m/2)`
pub fn log_lik_diag(s2: f64, m: usize, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(CovError::InvalidParameter(format!("scale must be > 0, got {a}")));
    }
    Ok(DiagTerms::new(s2, m)?.eval(a))
}
