//! Eigenvalue clipping to the PSD cone and the calibrated positive-definite
//! correction.

use serde::{Deserialize, Serialize};

use crate::error::{CovError, Result};
use crate::la::{sym_eigen, SymmetricEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdCorrectionConfig {
    /// Number of candidate exponents `α_i = i · alpha_max / grid_size`.
    pub grid_size: usize,
    pub alpha_max: f64,
}

impl Default for PdCorrectionConfig {
    fn default() -> Self {
        Self { grid_size: 20, alpha_max: 10.0 }
    }
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues set to zero.
pub fn project_psd(b: &SymmetricEstimate) -> Result<SymmetricEstimate> {
    let eig = sym_eigen(b)?;
    if eig.values.iter().all(|&l| l >= 0.0) {
        return Ok(b.clone());
    }
    SymmetricEstimate::new(eig.recompose(|l| l.max(0.0)), b.method())
}

/// Replaces non-positive eigenvalues by `c = 10^{−α} λ⁺_min`, with `α`
/// picked from `{α_1, …, α_K}` to minimize `‖B − P_c(B)‖_F + α`.
///
/// If no eigenvalue is positive, a ridge `1e-8 · max(1, |tr B| / p)` is used
/// instead and recorded as `fallback=true` in the metadata.
pub fn correct_pd(b: &SymmetricEstimate, cfg: &PdCorrectionConfig) -> Result<SymmetricEstimate> {
    if cfg.grid_size == 0 || !(cfg.alpha_max > 0.0) {
        return Err(CovError::InvalidParameter(format!(
            "correction grid needs grid_size >= 1 and alpha_max > 0, got {} and {}",
            cfg.grid_size, cfg.alpha_max
        )));
    }
    let eig = sym_eigen(b)?;
    if eig.values.iter().all(|&l| l > 0.0) {
        return Ok(b.clone().with_param("pd_alpha", "none"));
    }
    let p = b.dim();
    let Some(lambda_pos) = eig.values.iter().copied().filter(|&l| l > 0.0).reduce(f64::min) else {
        let c = 1e-8 * (b.trace().abs() / p as f64).max(1.0);
        let out = SymmetricEstimate::new(eig.recompose(|l| l.max(c)), b.method())?;
        return Ok(out.with_param("pd_floor", c).with_param("fallback", true));
    };

    let mut best: Option<(f64, f64, f64)> = None;
    for i in 1..=cfg.grid_size {
        let alpha = i as f64 * cfg.alpha_max / cfg.grid_size as f64;
        let c = 10f64.powf(-alpha) * lambda_pos;
        // distortion only comes from the raised eigenvalues
        let distortion = eig.values.iter().filter(|&&l| l < c).map(|&l| (c - l).powi(2)).sum::<f64>().sqrt();
        let objective = distortion + alpha;
        if best.is_none_or(|(obj, _, _)| objective < obj) {
            best = Some((objective, alpha, c));
        }
    }
    let (_, alpha, c) = best.expect("grid_size >= 1");
    let out = SymmetricEstimate::new(eig.recompose(|l| l.max(c)), b.method())?;
    Ok(out.with_param("pd_alpha", alpha).with_param("pd_floor", c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_sym(p: usize, seed: u64) -> SymmetricEstimate {
        let mut rng = seed::rng(seed);
        let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        SymmetricEstimate::symmetrized(g, "r").unwrap()
    }

    fn diag(v: &[f64]) -> SymmetricEstimate {
        SymmetricEstimate::new(DMatrix::from_diagonal(&DVector::from_column_slice(v)), "d").unwrap()
    }

    #[test]
    fn clip_negative_eigenvalue() {
        let out = project_psd(&diag(&[2.0, -1.0])).unwrap();
        assert_abs_diff_eq!(out.values(), diag(&[2.0, 0.0]).values(), epsilon = 1e-15);
        let psd = diag(&[3.0, 0.0]);
        assert_eq!(project_psd(&psd).unwrap().values(), psd.values());
    }

    #[test]
    fn projection_beats_random_psd_candidates() {
        let b = random_sym(5, 1);
        let e = sym_eigen(&b).unwrap();
        assert!(e.values[0] > 0.0 && e.values[4] < 0.0, "want a mixed spectrum");
        let proj = project_psd(&b).unwrap();
        let d0 = (b.values() - proj.values()).norm();
        let mut rng = seed::rng(2);
        for _ in 0..200 {
            let g = DMatrix::from_fn(5, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let cand = &g * g.transpose() * rng.random_range(0.01..1.0);
            assert!(d0 <= (b.values() - cand).norm() + 1e-12);
        }
        // also candidates near the projection itself
        for _ in 0..200 {
            let g = DMatrix::from_fn(5, 5, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.05);
            let cand = project_psd(&SymmetricEstimate::symmetrized(proj.values() + g, "c").unwrap()).unwrap();
            assert!(d0 <= (b.values() - cand.values()).norm() + 1e-12);
        }
    }

    #[test]
    fn pd_input_is_unchanged() {
        let b = diag(&[1.0, 2.0, 0.5]);
        let out = correct_pd(&b, &PdCorrectionConfig::default()).unwrap();
        assert_eq!(out.values(), b.values());
    }

    #[test]
    fn diag_one_zero_enumeration() {
        let b = diag(&[1.0, 0.0]);
        let out = correct_pd(&b, &PdCorrectionConfig::default()).unwrap();
        // enumerate the 20 candidates by hand: distortion is c itself
        let (mut best_obj, mut best_c) = (f64::INFINITY, 0.0);
        for i in 1..=20 {
            let alpha = i as f64 * 0.5;
            let c = 10f64.powf(-alpha);
            if c + alpha < best_obj {
                best_obj = c + alpha;
                best_c = c;
            }
        }
        assert_abs_diff_eq!(best_c, 10f64.powf(-0.5), epsilon = 1e-15);
        assert_abs_diff_eq!(out.values(), diag(&[1.0, best_c]).values(), epsilon = 1e-15);
    }

    #[test]
    fn all_nonpositive_uses_fallback() {
        let b = diag(&[-1.0, -2.0]);
        let out = correct_pd(&b, &PdCorrectionConfig::default()).unwrap();
        assert_eq!(out.params()["fallback"], "true");
        let e = sym_eigen(&out).unwrap();
        assert!(e.values[1] > 0.0);
        assert!(correct_pd(&b, &PdCorrectionConfig { grid_size: 0, alpha_max: 1.0 }).is_err());
    }

    #[test]
    fn indefinite_inputs_become_pd() {
        for s in 0..20 {
            let b = random_sym(10, 100 + s);
            let out = correct_pd(&b, &PdCorrectionConfig::default()).unwrap();
            assert!(sym_eigen(&out).unwrap().values[9] > 0.0);
        }
    }

    #[test]
    fn commutes_with_orthogonal_conjugation() {
        let b = random_sym(6, 7);
        let u = crate::sim::haar_orthogonal(6, 8);
        let rotated = SymmetricEstimate::symmetrized(u.transpose() * b.values() * &u, "r").unwrap();
        let lhs = correct_pd(&rotated, &PdCorrectionConfig::default()).unwrap();
        let rhs = u.transpose() * correct_pd(&b, &PdCorrectionConfig::default()).unwrap().values() * &u;
        assert_abs_diff_eq!(lhs.values(), &rhs, epsilon = 1e-8);
    }

    proptest! {
        #[test]
        fn projection_idempotent(seed in 0u64..300, p in 1usize..7) {
            let once = project_psd(&random_sym(p, seed)).unwrap();
            let twice = project_psd(&once).unwrap();
            prop_assert!((once.values() - twice.values()).amax() < 1e-10);
        }
    }
}
