use nalgebra::DMatrix;

use super::em::{run_em, EmOptions, FitReport, LikelihoodTable};
use super::{build_support_grid, SupportGrid, DEFAULT_GAMMA_CLAMP, DEFAULT_SIGMA_FLOOR_REL};
use crate::error::{CovError, Result};
use crate::la::{center_columns, pair_stats, AsMatrix, DataMatrix, SymmetricEstimate};

/// Where the support triples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SupportSource {
    /// Sample standard deviations and correlations.
    Sample,
    /// The true covariance (oracle variant).
    Oracle(SymmetricEstimate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsgOptions {
    /// Number of k-means centroids; `None` means `p`.
    pub k: Option<usize>,
    pub support: SupportSource,
    pub seed: u64,
    pub em: EmOptions,
    pub gamma_clamp: f64,
    /// Scale floor as a multiple of the median sample standard deviation.
    pub sigma_floor_rel: f64,
}

impl Default for MsgOptions {
    fn default() -> Self {
        Self {
            k: None,
            support: SupportSource::Sample,
            seed: 0,
            em: EmOptions::default(),
            gamma_clamp: DEFAULT_GAMMA_CLAMP,
            sigma_floor_rel: DEFAULT_SIGMA_FLOOR_REL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MsgFit {
    pub estimate: SymmetricEstimate,
    pub grid: SupportGrid,
    pub report: FitReport,
}

/// `(σ_j, σ_k, r_jk)` for every `j > k`, in row-major lower-triangle order.
pub fn pair_triples(cov: impl AsMatrix) -> Result<Vec<[f64; 3]>> {
    let c = cov.as_matrix();
    let p = c.nrows();
    if let Some(j) = (0..p).find(|&j| !(c[(j, j)] > 0.0)) {
        return Err(CovError::DegenerateFeature { index: j });
    }
    let mut out = Vec::with_capacity(p * p.saturating_sub(1) / 2);
    for j in 1..p {
        for k in 0..j {
            let (sj, sk) = (c[(j, j)].sqrt(), c[(k, k)].sqrt());
            out.push([sj, sk, c[(j, k)] / (sj * sk)]);
        }
    }
    Ok(out)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = s.len() / 2;
    if s.len() % 2 == 1 {
        s[h]
    } else {
        0.5 * (s[h - 1] + s[h])
    }
}

/// Covariance estimate whose entries are posterior means under a tied
/// nonparametric prior fitted by EM. Columns are centered first.
///
/// The result is symmetric but not necessarily positive definite.
pub fn msg_estimate(x: &DataMatrix, opts: &MsgOptions) -> Result<MsgFit> {
    let (n, p) = (x.n(), x.p());
    if n < 3 {
        return Err(CovError::Dimension(format!("need n >= 3 observations, got {n}")));
    }
    if p < 2 {
        return Err(CovError::Dimension(format!("need p >= 2 features, got {p}")));
    }
    let n_pairs = p * (p - 1) / 2;
    let k = match opts.k {
        Some(k) if k == 0 || k > n_pairs => {
            return Err(CovError::InvalidParameter(format!("K must be in 1..={n_pairs}, got {k}")));
        }
        Some(k) => k,
        None => p.min(n_pairs),
    };
    let xc = center_columns(x)?;
    let m = n - 1;
    let mut diags = Vec::with_capacity(p);
    for j in 0..p {
        let s2 = xc.values().column(j).norm_squared() / m as f64;
        if !(s2 > 0.0) {
            return Err(CovError::DegenerateFeature { index: j });
        }
        diags.push((s2, m));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    for j in 1..p {
        for k in 0..j {
            pairs.push(pair_stats(&xc, j, k)?);
        }
    }
    let triples = match &opts.support {
        SupportSource::Sample => pairs.iter().map(|s| [s.sd_j(), s.sd_k(), s.correlation()]).collect(),
        SupportSource::Oracle(sigma) => {
            if sigma.dim() != p {
                return Err(CovError::Dimension(format!("oracle covariance is {}x{0}, data has p = {p}", sigma.dim())));
            }
            pair_triples(sigma)?
        }
    };
    let sds: Vec<f64> = diags.iter().map(|(s2, _)| s2.sqrt()).collect();
    let floor = opts.sigma_floor_rel * median(&sds);
    let grid = build_support_grid(&triples, k, opts.gamma_clamp, floor, opts.seed)?;

    let table = LikelihoodTable::new(&pairs, &diags, &grid)?;
    let (fitted, report) = run_em(&table, &grid, &opts.em)?;
    let w = fitted.weights();
    let var_theta: Vec<f64> = fitted.atoms().iter().map(|a| a.a * a.a).collect();
    let cov_theta: Vec<f64> = fitted.atoms().iter().map(|a| a.cov()).collect();
    let diag_means = table.posterior_means(w, &var_theta, 0, table.n_diag());
    let pair_means = table.posterior_means(w, &cov_theta, table.n_diag(), n_pairs);

    let mut out = DMatrix::zeros(p, p);
    for j in 0..p {
        out[(j, j)] = diag_means[j];
    }
    for (st, v) in pairs.iter().zip(&pair_means) {
        out[(st.j, st.k)] = *v;
    }
    let label = match opts.support {
        SupportSource::Sample => "msg",
        SupportSource::Oracle(_) => "oracle_msg",
    };
    let estimate = SymmetricEstimate::from_lower(out, label)?
        .with_param("K", k)
        .with_param("iterations", report.iterations)
        .with_param("converged", report.converged);
    Ok(MsgFit { estimate, grid: fitted, report })
}

#[cfg(test)]
mod tests {
    use super::super::{posterior_diag, posterior_offdiag};
    use super::*;
    use crate::sim::{make_sigma, sample_mvn, ModelSpec};

    #[test]
    fn two_features_single_swap_pair() {
        let sigma = make_sigma(&ModelSpec::new(3, 2)).unwrap();
        let x = sample_mvn(&sigma, 20, 1).unwrap();
        let fit = msg_estimate(&x, &MsgOptions::default()).unwrap();
        assert_eq!(fit.grid.len(), 2);
        assert_eq!(fit.grid.weights(), &[0.5, 0.5]);
        let xc = center_columns(&x).unwrap();
        let st = pair_stats(&xc, 1, 0).unwrap();
        let est = fit.estimate.values();
        let off = posterior_offdiag(&st, &fit.grid).unwrap();
        assert!((est[(1, 0)] - off).abs() < 1e-12 * off.abs());
        for j in 0..2 {
            let s2 = xc.values().column(j).norm_squared() / 19.0;
            let d = posterior_diag(s2, 19, &fit.grid).unwrap();
            assert!((est[(j, j)] - d).abs() < 1e-12 * d);
        }
    }

    #[test]
    fn oracle_single_atom_recovers_truth() {
        let p = 6;
        let sigma = make_sigma(&ModelSpec::new(3, p).with_seed(0)).unwrap();
        // equal scales so the compound-symmetric triples all coincide
        let cs = SymmetricEstimate::new(DMatrix::from_fn(p, p, |j, k| if j == k { 2.0 } else { 1.2 }), "cs").unwrap();
        let x = sample_mvn(&cs, 40, 2).unwrap();
        let opts = MsgOptions { k: Some(1), support: SupportSource::Oracle(cs.clone()), ..Default::default() };
        let fit = msg_estimate(&x, &opts).unwrap();
        let atom = fit.grid.atoms()[0];
        assert!((atom.a - 2f64.sqrt()).abs() < 1e-15 && (atom.gamma - 0.6).abs() < 1e-15);
        for j in 0..p {
            for k in 0..j {
                assert!((fit.estimate.values()[(j, k)] - 1.2).abs() < 1e-14);
            }
            assert!((fit.estimate.values()[(j, j)] - 2.0).abs() < 1e-14);
        }
        assert!(msg_estimate(&x, &MsgOptions { support: SupportSource::Oracle(sigma.clone()), ..Default::default() })
            .is_ok());
        let wrong = make_sigma(&ModelSpec::new(3, 4)).unwrap();
        assert!(msg_estimate(&x, &MsgOptions { support: SupportSource::Oracle(wrong), ..Default::default() }).is_err());
    }

    #[test]
    fn positive_diagonal_and_errors() {
        let sigma = make_sigma(&ModelSpec::new(1, 10)).unwrap();
        let x = sample_mvn(&sigma, 30, 3).unwrap();
        let fit = msg_estimate(&x, &MsgOptions::default()).unwrap();
        assert!((0..10).all(|j| fit.estimate.values()[(j, j)] > 0.0));
        assert_eq!(fit.estimate.method(), "msg");
        assert_eq!(fit.report.loglik_trace.len(), fit.report.iterations + 1);

        assert!(msg_estimate(&x, &MsgOptions { k: Some(46), ..Default::default() }).is_err());
        assert!(msg_estimate(&x, &MsgOptions { k: Some(0), ..Default::default() }).is_err());
        let small = x.select_rows(&[0, 1]).unwrap();
        assert!(msg_estimate(&small, &MsgOptions::default()).is_err());
        let mut v = x.values().clone();
        v.column_mut(4).fill(3.0);
        let constant = DataMatrix::new(v).unwrap();
        assert!(matches!(
            msg_estimate(&constant, &MsgOptions::default()),
            Err(CovError::DegenerateFeature { index: 4 })
        ));
    }

    #[test]
    fn deterministic_in_seed() {
        let sigma = make_sigma(&ModelSpec::new(2, 12)).unwrap();
        let x = sample_mvn(&sigma, 25, 4).unwrap();
        let opts = MsgOptions { seed: 17, ..Default::default() };
        let a = msg_estimate(&x, &opts).unwrap();
        let b = msg_estimate(&x, &opts).unwrap();
        assert_eq!(a.estimate, b.estimate);
    }
}
