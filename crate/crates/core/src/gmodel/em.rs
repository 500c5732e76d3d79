use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{AtomTerms, DiagTerms, PairTerms};
use super::SupportGrid;
use crate::error::{CovError, Result};
use crate::la::PairStats;

// Rows per parallel work unit. Fixed so the reduction order never depends on
// the thread count.
const CHUNK: usize = 128;

// Below this a row's scaled mixture is recomputed in the log domain.
const TINY: f64 = 1e-280;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the weight vector of every iterate in the report.
    #[serde(default)]
    pub record_weights: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iter: 200, record_weights: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Composite log-likelihood of the initial weights followed by one value
    /// per EM update.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_trace: Option<Vec<Vec<f64>>>,
}

/// Per-row log-likelihoods of every atom, plus the same values shifted by the
/// row maximum and exponentiated. Rows are the features first, then the pairs.
pub(crate) struct LikelihoodTable {
    d: usize,
    n_diag: usize,
    rows: usize,
    ll: Vec<f64>,
    scaled: Vec<f64>,
    row_max: Vec<f64>,
}

enum RowSpec {
    Diag(DiagTerms),
    Pair(PairTerms),
}

impl LikelihoodTable {
    pub(crate) fn new(pairs: &[PairStats], diags: &[(f64, usize)], grid: &SupportGrid) -> Result<Self> {
        let d = grid.len();
        let mut specs = Vec::with_capacity(diags.len() + pairs.len());
        for &(s2, m) in diags {
            specs.push(RowSpec::Diag(DiagTerms::new(s2, m)?));
        }
        for st in pairs {
            specs.push(RowSpec::Pair(PairTerms::new(st)?));
        }
        let rows = specs.len();
        if rows == 0 {
            return Err(CovError::InvalidParameter("no statistics to fit".into()));
        }
        let terms: Vec<AtomTerms> = grid.atoms().iter().map(AtomTerms::new).collect();
        let a: Vec<f64> = grid.atoms().iter().map(|t| t.a).collect();

        let mut ll = vec![0.0; rows * d];
        ll.par_chunks_mut(d).zip(specs.par_iter()).for_each(|(row, spec)| match spec {
            RowSpec::Diag(t) => row.iter_mut().zip(&a).for_each(|(v, &a)| *v = t.eval(a)),
            RowSpec::Pair(t) => row.iter_mut().zip(&terms).for_each(|(v, at)| *v = t.eval(at)),
        });
        if let Some(i) = ll.iter().position(|v| !v.is_finite()) {
            return Err(CovError::Numeric(format!("non-finite log-likelihood at row {} atom {}", i / d, i % d)));
        }
        let row_max: Vec<f64> = ll.chunks(d).map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let scaled: Vec<f64> = ll
            .par_chunks(d)
            .zip(row_max.par_iter())
            .flat_map_iter(|(r, &m)| r.iter().map(move |v| (v - m).exp()))
            .collect();
        Ok(Self { d, n_diag: diags.len(), rows, ll, scaled, row_max })
    }

    pub(crate) fn rows(&self) -> usize {
        self.rows
    }

    /// Writes the row's posterior atom probabilities into `out` and returns
    /// the row's log mixture density.
    fn row_posterior(&self, r: usize, w: &[f64], out: &mut [f64]) -> f64 {
        let d = self.d;
        let f = &self.scaled[r * d..(r + 1) * d];
        let mut s = 0.0;
        for l in 0..d {
            out[l] = w[l] * f[l];
            s += out[l];
        }
        if s > TINY {
            out.iter_mut().for_each(|v| *v /= s);
            return self.row_max[r] + s.ln();
        }
        // log-domain path for rows whose dominant atoms carry (almost) no weight
        let ll = &self.ll[r * d..(r + 1) * d];
        let mut m = f64::NEG_INFINITY;
        for l in 0..d {
            out[l] = w[l].ln() + ll[l];
            m = m.max(out[l]);
        }
        let mut s = 0.0;
        for v in out.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        out.iter_mut().for_each(|v| *v /= s);
        m + s.ln()
    }

    /// Composite log-likelihood and summed responsibilities.
    pub(crate) fn e_step(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.d;
        let n_chunks = self.rows.div_ceil(CHUNK);
        let parts: Vec<(f64, Vec<f64>)> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut ll = 0.0;
                let mut resp = vec![0.0; d];
                let mut buf = vec![0.0; d];
                for r in c * CHUNK..((c + 1) * CHUNK).min(self.rows) {
                    ll += self.row_posterior(r, w, &mut buf);
                    resp.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
                }
                (ll, resp)
            })
            .collect();
        let mut ll = 0.0;
        let mut resp = vec![0.0; d];
        for (l, r) in parts {
            ll += l;
            resp.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
        }
        if !ll.is_finite() {
            return Err(CovError::Numeric("composite log-likelihood is not finite".into()));
        }
        Ok((ll, resp))
    }

    /// Posterior means of `theta` for rows `first..first + count`.
    pub(crate) fn posterior_means(&self, w: &[f64], theta: &[f64], first: usize, count: usize) -> Vec<f64> {
        (first..first + count)
            .into_par_iter()
            .map_init(
                || vec![0.0; self.d],
                |buf, r| {
                    self.row_posterior(r, w, buf);
                    buf.iter().zip(theta).map(|(p, t)| p * t).sum()
                },
            )
            .collect()
    }

    pub(crate) fn n_diag(&self) -> usize {
        self.n_diag
    }

    #[cfg(test)]
    pub(crate) fn responsibilities(&self, r: usize, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.row_posterior(r, w, &mut out);
        out
    }
}

/// Tied M-step: `w_τ = w_{τ+D/2} = (R_τ + R_{τ+D/2}) / (2 · rows)`.
fn m_step(resp: &[f64], rows: usize) -> Vec<f64> {
    let h = resp.len() / 2;
    let denom = 2.0 * rows as f64;
    let mut w = vec![0.0; resp.len()];
    for t in 0..h {
        let v = (resp[t] + resp[t + h]) / denom;
        w[t] = v;
        w[t + h] = v;
    }
    w
}

fn relative_change(new: f64, old: f64) -> f64 {
    let diff = (new - old).abs();
    if old == 0.0 {
        diff
    } else {
        diff / old.abs()
    }
}

pub(crate) fn run_em(
    table: &LikelihoodTable,
    grid: &SupportGrid,
    opts: &EmOptions,
) -> Result<(SupportGrid, FitReport)> {
    if !(opts.tol >= 0.0) {
        return Err(CovError::InvalidParameter(format!("tolerance must be >= 0, got {}", opts.tol)));
    }
    let mut w = grid.weights().to_vec();
    if w.iter().all(|&v| v == 0.0) {
        return Err(CovError::InvalidParameter("weights must not all be zero".into()));
    }
    let (mut ll, mut resp) = table.e_step(&w)?;
    let mut trace = vec![ll];
    let mut weight_trace = opts.record_weights.then(|| vec![w.clone()]);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        w = m_step(&resp, table.rows());
        let (next, r) = table.e_step(&w)?;
        iterations += 1;
        trace.push(next);
        if let Some(t) = weight_trace.as_mut() {
            t.push(w.clone());
        }
        let change = relative_change(next, ll);
        ll = next;
        resp = r;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let mut fitted = grid.clone();
    fitted.set_weights_unchecked(w);
    Ok((fitted, FitReport { loglik_trace: trace, iterations, converged, weight_trace }))
}

/// EM for the tied mixture weights on the composite likelihood of the
/// feature variances and pair scatters. Starts from the grid's weights.
pub fn em_fit(
    pairs: &[PairStats],
    diags: &[(f64, usize)],
    grid: &SupportGrid,
    opts: &EmOptions,
) -> Result<(SupportGrid, FitReport)> {
    let table = LikelihoodTable::new(pairs, diags, grid)?;
    run_em(&table, grid, opts)
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `Σ_pairs log Σ_l w_l f₂(pair | atom_l) + Σ_features log Σ_l w_l f₁(s² | a_l)`
pub fn composite_loglik(pairs: &[PairStats], diags: &[(f64, usize)], grid: &SupportGrid) -> Result<f64> {
    let w = grid.weights();
    if w.iter().all(|&v| v == 0.0) {
        return Err(CovError::InvalidParameter("weights must not all be zero".into()));
    }
    let log_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let terms: Vec<AtomTerms> = grid.atoms().iter().map(AtomTerms::new).collect();
    let mut total = 0.0;
    for &(s2, m) in diags {
        let t = DiagTerms::new(s2, m)?;
        total += log_sum_exp(grid.atoms().iter().zip(&log_w).map(|(at, lw)| lw + t.eval(at.a)));
    }
    for st in pairs {
        let t = PairTerms::new(st)?;
        total += log_sum_exp(terms.iter().zip(&log_w).map(|(at, lw)| lw + t.eval(at)));
    }
    if !total.is_finite() {
        return Err(CovError::Numeric("composite log-likelihood is not finite".into()));
    }
    Ok(total)
}

fn posterior_mean(
    log_lik: impl Iterator<Item = f64>,
    grid: &SupportGrid,
    theta: impl Iterator<Item = f64>,
) -> Result<f64> {
    let lw: Vec<f64> = log_lik.zip(grid.weights()).map(|(l, w)| w.ln() + l).collect();
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(CovError::InvalidParameter("weights must not all be zero".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (l, t) in lw.iter().zip(theta) {
        let e = (l - m).exp();
        num += e * t;
        den += e;
    }
    Ok(num / den)
}

/// Posterior mean of `a·b·γ` given one pair's statistics.
pub fn posterior_offdiag(stats: &PairStats, grid: &SupportGrid) -> Result<f64> {
    let t = PairTerms::new(stats)?;
    posterior_mean(grid.atoms().iter().map(|a| t.eval(&AtomTerms::new(a))), grid, grid.atoms().iter().map(|a| a.cov()))
}

/// Posterior mean of `a²` given a sample variance with `m` degrees of freedom.
pub fn posterior_diag(s2: f64, m: usize, grid: &SupportGrid) -> Result<f64> {
    let t = DiagTerms::new(s2, m)?;
    posterior_mean(grid.atoms().iter().map(|a| t.eval(a.a)), grid, grid.atoms().iter().map(|a| a.a * a.a))
}

#[cfg(test)]
mod tests {
    use super::super::{log_lik_diag, log_lik_pair, SupportAtom};
    use super::*;
    use crate::la::{center_columns, pair_stats};
    use crate::seed;
    use crate::sim::{make_sigma, sample_mvn, ModelSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn stats_of(p: usize, n: usize, seed: u64) -> (Vec<PairStats>, Vec<(f64, usize)>) {
        let sigma = make_sigma(&ModelSpec::new(3, p)).unwrap();
        let x = sample_mvn(&sigma, n, seed).unwrap();
        let xc = center_columns(&x).unwrap();
        let mut pairs = Vec::new();
        for j in 1..p {
            for k in 0..j {
                pairs.push(pair_stats(&xc, j, k).unwrap());
            }
        }
        let diags = (0..p).map(|j| (xc.values().column(j).norm_squared() / (n - 1) as f64, n - 1)).collect();
        (pairs, diags)
    }

    fn random_grid(k: usize, seed: u64) -> SupportGrid {
        let mut rng = seed::rng(seed);
        let half = (0..k)
            .map(|_| SupportAtom {
                a: rng.random_range(0.6..2.0),
                b: rng.random_range(0.6..2.0),
                gamma: rng.random_range(-0.2..0.95),
            })
            .collect();
        SupportGrid::from_half(half).unwrap()
    }

    fn naive_composite(pairs: &[PairStats], diags: &[(f64, usize)], grid: &SupportGrid) -> f64 {
        let mut total = 0.0;
        for &(s2, m) in diags {
            let mix: f64 =
                grid.atoms().iter().zip(grid.weights()).map(|(a, w)| w * log_lik_diag(s2, m, a.a).unwrap().exp()).sum();
            total += mix.ln();
        }
        for st in pairs {
            let mix: f64 =
                grid.atoms().iter().zip(grid.weights()).map(|(a, w)| w * log_lik_pair(st, a).unwrap().exp()).sum();
            total += mix.ln();
        }
        total
    }

    #[test]
    fn collapsed_and_point_mass_mixtures() {
        let (pairs, diags) = stats_of(3, 20, 1);
        let atom = SupportAtom { a: 1.2, b: 1.2, gamma: 0.5 };
        let g = SupportGrid::from_half(vec![atom]).unwrap();
        let direct: f64 = diags.iter().map(|&(s2, m)| log_lik_diag(s2, m, 1.2).unwrap()).sum::<f64>()
            + pairs.iter().map(|st| log_lik_pair(st, &atom).unwrap()).sum::<f64>();
        assert!((composite_loglik(&pairs, &diags, &g).unwrap() - direct).abs() < 1e-10 * direct.abs());

        let g = random_grid(2, 3);
        let w = vec![0.5, 0.0, 0.5, 0.0];
        let g = g.with_weights(w).unwrap();
        // the swap of atom 0 is a different atom, so use it only through a symmetric pair
        let a0 = g.atoms()[0];
        let expected: f64 = diags
            .iter()
            .map(|&(s2, m)| {
                (0.5 * log_lik_diag(s2, m, a0.a).unwrap().exp() + 0.5 * log_lik_diag(s2, m, a0.b).unwrap().exp()).ln()
            })
            .sum::<f64>()
            + pairs
                .iter()
                .map(|st| {
                    (0.5 * log_lik_pair(st, &a0).unwrap().exp() + 0.5 * log_lik_pair(st, &a0.swapped()).unwrap().exp())
                        .ln()
                })
                .sum::<f64>();
        assert!((composite_loglik(&pairs, &diags, &g).unwrap() - expected).abs() < 1e-10 * expected.abs());
    }

    #[test]
    fn composite_matches_naive_sum() {
        let (pairs, diags) = stats_of(3, 15, 2);
        let g = random_grid(2, 4).with_half_weights(&[0.7, 0.3]).unwrap();
        let naive = naive_composite(&pairs, &diags, &g);
        let got = composite_loglik(&pairs, &diags, &g).unwrap();
        assert!((got - naive).abs() <= 1e-10 * naive.abs(), "{got} vs {naive}");
        // the table path agrees too
        let table = LikelihoodTable::new(&pairs, &diags, &g).unwrap();
        let (ll, resp) = table.e_step(g.weights()).unwrap();
        assert!((ll - naive).abs() <= 1e-10 * naive.abs());
        assert!((resp.iter().sum::<f64>() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn one_swap_pair_stays_half() {
        let (pairs, diags) = stats_of(4, 25, 3);
        let g = random_grid(1, 5);
        let (fit, rep) = em_fit(&pairs, &diags, &g, &EmOptions { record_weights: true, ..Default::default() }).unwrap();
        assert_eq!(fit.weights(), &[0.5, 0.5]);
        assert!(rep.weight_trace.unwrap().iter().all(|w| w == &[0.5, 0.5]));
        assert!(rep.converged);
    }

    #[test]
    fn identical_atoms_stay_uniform() {
        let (pairs, diags) = stats_of(4, 25, 4);
        let atom = SupportAtom { a: 1.1, b: 1.1, gamma: 0.4 };
        let g = SupportGrid::from_half(vec![atom; 3]).unwrap();
        let (fit, _) = em_fit(&pairs, &diags, &g, &EmOptions::default()).unwrap();
        for w in fit.weights() {
            assert!((w - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_matches_hand_update() {
        let (pairs, diags) = stats_of(2, 12, 5);
        let g = random_grid(2, 6).with_half_weights(&[0.6, 0.4]).unwrap();
        let (fit, rep) =
            em_fit(&pairs, &diags, &g, &EmOptions { tol: 0.0, max_iter: 1, record_weights: false }).unwrap();
        assert_eq!(rep.iterations, 1);

        // posterior probabilities with plain exponentials, then the tied update
        let w = g.weights();
        let mut r = [0.0f64; 4];
        let rows: Vec<Vec<f64>> = diags
            .iter()
            .map(|&(s2, m)| g.atoms().iter().map(|a| log_lik_diag(s2, m, a.a).unwrap().exp()).collect())
            .chain(pairs.iter().map(|st| g.atoms().iter().map(|a| log_lik_pair(st, a).unwrap().exp()).collect()))
            .collect();
        for f in &rows {
            let den: f64 = (0..4).map(|l| w[l] * f[l]).sum();
            for l in 0..4 {
                r[l] += w[l] * f[l] / den;
            }
        }
        let p = 2.0;
        for t in 0..2 {
            let expected = (r[t] + r[t + 2]) / (p * (p + 1.0));
            assert!((fit.weights()[t] - expected).abs() <= 1e-10 * expected);
            assert_eq!(fit.weights()[t].to_bits(), fit.weights()[t + 2].to_bits());
        }
    }

    #[test]
    fn monotone_trace_and_tied_weights() {
        for s in 0..6 {
            let p = if s % 2 == 0 { 5 } else { 8 };
            let (pairs, diags) = stats_of(p, 30, 10 + s);
            let g = random_grid(4, 20 + s);
            let opts = EmOptions { tol: 1e-10, max_iter: 60, record_weights: true };
            let (_, rep) = em_fit(&pairs, &diags, &g, &opts).unwrap();
            let weights = rep.weight_trace.unwrap();
            let mut prev = f64::NEG_INFINITY;
            for (i, w) in weights.iter().enumerate() {
                assert!((0..4).all(|t| w[t].to_bits() == w[t + 4].to_bits()));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let ll = composite_loglik(&pairs, &diags, &g.clone().with_weights(w.clone()).unwrap()).unwrap();
                assert!((ll - rep.loglik_trace[i]).abs() < 1e-9 * ll.abs());
                assert!(ll >= prev - 1e-8, "iteration {i}: {ll} < {prev}");
                prev = ll;
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_fit() {
        let (pairs, diags) = stats_of(30, 40, 7);
        let g = random_grid(10, 8);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| em_fit(&pairs, &diags, &g, &EmOptions::default()).unwrap())
        };
        let (a, ra) = run(1);
        let (b, rb) = run(3);
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn responsibilities_survive_large_n() {
        let (pairs, diags) = stats_of(6, 200, 9);
        let g = random_grid(6, 10).with_half_weights(&[1e-300, 0.2, 0.2, 0.2, 0.2, 0.2]).unwrap();
        let table = LikelihoodTable::new(&pairs, &diags, &g).unwrap();
        for r in 0..table.rows() {
            let resp = table.responsibilities(r, g.weights());
            assert!(resp.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!((resp.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        let (_, rep) = em_fit(&pairs, &diags, &g, &EmOptions::default()).unwrap();
        assert!(rep.loglik_trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn posterior_degenerate_priors() {
        let (pairs, _) = stats_of(3, 20, 11);
        let atom = SupportAtom { a: 1.3, b: 0.7, gamma: 0.25 };
        let single = SupportGrid::from_half(vec![atom, SupportAtom { a: 2.0, b: 2.0, gamma: -0.5 }])
            .unwrap()
            .with_half_weights(&[1.0, 0.0])
            .unwrap();
        for st in &pairs {
            // atom and its swap share a·b·γ
            assert!((posterior_offdiag(st, &single).unwrap() - atom.cov()).abs() < 1e-15);
        }
        let zero = SupportGrid::from_half(vec![SupportAtom { a: 1.0, b: 2.0, gamma: 0.0 }; 2]).unwrap();
        assert_eq!(posterior_offdiag(&pairs[0], &zero).unwrap(), 0.0);
        let g = SupportGrid::from_half(vec![SupportAtom { a: 1.5, b: 1.5, gamma: 0.1 }]).unwrap();
        assert!((posterior_diag(0.3, 10, &g).unwrap() - 2.25).abs() < 1e-15);
    }

    #[test]
    fn posterior_offdiag_direct_sum() {
        let (pairs, _) = stats_of(3, 25, 12);
        let g = random_grid(2, 13).with_half_weights(&[0.3, 0.7]).unwrap();
        for st in &pairs {
            let (mut num, mut den) = (0.0, 0.0);
            for (a, w) in g.atoms().iter().zip(g.weights()) {
                let f = log_lik_pair(st, a).unwrap().exp();
                num += w * f * a.a * a.b * a.gamma;
                den += w * f;
            }
            let got = posterior_offdiag(st, &g).unwrap();
            assert!((got - num / den).abs() <= 1e-10 * (num / den).abs().max(1e-3));
        }
    }

    #[test]
    fn posterior_diag_two_scales() {
        let g = SupportGrid::from_half(vec![SupportAtom { a: 1.0, b: 10.0, gamma: 0.0 }]).unwrap();
        let got = posterior_diag(1.0, 50, &g).unwrap();
        let f1 = log_lik_diag(1.0, 50, 1.0).unwrap();
        let f10 = log_lik_diag(1.0, 50, 10.0).unwrap();
        let direct = (1.0 + 100.0 * (f10 - f1).exp()) / (1.0 + (f10 - f1).exp());
        assert!((got - direct).abs() < 1e-12);
        assert!((got - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn posterior_inside_hull(seed in 0u64..200, s2 in 0.05f64..20.0, m in 2usize..80) {
            let g = random_grid(3, seed).with_half_weights(&[0.2, 0.5, 0.3]).unwrap();
            let sq: Vec<f64> = g.atoms().iter().map(|a| a.a * a.a).collect();
            let lo = sq.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = posterior_diag(s2, m, &g).unwrap();
            prop_assert!(v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12));

            let (pairs, _) = stats_of(3, m.max(4), seed);
            let bound = g.atoms().iter().map(|a| a.cov().abs()).fold(0.0, f64::max);
            for st in &pairs {
                prop_assert!(posterior_offdiag(st, &g).unwrap().abs() <= bound * (1.0 + 1e-12));
            }
        }
    }
}
