//! Dense linear-algebra and statistics primitives shared by every estimator.
//!
//! Two covariance conventions coexist in this crate:
//!
//! * [`CovMode::ZeroMean`]: `S = XᵀX / n`, for data with a known zero mean.
//!   The linear-rule algebra in [`crate::baselines`] needs this one.
//! * [`CovMode::Centered`]: `S = (X − X̄)ᵀ(X − X̄) / (n − 1)`, used by the
//!   simulation and evaluation pipeline.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{CovError, Result};

/// An `n × p` observation matrix: rows are samples, columns are features.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(CovError::Dimension(format!(
                "data matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let n = values.nrows();
            return Err(CovError::NonFinite(format!("data entry ({}, {})", pos % n, pos / n)));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(CovError::Dimension(format!("row {i} has a different length")));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of features.
    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// New data matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.n()) {
            return Err(CovError::Dimension("row index out of range".into()));
        }
        Self::new(self.values.select_rows(rows.iter()))
    }
}

/// A `p × p` symmetric matrix together with the method that produced it.
///
/// Symmetry is exact: `values[(j, k)] == values[(k, j)]` bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEstimate {
    values: DMatrix<f64>,
    method: String,
    params: BTreeMap<String, String>,
}

impl SymmetricEstimate {
    /// Validates squareness, finiteness and exact symmetry.
    pub fn new(values: DMatrix<f64>, method: impl Into<String>) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(CovError::Dimension(format!(
                "expected a non-empty square matrix, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let p = values.nrows();
        for k in 0..p {
            for j in 0..p {
                let v = values[(j, k)];
                if !v.is_finite() {
                    return Err(CovError::NonFinite(format!("matrix entry ({j}, {k})")));
                }
                if j > k && v.to_bits() != values[(k, j)].to_bits() {
                    return Err(CovError::NotSymmetric { row: j, col: k });
                }
            }
        }
        Ok(Self { values, method: method.into(), params: BTreeMap::new() })
    }

    /// Copies the lower triangle onto the upper one, then validates.
    pub fn from_lower(mut values: DMatrix<f64>, method: impl Into<String>) -> Result<Self> {
        if values.is_square() {
            mirror_lower(&mut values);
        }
        Self::new(values, method)
    }

    /// Averages `A` and `Aᵀ`, then validates.
    pub fn symmetrized(values: DMatrix<f64>, method: impl Into<String>) -> Result<Self> {
        if !values.is_square() {
            return Self::new(values, method);
        }
        let mut sym = (&values + values.transpose()) * 0.5;
        mirror_lower(&mut sym);
        Self::new(sym, method)
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = method.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn params(&self) -> &BTreeMap<String, String> {
        &self.params
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }
}

/// Anything that can be viewed as a dense matrix.
pub trait AsMatrix {
    fn as_matrix(&self) -> &DMatrix<f64>;
}

impl AsMatrix for DMatrix<f64> {
    fn as_matrix(&self) -> &DMatrix<f64> {
        self
    }
}

impl AsMatrix for SymmetricEstimate {
    fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

impl<T: AsMatrix + ?Sized> AsMatrix for &T {
    fn as_matrix(&self) -> &DMatrix<f64> {
        (**self).as_matrix()
    }
}

pub(crate) fn mirror_lower(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for k in 0..p {
        for j in (k + 1)..p {
            m[(k, j)] = m[(j, k)];
        }
    }
}

/// Sufficient statistics of a feature pair: the 2×2 sample covariance of
/// columns `j` and `k` and its degrees of freedom `m`.
///
/// The scatter matrix `V = m · cov` is Wishart(m, Σ) under normal data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub j: usize,
    pub k: usize,
    pub dof: usize,
    /// `[[s_j², s_jk], [s_jk, s_k²]]`
    pub cov: Matrix2<f64>,
}

impl PairStats {
    pub fn scatter(&self) -> Matrix2<f64> {
        self.cov * self.dof as f64
    }

    pub fn sd_j(&self) -> f64 {
        self.cov[(0, 0)].sqrt()
    }

    pub fn sd_k(&self) -> f64 {
        self.cov[(1, 1)].sqrt()
    }

    pub fn correlation(&self) -> f64 {
        self.cov[(0, 1)] / (self.cov[(0, 0)] * self.cov[(1, 1)]).sqrt()
    }
}

/// Eigenvectors (as columns) and eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl EigenPair {
    /// `Q · diag(f(λ)) · Qᵀ`, with the lower triangle mirrored so the result
    /// is exactly symmetric.
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let p = self.values.len();
        let mut scaled = self.vectors.clone();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[i]);
        }
        let mut out = &scaled * self.vectors.transpose();
        debug_assert_eq!(out.nrows(), p);
        mirror_lower(&mut out);
        out
    }
}

/// Covariance denominator convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovMode {
    /// Known zero mean, denominator `n`.
    ZeroMean,
    /// Columns centered first, denominator `n − 1`.
    Centered,
}

/// Subtracts each column's mean.
pub fn center_columns(x: &DataMatrix) -> Result<DataMatrix> {
    let n = x.n();
    if n < 2 {
        return Err(CovError::Dimension(format!("centering needs n >= 2, got {n}")));
    }
    let mut values = x.values.clone();
    for mut col in values.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    Ok(DataMatrix { values })
}

// Column dot products; `pair_stats` uses the same kernel so its entries match
// `sample_covariance` bit for bit.
fn cross_products(x: &DMatrix<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let mut out = DMatrix::zeros(p, p);
    for k in 0..p {
        for j in k..p {
            out[(j, k)] = x.column(j).dot(&x.column(k));
        }
    }
    mirror_lower(&mut out);
    out
}

pub fn sample_covariance(x: &DataMatrix, mode: CovMode) -> Result<SymmetricEstimate> {
    let n = x.n();
    let (cross, denom, label) = match mode {
        CovMode::ZeroMean => (cross_products(&x.values), n as f64, "sample_zero_mean"),
        CovMode::Centered => {
            if n < 2 {
                return Err(CovError::Dimension(format!("centered covariance needs n >= 2, got {n}")));
            }
            let xc = center_columns(x)?;
            (cross_products(&xc.values), (n - 1) as f64, "sample")
        }
    };
    SymmetricEstimate::new(cross / denom, label)
}

/// Pair statistics of columns `j` and `k` of an already centered matrix.
pub fn pair_stats(xc: &DataMatrix, j: usize, k: usize) -> Result<PairStats> {
    let (n, p) = (xc.n(), xc.p());
    if j >= p || k >= p || j == k {
        return Err(CovError::Dimension(format!("invalid feature pair ({j}, {k}) for p = {p}")));
    }
    if n < 2 {
        return Err(CovError::Dimension(format!("pair statistics need n >= 2, got {n}")));
    }
    let cj = xc.values.column(j);
    let ck = xc.values.column(k);
    let m = (n - 1) as f64;
    let vjj = cj.dot(&cj) / m;
    let vkk = ck.dot(&ck) / m;
    let vjk = if j > k { cj.dot(&ck) } else { ck.dot(&cj) } / m;
    if vjj <= 0.0 {
        return Err(CovError::DegenerateFeature { index: j });
    }
    if vkk <= 0.0 {
        return Err(CovError::DegenerateFeature { index: k });
    }
    Ok(PairStats { j, k, dof: n - 1, cov: Matrix2::new(vjj, vjk, vjk, vkk) })
}

/// `(1/p) · ‖A − B‖_F`.
pub fn scaled_frobenius_loss(a: impl AsMatrix, b: impl AsMatrix) -> Result<f64> {
    let (a, b) = (a.as_matrix(), b.as_matrix());
    if a.shape() != b.shape() || !a.is_square() {
        return Err(CovError::Dimension(format!(
            "loss needs equal square shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok((a - b).norm() / a.nrows() as f64)
}

/// Symmetric eigendecomposition with descending eigenvalues.
///
/// Only the lower triangle is read. Ties keep the solver's order, and each
/// eigenvector is flipped so its largest-magnitude entry is positive.
pub fn sym_eigen(a: impl AsMatrix) -> Result<EigenPair> {
    let a = a.as_matrix();
    if !a.is_square() || a.nrows() == 0 {
        return Err(CovError::Dimension(format!("eigendecomposition needs a square matrix, got {:?}", a.shape())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(CovError::NonFinite("eigendecomposition input".into()));
    }
    let p = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));

    let mut vectors = DMatrix::zeros(p, p);
    let mut values = DVector::zeros(p);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..p {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    Ok(EigenPair { vectors, values })
}

/// Frobenius distance between two eigenvector matrices after flipping each
/// column of `qhat` to have a nonnegative inner product with the matching
/// column of `q`.
pub fn eigenvector_distance(qhat: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    if qhat.shape() != q.shape() {
        return Err(CovError::Dimension(format!(
            "eigenvector matrices differ in shape: {:?} vs {:?}",
            qhat.shape(),
            q.shape()
        )));
    }
    let mut total = 0.0;
    for (a, b) in qhat.column_iter().zip(q.column_iter()) {
        let sign = if a.dot(&b) < 0.0 { -1.0 } else { 1.0 };
        total += a.iter().zip(b.iter()).map(|(x, y)| (sign * x - y).powi(2)).sum::<f64>();
    }
    Ok(total.sqrt())
}
