//! Mixed continuous/binary covariates and the metric used to compare them.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Which inverse covariance defines the Mahalanobis part of the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricChoice {
    /// Inverse of the whole-sample covariance of the continuous columns.
    #[default]
    Empirical,
    /// Plain Euclidean distance.
    Identity,
}

impl std::str::FromStr for MetricChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "empirical" => Ok(Self::Empirical),
            "identity" => Ok(Self::Identity),
            other => Err(Error::config("similarity.metric", format!("unknown metric `{other}`"))),
        }
    }
}

/// Per-item covariates with a precomputed metric context.
///
/// The continuous block is stored both raw and whitened by the upper Cholesky
/// factor of the metric, so Mahalanobis distances are Euclidean distances
/// between whitened rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedCovariateMatrix {
    continuous: DMatrix<f64>,
    binary: Vec<Vec<u8>>,
    metric: DMatrix<f64>,
    whitener: DMatrix<f64>,
    whitened: Vec<Vec<f64>>,
}

/// Borrowed view of one item's covariates.
#[derive(Debug, Clone, Copy)]
pub struct CovariateRow<'a> {
    pub continuous: &'a [f64],
    pub binary: &'a [u8],
}

impl MixedCovariateMatrix {
    /// `continuous` is n × m_c (possibly zero columns), `binary` holds n rows of m_b entries.
    pub fn new(continuous: DMatrix<f64>, binary: Vec<Vec<u8>>, metric: MetricChoice) -> Result<Self> {
        let n = continuous.nrows();
        let m_c = continuous.ncols();
        let metric = match metric {
            MetricChoice::Identity => DMatrix::identity(m_c, m_c),
            MetricChoice::Empirical => inverse_empirical_covariance(&continuous)?,
        };
        Self::with_metric(continuous, binary, metric).map(|m| {
            debug_assert_eq!(m.n_items(), n);
            m
        })
    }

    /// Builds the matrix with an explicit symmetric positive-definite metric.
    pub fn with_metric(continuous: DMatrix<f64>, binary: Vec<Vec<u8>>, metric: DMatrix<f64>) -> Result<Self> {
        let n = continuous.nrows();
        let m_c = continuous.ncols();
        if !binary.is_empty() && binary.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: binary.len(),
            });
        }
        let binary = if binary.is_empty() { vec![Vec::new(); n] } else { binary };
        let m_b = binary.first().map_or(0, Vec::len);
        for (r, row) in binary.iter().enumerate() {
            if row.len() != m_b {
                return Err(Error::DimensionMismatch {
                    expected: m_b,
                    found: row.len(),
                });
            }
            if let Some(&v) = row.iter().find(|&&v| v > 1) {
                return Err(Error::NonBinaryValue {
                    row: r,
                    column: "binary".into(),
                    value: v.to_string(),
                });
            }
        }
        if metric.nrows() != m_c || metric.ncols() != m_c {
            return Err(Error::DimensionMismatch {
                expected: m_c,
                found: metric.nrows(),
            });
        }
        if (&metric - metric.transpose()).amax() > 1e-10 * metric.amax().max(1.0) {
            return Err(Error::NumericalFailure("metric context is not symmetric".into()));
        }
        let chol = metric
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("metric context is not positive definite".into()))?;
        // M = L Lᵀ, so (x−y)ᵀM(x−y) = |Lᵀ(x−y)|²
        let whitener = chol.l().transpose();
        let whitened = (0..n)
            .map(|i| {
                let row = continuous.row(i).transpose();
                (&whitener * row).iter().copied().collect()
            })
            .collect();
        Ok(MixedCovariateMatrix {
            continuous,
            binary,
            metric,
            whitener,
            whitened,
        })
    }

    pub fn n_items(&self) -> usize {
        self.continuous.nrows()
    }
    pub fn n_continuous(&self) -> usize {
        self.continuous.ncols()
    }
    pub fn n_binary(&self) -> usize {
        self.binary.first().map_or(0, Vec::len)
    }
    pub fn n_covariates(&self) -> usize {
        self.n_continuous() + self.n_binary()
    }
    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }
    pub fn continuous(&self) -> &DMatrix<f64> {
        &self.continuous
    }
    pub fn binary_row(&self, i: usize) -> &[u8] {
        &self.binary[i]
    }
    pub fn whitened_row(&self, i: usize) -> &[f64] {
        &self.whitened[i]
    }

    pub fn continuous_row(&self, i: usize) -> Vec<f64> {
        self.continuous.row(i).iter().copied().collect()
    }

    /// Weights (m_c/m, m_b/m) of the two distance components.
    pub fn weights(&self) -> (f64, f64) {
        let m = self.n_covariates();
        if m == 0 {
            return (0.0, 0.0);
        }
        (self.n_continuous() as f64 / m as f64, self.n_binary() as f64 / m as f64)
    }

    /// Whitens a raw continuous vector with this matrix's metric.
    pub fn whiten(&self, continuous: &[f64]) -> Result<Vec<f64>> {
        if continuous.len() != self.n_continuous() {
            return Err(Error::DimensionMismatch {
                expected: self.n_continuous(),
                found: continuous.len(),
            });
        }
        let v = nalgebra::DVector::from_column_slice(continuous);
        Ok((&self.whitener * v).iter().copied().collect())
    }

    /// Mixed distance between two arbitrary rows under this matrix's metric:
    /// `(m_c/m)·Mahalanobis + (m_b/m)·normalized Hamming`.
    pub fn distance(&self, a: CovariateRow<'_>, b: CovariateRow<'_>) -> Result<f64> {
        for row in [&a, &b] {
            if row.continuous.len() != self.n_continuous() {
                return Err(Error::DimensionMismatch {
                    expected: self.n_continuous(),
                    found: row.continuous.len(),
                });
            }
            if row.binary.len() != self.n_binary() {
                return Err(Error::DimensionMismatch {
                    expected: self.n_binary(),
                    found: row.binary.len(),
                });
            }
        }
        let wa = self.whiten(a.continuous)?;
        let wb = self.whiten(b.continuous)?;
        Ok(self.whitened_distance(&wa, a.binary, &wb, b.binary))
    }

    /// Distance between two items of the matrix.
    pub fn item_distance(&self, i: usize, j: usize) -> f64 {
        self.whitened_distance(&self.whitened[i], &self.binary[i], &self.whitened[j], &self.binary[j])
    }

    pub(crate) fn whitened_distance(&self, wa: &[f64], ba: &[u8], wb: &[f64], bb: &[u8]) -> f64 {
        let (wc, wbin) = self.weights();
        let dc = euclidean(wa, wb);
        let db = if ba.is_empty() {
            0.0
        } else {
            ba.iter().zip(bb).filter(|(x, y)| x != y).count() as f64 / ba.len() as f64
        };
        wc * dc + wbin * db
    }

    /// Covariates of a subset of items; the metric is kept, not re-estimated.
    pub fn subset(&self, items: &[usize]) -> MixedCovariateMatrix {
        let continuous = DMatrix::from_fn(items.len(), self.n_continuous(), |r, c| self.continuous[(items[r], c)]);
        let binary = items.iter().map(|&i| self.binary[i].clone()).collect();
        Self::with_metric(continuous, binary, self.metric.clone()).expect("subset of a valid matrix")
    }

    /// Appends one row; the metric is kept.
    pub fn with_extra_row(&self, continuous: &[f64], binary: &[u8]) -> Result<MixedCovariateMatrix> {
        self.with_extra_rows(&[(continuous.to_vec(), binary.to_vec())])
    }

    /// Appends rows `(continuous, binary)`; the metric is kept.
    pub fn with_extra_rows(&self, rows: &[(Vec<f64>, Vec<u8>)]) -> Result<MixedCovariateMatrix> {
        for (continuous, binary) in rows {
            if continuous.len() != self.n_continuous() {
                return Err(Error::DimensionMismatch {
                    expected: self.n_continuous(),
                    found: continuous.len(),
                });
            }
            if binary.len() != self.n_binary() {
                return Err(Error::DimensionMismatch {
                    expected: self.n_binary(),
                    found: binary.len(),
                });
            }
        }
        let n = self.n_items();
        let cont = DMatrix::from_fn(n + rows.len(), self.n_continuous(), |r, c| {
            if r < n {
                self.continuous[(r, c)]
            } else {
                rows[r - n].0[c]
            }
        });
        let mut bin = self.binary.clone();
        bin.extend(rows.iter().map(|r| r.1.clone()));
        Self::with_metric(cont, bin, self.metric.clone())
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Inverse of the whole-sample covariance. Constant columns are handled by a
/// ridge of 1e-8 times the mean diagonal.
pub fn inverse_empirical_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, m) = x.shape();
    if m == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if n < 2 {
        return Ok(DMatrix::identity(m, m));
    }
    let means: Vec<f64> = (0..m).map(|c| x.column(c).mean()).collect();
    let mut cov = DMatrix::<f64>::zeros(m, m);
    for r in 0..n {
        for a in 0..m {
            let da = x[(r, a)] - means[a];
            for b in 0..=a {
                cov[(a, b)] += da * (x[(r, b)] - means[b]);
            }
        }
    }
    for a in 0..m {
        for b in 0..=a {
            cov[(a, b)] /= (n - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let mean_diag = cov.diagonal().mean();
    let degenerate = (0..m).any(|c| cov[(c, c)] <= 1e-12 * mean_diag.max(f64::MIN_POSITIVE));
    if degenerate || cov.clone().cholesky().is_none() {
        let ridge = if mean_diag > 0.0 { 1e-8 * mean_diag } else { 1e-8 };
        for c in 0..m {
            cov[(c, c)] += ridge;
        }
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("covariance not invertible after ridge".into()))?;
    let inv = chol.inverse();
    // symmetrize rounding
    Ok((&inv + inv.transpose()) * 0.5)
}
