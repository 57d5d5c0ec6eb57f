//! The quadratic form estimator: sample covariance, rotated partial traces,
//! trace normalization, the scale estimate, and the structured inverse.
//!
//! Given a symmetric moment matrix `M` and a factorization
//! `(n_1, ..., n_v)` of its order, the estimator extracts
//! `d^(h) = PTR_{n_h}(M^(h))` for every factor position `h`, normalizes each
//! to trace `n_h`, and sets the scale to `tr(M)/n`. When `M` is exactly a
//! trace-normalized Kronecker product the decomposition is recovered
//! exactly.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorlin::{
    invert_spd, kron_materialize, kron_matvec, rotated_partial_trace, sym_eigenvalues,
    FactorShape, SymMatrix,
};

/// Trace of a rotated partial trace must exceed this multiple of `n`.
const DEGENERATE_TRACE_RTOL: f64 = 1e-12;

/// Min eigenvalue may undershoot zero by this multiple of the max eigenvalue
/// before a factor is flagged as non-PSD.
const PSD_SLACK_RTOL: f64 = 1e-8;

/// A `T x n` panel of observations, one observation vector per row.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    rows: Array2<f64>,
}

impl DataMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::InvalidInput("data matrix must be non-empty".into()));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("data entries must be finite".into()));
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let t = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("ragged rows in data matrix".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let arr = Array2::from_shape_vec((t, n), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(arr)
    }

    /// Sample size `T`.
    pub fn num_obs(&self) -> usize {
        self.rows.nrows()
    }

    /// Cross-section dimension `n`.
    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.rows
    }
}

/// Coordinate-wise average of the rows.
pub fn sample_mean(data: &DataMatrix) -> Vec<f64> {
    data.as_array()
        .mean_axis(Axis(0))
        .expect("data matrix is non-empty")
        .to_vec()
}

/// Sample covariance `M_T = (1/T) sum_t (y_t - ybar)(y_t - ybar)^T`.
/// Divisor `T`, not `T - 1`.
pub fn sample_covariance(data: &DataMatrix) -> Result<SymMatrix> {
    let t = data.num_obs();
    if t < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations for estimated-mean covariance, got {t}"
        )));
    }
    let mean = Array1::from(sample_mean(data));
    let centered = data.as_array() - &mean.broadcast((t, data.dim())).unwrap();
    let m = centered.t().dot(&centered) / t as f64;
    SymMatrix::new(m)
}

/// Known-mean moment matrix `M_T^0 = (1/T) sum_t (y_t - mu)(y_t - mu)^T`.
pub fn sample_covariance_known_mean(data: &DataMatrix, mu: &[f64]) -> Result<SymMatrix> {
    if mu.len() != data.dim() {
        return Err(Error::InvalidInput(format!(
            "mean vector length {} does not match dimension {}",
            mu.len(),
            data.dim()
        )));
    }
    let t = data.num_obs();
    let mu = Array1::from(mu.to_vec());
    let centered = data.as_array() - &mu.broadcast((t, data.dim())).unwrap();
    let m = centered.t().dot(&centered) / t as f64;
    SymMatrix::new(m)
}

/// A fitted Kronecker covariance model: `sigma2 * F_1 (x) ... (x) F_v`.
///
/// Covariance-side estimates carry trace-normalized factors
/// (`tr(F_j) = n_j`); the same type represents the structured inverse, whose
/// factors are not trace-normalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "EstimateJson", try_from = "EstimateJson")]
pub struct KroneckerCovEstimate {
    sigma2: f64,
    factors: Vec<SymMatrix>,
    shape: FactorShape,
    factors_psd: bool,
}

impl KroneckerCovEstimate {
    /// Assembles an estimate from parts; factor orders must match the shape.
    pub fn from_parts(sigma2: f64, factors: Vec<SymMatrix>, shape: FactorShape) -> Result<Self> {
        if sigma2 <= 0.0 || !sigma2.is_finite() {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        if factors.len() != shape.num_factors() {
            return Err(Error::InvalidInput("factor count does not match shape".into()));
        }
        for (f, &d) in factors.iter().zip(shape.dims()) {
            if f.order() != d {
                return Err(Error::InvalidInput(format!(
                    "factor order {} does not match shape dimension {d}",
                    f.order()
                )));
            }
        }
        let factors_psd = factors_are_psd(&factors)?;
        Ok(Self {
            sigma2,
            factors,
            shape,
            factors_psd,
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn factors(&self) -> &[SymMatrix] {
        &self.factors
    }

    pub fn shape(&self) -> &FactorShape {
        &self.shape
    }

    /// Cross-section dimension `n`.
    pub fn dim(&self) -> usize {
        self.shape.total()
    }

    /// False when some fitted factor failed the PSD check (possible for an
    /// indefinite input moment matrix).
    pub fn factors_psd(&self) -> bool {
        self.factors_psd
    }

    /// Dense `n x n` covariance (subject to the dense-order cap).
    pub fn materialize(&self) -> Result<SymMatrix> {
        kron_materialize(&self.factors, self.sigma2)
    }

    /// Structured matvec `(sigma2 * F_1 (x) ... (x) F_v) x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        kron_matvec(&self.factors, self.sigma2, x)
    }

    /// Quadratic form `x^T (sigma2 * F_1 (x) ... (x) F_v) x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let y = self.matvec(x)?;
        Ok(x.iter().zip(&y).map(|(a, b)| a * b).sum())
    }
}

fn factors_are_psd(factors: &[SymMatrix]) -> Result<bool> {
    for f in factors {
        let eig = sym_eigenvalues(f)?;
        let max = eig.last().copied().unwrap_or(0.0);
        let min = eig.first().copied().unwrap_or(0.0);
        if min < -PSD_SLACK_RTOL * max.abs().max(f64::MIN_POSITIVE) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Fits the quadratic form estimator to a symmetric moment matrix.
///
/// `factors[h]` is the rotated partial trace of `M` at position `h`,
/// normalized to trace `n_h`; the scale is `tr(M)/n`. Exact Kronecker inputs
/// are recovered exactly. Indefinite inputs are accepted; the PSD flag on
/// the result records whether every factor passed the PSD check.
pub fn fit(m: &SymMatrix, shape: &FactorShape) -> Result<KroneckerCovEstimate> {
    let n = shape.total();
    if m.order() != n {
        return Err(Error::InvalidInput(format!(
            "moment matrix order {} does not match shape product {n}",
            m.order()
        )));
    }
    let trace = m.trace();
    let tol = DEGENERATE_TRACE_RTOL * n as f64;
    if trace <= tol {
        return Err(Error::InvalidInput(format!(
            "degenerate moment matrix: trace {trace:.3e} below tolerance"
        )));
    }
    let sigma2 = trace / n as f64;
    let mut factors = Vec::with_capacity(shape.num_factors());
    for h in 1..=shape.num_factors() {
        let d = rotated_partial_trace(m, shape, h)?;
        let td = d.trace();
        if td <= tol {
            return Err(Error::InvalidInput(format!(
                "degenerate partial trace at factor {h}: trace {td:.3e} below tolerance"
            )));
        }
        let nh = shape.factor_dim(h)? as f64;
        factors.push(d.scaled(nh / td));
    }
    KroneckerCovEstimate::from_parts(sigma2, factors, shape.clone())
}

/// The structured inverse `(1/sigma2, F_1^{-1}, ..., F_v^{-1})`.
pub fn precision(est: &KroneckerCovEstimate) -> Result<KroneckerCovEstimate> {
    let mut inv_factors = Vec::with_capacity(est.factors().len());
    for (h, f) in est.factors().iter().enumerate() {
        let inv = invert_spd(f).map_err(|e| {
            Error::Numeric(format!("factor {} is not invertible: {e}", h + 1))
        })?;
        inv_factors.push(inv);
    }
    KroneckerCovEstimate::from_parts(1.0 / est.sigma2(), inv_factors, est.shape().clone())
}

/// `x^T Sigma^{-1} x` through factor inverses and the structured matvec; the
/// full `n x n` inverse is never materialized.
pub fn quad_form_precision(est: &KroneckerCovEstimate, x: &[f64]) -> Result<f64> {
    if x.len() != est.dim() {
        return Err(Error::InvalidInput(format!(
            "vector length {} does not match dimension {}",
            x.len(),
            est.dim()
        )));
    }
    precision(est)?.quad_form(x)
}

#[derive(Serialize, Deserialize)]
struct EstimateJson {
    shape: Vec<usize>,
    sigma2: f64,
    factors: Vec<Vec<Vec<f64>>>,
}

impl From<KroneckerCovEstimate> for EstimateJson {
    fn from(est: KroneckerCovEstimate) -> Self {
        Self {
            shape: est.shape.dims().to_vec(),
            sigma2: est.sigma2,
            factors: est.factors.iter().map(|f| f.to_rows()).collect(),
        }
    }
}

impl TryFrom<EstimateJson> for KroneckerCovEstimate {
    type Error = Error;

    fn try_from(json: EstimateJson) -> Result<Self> {
        let shape = FactorShape::new(json.shape)?;
        let factors = json
            .factors
            .iter()
            .map(|rows| SymMatrix::from_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(json.sigma2, factors, shape)
    }
}
