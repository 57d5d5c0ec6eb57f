//! Mean-vector hypothesis tests built on the quadratic form estimator.
//!
//! The LM statistic uses the moment matrix centered at the hypothesized
//! mean; the Wald statistic uses the estimated-mean sample covariance. Both
//! are `T (ybar - mu0)^T Sigma^{-1} (ybar - mu0)` and are standardized as
//! `(stat - n) / sqrt(2n)`, which is asymptotically `N(0,1)` under the
//! null. Rejection is one-sided in the upper tail. For small fixed `n` the
//! chi-square calibration with `n` degrees of freedom is reported as an
//! alternative p-value.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{
    fit, precision, sample_covariance, sample_covariance_known_mean, sample_mean, DataMatrix,
    KroneckerCovEstimate,
};
use crate::tensorlin::{quad_form_inv, FactorShape, SymMatrix};

/// Outcome of an LM or Wald mean-vector test.
#[derive(Debug, Clone, Serialize)]
pub struct MeanTestResult {
    /// Raw statistic `LM_{n,T}` or `W_{n,T}`.
    pub statistic: f64,
    /// `(statistic - n) / sqrt(2n)`.
    pub standardized: f64,
    /// One-sided upper-tail normal p-value of the standardized statistic.
    pub p_value: f64,
    /// Cross-section dimension.
    pub n: usize,
    /// Degrees of freedom of the finite-`n` chi-square calibration.
    pub df: usize,
    /// Upper-tail chi-square p-value of the raw statistic (`df = n`),
    /// offered for users with small fixed `n`.
    pub chi2_p_value: f64,
    /// Level and decision, when a level was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_at: Option<TestDecision>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TestDecision {
    pub level: f64,
    pub reject: bool,
}

impl MeanTestResult {
    fn from_statistic(statistic: f64, n: usize) -> Self {
        let standardized = (statistic - n as f64) / (2.0 * n as f64).sqrt();
        Self {
            statistic,
            standardized,
            p_value: gaussian_upper_p(standardized),
            n,
            df: n,
            chi2_p_value: chi2_upper_p(statistic, n).expect("statistic is nonnegative"),
            reject_at: None,
        }
    }

    /// Attaches the one-sided decision at `level` (reject when the upper-tail
    /// p-value falls below the level).
    pub fn with_level(mut self, level: f64) -> Self {
        self.reject_at = Some(TestDecision {
            level,
            reject: self.p_value < level,
        });
        self
    }
}

/// LM test of `H0: mu = mu0` using the known-mean quadratic form estimator.
pub fn lm_test(data: &DataMatrix, mu0: &[f64], shape: &FactorShape) -> Result<MeanTestResult> {
    check_dims(data, mu0, shape)?;
    let m0 = sample_covariance_known_mean(data, mu0)?;
    let est = fit(&m0, shape)?;
    Ok(MeanTestResult::from_statistic(
        mean_quad_statistic(data, mu0, &est)?,
        data.dim(),
    ))
}

/// Wald test of `H0: mu = mu0` using the estimated-mean quadratic form
/// estimator (the Hotelling-type statistic).
pub fn wald_test(data: &DataMatrix, mu0: &[f64], shape: &FactorShape) -> Result<MeanTestResult> {
    check_dims(data, mu0, shape)?;
    let m = sample_covariance(data)?;
    let est = fit(&m, shape)?;
    Ok(MeanTestResult::from_statistic(
        mean_quad_statistic(data, mu0, &est)?,
        data.dim(),
    ))
}

fn check_dims(data: &DataMatrix, mu0: &[f64], shape: &FactorShape) -> Result<()> {
    if mu0.len() != data.dim() {
        return Err(Error::InvalidInput(format!(
            "mu0 length {} does not match dimension {}",
            mu0.len(),
            data.dim()
        )));
    }
    if shape.total() != data.dim() {
        return Err(Error::InvalidInput(format!(
            "shape product {} does not match dimension {}",
            shape.total(),
            data.dim()
        )));
    }
    Ok(())
}

/// `T (ybar - mu0)^T est^{-1} (ybar - mu0)` through factor inverses.
fn mean_quad_statistic(
    data: &DataMatrix,
    mu0: &[f64],
    est: &KroneckerCovEstimate,
) -> Result<f64> {
    let ybar = sample_mean(data);
    let delta: Vec<f64> = ybar.iter().zip(mu0).map(|(y, m)| y - m).collect();
    let prec = precision(est)?;
    Ok(data.num_obs() as f64 * prec.quad_form(&delta)?)
}

/// A set of linear restrictions `R mu = r` with `R` of full row rank.
#[derive(Debug, Clone)]
pub struct LinearRestriction {
    r_matrix: Array2<f64>,
    rhs: Vec<f64>,
}

impl LinearRestriction {
    pub fn new(r_matrix: Array2<f64>, rhs: Vec<f64>) -> Result<Self> {
        let (q, n) = r_matrix.dim();
        if q == 0 || q > n {
            return Err(Error::InvalidInput(format!(
                "restriction count q={q} must satisfy 1 <= q <= n={n}"
            )));
        }
        if rhs.len() != q {
            return Err(Error::InvalidInput(format!(
                "rhs length {} does not match q={q}",
                rhs.len()
            )));
        }
        let norm = r_matrix.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rank_by_pivoted_elimination(&r_matrix, 1e-10 * norm) < q {
            return Err(Error::InvalidInput(format!(
                "restriction matrix is rank-deficient (rank < {q})"
            )));
        }
        Ok(Self { r_matrix, rhs })
    }

    pub fn num_restrictions(&self) -> usize {
        self.r_matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.r_matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Rescales each restriction so its coefficient row has unit l2 norm.
    pub fn normalized_rows(&self) -> Self {
        let mut r = self.r_matrix.clone();
        let mut rhs = self.rhs.clone();
        for (i, mut row) in r.rows_mut().into_iter().enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|x| x / norm);
                rhs[i] /= norm;
            }
        }
        Self { r_matrix: r, rhs }
    }
}

/// Row rank via Gaussian elimination with partial pivoting.
fn rank_by_pivoted_elimination(m: &Array2<f64>, tol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = a.dim();
    let mut rank = 0usize;
    let mut row = 0usize;
    for col in 0..cols {
        if row >= rows {
            break;
        }
        let (pivot_row, pivot_val) = (row..rows)
            .map(|i| (i, a[[i, col]].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot_val <= tol {
            continue;
        }
        if pivot_row != row {
            for c in 0..cols {
                a.swap([row, c], [pivot_row, c]);
            }
        }
        for i in (row + 1)..rows {
            let factor = a[[i, col]] / a[[row, col]];
            for c in col..cols {
                let delta = factor * a[[row, c]];
                a[[i, c]] -= delta;
            }
        }
        rank += 1;
        row += 1;
    }
    rank
}

/// Outcome of the fixed-q linear restriction Wald test.
#[derive(Debug, Clone, Serialize)]
pub struct LinearTestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom (the number of restrictions).
    pub df: usize,
}

/// Wald test of `H0: R mu = r`:
/// `W* = T (R ybar - r)^T (R Sigma R^T)^{-1} (R ybar - r)`, chi-square with
/// `q` degrees of freedom in the limit.
pub fn linear_restriction_test(
    data: &DataMatrix,
    restr: &LinearRestriction,
    shape: &FactorShape,
) -> Result<LinearTestResult> {
    let n = data.dim();
    if restr.matrix().ncols() != n {
        return Err(Error::InvalidInput(format!(
            "restriction matrix has {} columns, data dimension is {n}",
            restr.matrix().ncols()
        )));
    }
    if shape.total() != n {
        return Err(Error::InvalidInput(format!(
            "shape product {} does not match dimension {n}",
            shape.total()
        )));
    }
    let est = fit(&sample_covariance(data)?, shape)?;
    let q = restr.num_restrictions();
    // R Sigma R^T assembled one row at a time through the structured matvec
    let mut mid = Array2::<f64>::zeros((q, q));
    let rows: Vec<Vec<f64>> = restr
        .matrix()
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    for (i, row) in rows.iter().enumerate() {
        let sigma_ri = est.matvec(row)?;
        for (j, other) in rows.iter().enumerate() {
            mid[[i, j]] = other.iter().zip(&sigma_ri).map(|(a, b)| a * b).sum();
        }
    }
    let mid = SymMatrix::new(mid)
        .map_err(|e| Error::Numeric(format!("R Sigma R^T is not usable: {e}")))?;
    let ybar = sample_mean(data);
    let residual: Vec<f64> = rows
        .iter()
        .zip(restr.rhs())
        .map(|(row, &ri)| row.iter().zip(&ybar).map(|(a, b)| a * b).sum::<f64>() - ri)
        .collect();
    let statistic = data.num_obs() as f64
        * quad_form_inv(&mid, &residual)
            .map_err(|e| Error::Numeric(format!("R Sigma R^T is singular: {e}")))?;
    Ok(LinearTestResult {
        statistic,
        p_value: chi2_upper_p(statistic, q)?,
        df: q,
    })
}

/// Studentized simultaneous bound for the linear combination `phi`:
/// `(T [phi^T (ybar - mu)]^2 / (phi^T Sigma phi) - n) / sqrt(2n)`, to be
/// compared with the upper normal percentile. Scale-invariant in `phi` and
/// never above the standardized Wald statistic at the same `mu`.
pub fn simultaneous_bound(
    data: &DataMatrix,
    phi: &[f64],
    mu: &[f64],
    shape: &FactorShape,
) -> Result<f64> {
    check_dims(data, mu, shape)?;
    if phi.len() != data.dim() {
        return Err(Error::InvalidInput(format!(
            "phi length {} does not match dimension {}",
            phi.len(),
            data.dim()
        )));
    }
    if phi.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidInput("phi must be nonzero".into()));
    }
    let est = fit(&sample_covariance(data)?, shape)?;
    let ybar = sample_mean(data);
    let proj: f64 = phi
        .iter()
        .zip(ybar.iter().zip(mu))
        .map(|(p, (y, m))| p * (y - m))
        .sum();
    let denom = est.quad_form(phi)?;
    if denom <= 0.0 {
        return Err(Error::Numeric("phi^T Sigma phi is not positive".into()));
    }
    let n = data.dim() as f64;
    let t = data.num_obs() as f64;
    Ok((t * proj * proj / denom - n) / (2.0 * n).sqrt())
}

/// Center of the standardized Wald statistic under the local alternative
/// `mu = mu0 + theta / sqrt(T)`:
/// `theta^T Sigma^{-1} theta / sqrt(2n (1 + (2/n) theta^T Sigma^{-1} theta))`.
pub fn local_power_center(theta: &[f64], truth: &KroneckerCovEstimate) -> Result<f64> {
    if theta.len() != truth.dim() {
        return Err(Error::InvalidInput(format!(
            "theta length {} does not match dimension {}",
            theta.len(),
            truth.dim()
        )));
    }
    let q = precision(truth)?.quad_form(theta)?;
    let n = truth.dim() as f64;
    Ok(q / (2.0 * n * (1.0 + 2.0 * q / n)).sqrt())
}

/// `1 - Phi(z)` via the complementary error function.
pub fn gaussian_upper_p(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Upper tail of the chi-square distribution with `q` degrees of freedom.
pub fn chi2_upper_p(x: f64, q: usize) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidInput("degrees of freedom must be >= 1".into()));
    }
    if x < 0.0 {
        return Err(Error::InvalidInput(format!("chi-square statistic must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok(statrs::function::gamma::gamma_ur(q as f64 / 2.0, x / 2.0))
}
