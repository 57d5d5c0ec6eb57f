//! Linear shrinkage covariance baseline.
//!
//! Shrinks the sample covariance toward a scaled identity target,
//! `Sigma* = (b^2/d^2) m I + (a^2/d^2) S`, with the intensity estimated
//! from the dispersion of the per-observation outer products around `S`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::estimator::{sample_covariance, sample_mean, DataMatrix};
use crate::tensorlin::SymMatrix;

/// Result of the linear shrinkage fit.
#[derive(Debug, Clone)]
pub struct ShrinkageEstimate {
    /// The shrunk covariance matrix.
    pub matrix: SymMatrix,
    /// Weight placed on the identity target, in `[0, 1]`.
    pub intensity: f64,
    /// Scale of the target, `m = tr(S)/n`.
    pub target_scale: f64,
}

/// Fits the shrinkage estimator from demeaned data.
///
/// With `S` the sample covariance (divisor `T`), `m = tr(S)/n`,
/// `d^2 = ||S - mI||_F^2`, `b2bar = (1/T^2) sum_t ||x_t x_t' - S||_F^2`,
/// `b^2 = min(b2bar, d^2)` and `a^2 = d^2 - b^2`, the estimate is
/// `(b^2/d^2) m I + (a^2/d^2) S`.
pub fn lw04_fit(data: &DataMatrix) -> Result<ShrinkageEstimate> {
    let s = sample_covariance(data)?;
    let n = data.dim();
    let t = data.num_obs() as f64;
    let m = s.trace() / n as f64;
    let s_sq: f64 = s.view().iter().map(|x| x * x).sum();
    let d2 = s_sq - n as f64 * m * m;

    if d2 <= f64::EPSILON * s_sq.max(1.0) {
        // the sample covariance already is a multiple of the identity
        return Ok(ShrinkageEstimate {
            matrix: SymMatrix::new(Array2::eye(n) * m)
                .map_err(|e| Error::Numeric(e.to_string()))?,
            intensity: 1.0,
            target_scale: m,
        });
    }

    // sum_t ||x_t x_t' - S||^2 = sum_t ||x_t||^4 - T ||S||^2, because
    // sum_t x_t' S x_t = T ||S||^2 when S = (1/T) sum_t x_t x_t'
    let ybar = sample_mean(data);
    let fourth: f64 = data
        .as_array()
        .rows()
        .into_iter()
        .map(|row| {
            let sq: f64 = row
                .iter()
                .zip(&ybar)
                .map(|(y, m)| (y - m) * (y - m))
                .sum();
            sq * sq
        })
        .sum();
    let b2bar = fourth / (t * t) - s_sq / t;
    let b2 = b2bar.clamp(0.0, d2);
    let a2 = d2 - b2;
    let intensity = (b2 / d2).clamp(0.0, 1.0);

    let mut out = s.view().to_owned();
    out.mapv_inplace(|x| x * (a2 / d2));
    for i in 0..n {
        out[[i, i]] += (b2 / d2) * m;
    }
    Ok(ShrinkageEstimate {
        matrix: SymMatrix::new(out).map_err(|e| Error::Numeric(e.to_string()))?,
        intensity,
        target_scale: m,
    })
}
