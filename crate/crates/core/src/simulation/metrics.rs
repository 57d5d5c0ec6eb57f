//! Evaluation metrics: relative mean squared error and PRIAL.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Squared Frobenius distance between two matrices of equal order.
pub fn frob_sq_diff(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared Frobenius norm.
pub fn frob_sq(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Relative MSE: mean of the accumulated squared Frobenius errors divided by
/// the squared norm of the truth.
///
/// For designs where the truth varies per replication, pass the per-
/// replication ratios and `denom = 1`.
pub fn mse_relative(errors: &[f64], denom: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("no replications to average".into()));
    }
    if denom <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "truth norm must be positive, got {denom}"
        )));
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64 / denom)
}

/// Percentage relative improvement in average loss over the sample
/// covariance: `1 - E||est - truth||^2 / E||sample - truth||^2`.
pub fn prial(est_errors: &[f64], sample_errors: &[f64]) -> Result<f64> {
    if est_errors.is_empty() || sample_errors.is_empty() {
        return Err(Error::InvalidInput("no replications to average".into()));
    }
    let num = est_errors.iter().sum::<f64>() / est_errors.len() as f64;
    let den = sample_errors.iter().sum::<f64>() / sample_errors.len() as f64;
    if den <= 0.0 {
        return Err(Error::InvalidInput("sample-covariance loss must be positive".into()));
    }
    Ok(1.0 - num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_edge_cases() {
        // estimator equal to the truth every replication
        assert_eq!(mse_relative(&[0.0, 0.0, 0.0], 4.0).unwrap(), 0.0);
        // estimator equal to 2*truth: squared error equals ||truth||^2
        assert_eq!(mse_relative(&[4.0, 4.0], 4.0).unwrap(), 1.0);
        assert!(mse_relative(&[], 1.0).is_err());
        assert!(mse_relative(&[1.0], 0.0).is_err());
    }

    #[test]
    fn prial_edge_cases() {
        // estimator is the sample covariance itself
        let s = [1.3, 0.4, 2.2];
        assert_eq!(prial(&s, &s).unwrap(), 0.0);
        // perfect estimator
        assert_eq!(prial(&[0.0, 0.0, 0.0], &s).unwrap(), 1.0);
        assert!(prial(&[], &s).is_err());
        assert!(prial(&s, &[0.0]).is_err());
        // worse than the sample covariance is allowed (negative PRIAL)
        assert!(prial(&[10.0], &[1.0]).unwrap() < 0.0);
    }

    #[test]
    fn frobenius_helpers() {
        let a = array![[1.0, 2.0], [2.0, 5.0]];
        let b = array![[0.0, 1.0], [1.0, 3.0]];
        assert_eq!(frob_sq(&a.view()), 1.0 + 4.0 + 4.0 + 25.0);
        assert_eq!(frob_sq_diff(&a.view(), &b.view()), 1.0 + 1.0 + 1.0 + 4.0);
    }
}
