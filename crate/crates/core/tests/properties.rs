//! Randomized invariants of the tensor linear algebra and the estimator,
//! driven by proptest-generated inputs.

use ndarray::Array2;
use proptest::prelude::*;

use kroncov::estimator::{
    fit, sample_covariance, sample_covariance_known_mean, sample_mean, DataMatrix,
};
use kroncov::tensorlin::{
    kron_materialize, norms, partial_trace, FactorShape, SymMatrix,
};

/// A random symmetric PD matrix B B' + 0.5 I of the given order.
fn spd(order: usize, entries: &[f64]) -> SymMatrix {
    let b = Array2::from_shape_vec((order, order), entries[..order * order].to_vec()).unwrap();
    let mut a = b.dot(&b.t());
    for i in 0..order {
        a[[i, i]] += 0.5;
    }
    SymMatrix::new(a).unwrap()
}

fn frob(a: &SymMatrix) -> f64 {
    norms(a).unwrap().frobenius
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// |A (x) B|_F = |A|_F |B|_F.
    #[test]
    fn kronecker_frobenius_norm_factorizes(
        ea in prop::collection::vec(-2.0f64..2.0, 9),
        eb in prop::collection::vec(-2.0f64..2.0, 16),
    ) {
        let a = spd(3, &ea);
        let b = spd(4, &eb);
        let prod = kron_materialize(&[a.clone(), b.clone()], 1.0).unwrap();
        let lhs = frob(&prod);
        let rhs = frob(&a) * frob(&b);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0), "{lhs} vs {rhs}");
    }

    /// tr (A (x) B) = tr A * tr B, and the partial trace reproduces
    /// tr(B) * A for a two-factor product.
    #[test]
    fn partial_trace_of_kronecker_product(
        ea in prop::collection::vec(-2.0f64..2.0, 4),
        eb in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let a = spd(2, &ea);
        let b = spd(3, &eb);
        let prod = kron_materialize(&[a.clone(), b.clone()], 1.0).unwrap();
        prop_assert!((prod.trace() - a.trace() * b.trace()).abs() < 1e-10);
        let pt = partial_trace(&prod, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = b.trace() * a.get(i, j);
                prop_assert!((pt.get(i, j) - want).abs() < 1e-10);
            }
        }
    }

    /// Fitting an exact Kronecker product recovers it: the fitted estimate
    /// materializes back to the input matrix.
    #[test]
    fn fit_is_exact_on_kronecker_inputs(
        ea in prop::collection::vec(-2.0f64..2.0, 4),
        eb in prop::collection::vec(-2.0f64..2.0, 9),
        sigma2 in 0.1f64..5.0,
    ) {
        let a = spd(2, &ea);
        let b = spd(3, &eb);
        let a = a.scaled(2.0 / a.trace());
        let b = b.scaled(3.0 / b.trace());
        let truth = kron_materialize(&[a, b], sigma2).unwrap();
        let est = fit(&truth, &FactorShape::new(vec![2, 3]).unwrap()).unwrap();
        let back = est.materialize().unwrap();
        let mut err = 0.0f64;
        for i in 0..6 {
            for j in 0..6 {
                err = err.max((back.get(i, j) - truth.get(i, j)).abs());
            }
        }
        prop_assert!(err < 1e-12 * sigma2.max(1.0), "max entry error {err}");
        prop_assert!((est.sigma2() - sigma2).abs() < 1e-12 * sigma2);
    }

    /// The fit preserves the total scale and normalizes every factor:
    /// tr(fitted) = tr(input) and tr(F_h) = n_h, for arbitrary PD input.
    #[test]
    fn fit_trace_bookkeeping(
        entries in prop::collection::vec(-1.5f64..1.5, 36),
    ) {
        let m = spd(6, &entries);
        let shape = FactorShape::new(vec![2, 3]).unwrap();
        let est = fit(&m, &shape).unwrap();
        let back = est.materialize().unwrap();
        prop_assert!((back.trace() - m.trace()).abs() < 1e-9 * m.trace());
        for (h, f) in est.factors().iter().enumerate() {
            let nh = shape.dims()[h] as f64;
            prop_assert!((f.trace() - nh).abs() < 1e-12 * nh);
        }
    }

    /// Moment decomposition: the known-mean second moment about mu splits
    /// into the centered covariance plus the mean-offset outer product,
    /// M(mu) = M + (ybar - mu)(ybar - mu)'.
    #[test]
    fn moment_matrix_decomposition(
        entries in prop::collection::vec(-3.0f64..3.0, 10 * 4),
        mu in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let rows: Vec<Vec<f64>> = entries.chunks(4).map(|c| c.to_vec()).collect();
        let data = DataMatrix::from_rows(rows).unwrap();
        let m = sample_covariance(&data).unwrap();
        let m0 = sample_covariance_known_mean(&data, &mu).unwrap();
        let ybar = sample_mean(&data);
        for i in 0..4 {
            for j in 0..4 {
                let want = m.get(i, j) + (ybar[i] - mu[i]) * (ybar[j] - mu[j]);
                prop_assert!(
                    (m0.get(i, j) - want).abs() < 1e-10,
                    "entry ({i},{j}): {} vs {want}", m0.get(i, j)
                );
            }
        }
    }
}
