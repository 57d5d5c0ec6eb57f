//! Dense symmetric kernels: Cholesky, SPD inverse, eigenvalues via
//! Householder tridiagonalization plus implicit-shift QL, and matrix norms.
//!
//! Everything here targets small-to-moderate dense matrices (factor matrices
//! are tiny; full covariances stay under [`super::DENSE_ORDER_CAP`]).

use ndarray::Array2;

use super::SymMatrix;
use crate::error::{Error, Result};

/// Pivot must exceed this multiple of the largest diagonal entry.
const CHOLESKY_PIVOT_RTOL: f64 = 1e-12;

const QL_MAX_SWEEPS: usize = 60;

/// Lower-triangular Cholesky factor `L` with `L L^T = A`.
pub fn cholesky(a: &SymMatrix) -> Result<Array2<f64>> {
    let n = a.order();
    let arr = a.as_array();
    let max_diag = arr.diag().iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let tol = CHOLESKY_PIVOT_RTOL * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut pivot = arr[[j, j]];
        for k in 0..j {
            pivot -= l[[j, k]] * l[[j, k]];
        }
        if pivot <= tol {
            return Err(Error::Numeric(format!(
                "matrix not positive definite: pivot {pivot:.3e} at index {j}"
            )));
        }
        let ljj = pivot.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = arr[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn invert_spd(a: &SymMatrix) -> Result<SymMatrix> {
    let l = cholesky(a)?;
    let n = a.order();
    // invert L in place (forward substitution column by column)
    let mut linv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        linv[[j, j]] = 1.0 / l[[j, j]];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[[i, k]] * linv[[k, j]];
            }
            linv[[i, j]] = s / l[[i, i]];
        }
    }
    // A^{-1} = L^{-T} L^{-1}
    let mut inv = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[[k, i]] * linv[[k, j]];
            }
            inv[[i, j]] = s;
            inv[[j, i]] = s;
        }
    }
    SymMatrix::new(inv)
}

/// Quadratic form `x^T A^{-1} x` through a Cholesky solve, without forming
/// the inverse.
pub fn quad_form_inv(a: &SymMatrix, x: &[f64]) -> Result<f64> {
    if x.len() != a.order() {
        return Err(Error::InvalidInput(format!(
            "vector length {} does not match order {}",
            x.len(),
            a.order()
        )));
    }
    let l = cholesky(a)?;
    // solve L y = x; then x^T A^{-1} x = ||y||^2
    let n = x.len();
    let mut y = x.to_vec();
    for i in 0..n {
        for k in 0..i {
            let t = l[[i, k]] * y[k];
            y[i] -= t;
        }
        y[i] /= l[[i, i]];
    }
    Ok(y.iter().map(|v| v * v).sum())
}

/// All eigenvalues of a symmetric matrix, ascending.
///
/// Householder reduction to tridiagonal form followed by the implicit-shift
/// QL iteration, eigenvalues only.
pub fn sym_eigenvalues(a: &SymMatrix) -> Result<Vec<f64>> {
    let n = a.order();
    let mut m = a.as_array().clone();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tridiagonalize(&mut m, &mut d, &mut e);
    ql_implicit(&mut d, &mut e)?;
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(d)
}

/// Householder reduction (eigenvalues-only variant): on return `d` holds the
/// tridiagonal diagonal and `e[1..]` the subdiagonal.
fn tridiagonalize(a: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0f64;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[[i, k]].abs()).sum();
            if scale == 0.0 {
                e[i] = a[[i, l]];
            } else {
                for k in 0..=l {
                    a[[i, k]] /= scale;
                    h += a[[i, k]] * a[[i, k]];
                }
                let f = a[[i, l]];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[[i, l]] = f - g;
                let mut fsum = 0.0f64;
                for j in 0..=l {
                    let mut g = 0.0f64;
                    for k in 0..=j {
                        g += a[[j, k]] * a[[i, k]];
                    }
                    for k in (j + 1)..=l {
                        g += a[[k, j]] * a[[i, k]];
                    }
                    e[j] = g / h;
                    fsum += e[j] * a[[i, j]];
                }
                let hh = fsum / (2.0 * h);
                for j in 0..=l {
                    let f = a[[i, j]];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let delta = f * e[k] + g * a[[i, k]];
                        a[[j, k]] -= delta;
                    }
                }
            }
        } else {
            e[i] = a[[i, l]];
        }
        d[i] = h;
    }
    e[0] = 0.0;
    for i in 0..n {
        d[i] = a[[i, i]];
    }
}

/// QL iteration with implicit shifts on a symmetric tridiagonal matrix.
fn ql_implicit(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0usize;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_SWEEPS {
                return Err(Error::Numeric(
                    "eigenvalue iteration did not converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Frobenius, entrywise l1, and spectral norms of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    pub frobenius: f64,
    pub entrywise_l1: f64,
    pub spectral: f64,
}

pub fn norms(a: &SymMatrix) -> Result<MatrixNorms> {
    let frobenius = a.as_array().iter().map(|x| x * x).sum::<f64>().sqrt();
    let entrywise_l1 = a.as_array().iter().map(|x| x.abs()).sum::<f64>();
    let eig = sym_eigenvalues(a)?;
    let spectral = eig.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    Ok(MatrixNorms {
        frobenius,
        entrywise_l1,
        spectral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorlin::kron_materialize;
    use ndarray::array;

    #[test]
    fn cholesky_examples() {
        let i3 = SymMatrix::identity(3);
        let l = cholesky(&i3).unwrap();
        assert_eq!(l, Array2::<f64>::eye(3));

        let a = SymMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 5.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l, array![[2.0, 0.0], [1.0, 2.0]]);

        let indef = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let err = cholesky(&indef).unwrap_err();
        assert!(err.to_string().contains("index 1"));
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = SymMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ])
        .unwrap();
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        let diff: f64 = (&back - a.as_array()).iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom: f64 = a.as_array().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / denom < 1e-10);
    }

    #[test]
    fn invert_spd_examples() {
        let i2 = SymMatrix::identity(2);
        assert_eq!(invert_spd(&i2).unwrap().as_array(), &Array2::<f64>::eye(2));

        let d = SymMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let inv = invert_spd(&d).unwrap();
        let expect = array![[0.5, 0.0], [0.0, 0.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv.get(i, j) - expect[[i, j]]).abs() < 1e-15);
            }
        }

        let a = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let inv = invert_spd(&a).unwrap();
        let expect = array![[1.0 / 0.75, -0.5 / 0.75], [-0.5 / 0.75, 1.0 / 0.75]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv.get(i, j) - expect[[i, j]]).abs() < 1e-12);
            }
        }
        // A * A^{-1} = I entrywise
        let prod = a.as_array().dot(inv.as_array());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn quad_form_inv_matches_explicit_inverse() {
        let a = SymMatrix::from_rows(&[
            vec![3.0, 0.4, 0.1],
            vec![0.4, 2.0, -0.5],
            vec![0.1, -0.5, 1.5],
        ])
        .unwrap();
        let x = [0.7, -1.3, 2.1];
        let inv = invert_spd(&a).unwrap();
        let xv = ndarray::Array1::from(x.to_vec());
        let expect = xv.dot(&inv.as_array().dot(&xv));
        let got = quad_form_inv(&a, &x).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect.abs());
    }

    #[test]
    fn eigenvalues_known_cases() {
        let a = SymMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, -7.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ])
        .unwrap();
        let eig = sym_eigenvalues(&a).unwrap();
        assert!((eig[0] + 7.0).abs() < 1e-12);
        assert!((eig[1] - 1.0).abs() < 1e-12);
        assert!((eig[2] - 3.0).abs() < 1e-12);

        // [[3,4],[4,3]] has eigenvalues -1 and 7
        let b = SymMatrix::from_rows(&[vec![3.0, 4.0], vec![4.0, 3.0]]).unwrap();
        let eig = sym_eigenvalues(&b).unwrap();
        assert!((eig[0] + 1.0).abs() < 1e-12);
        assert!((eig[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_sum_to_trace() {
        let a = SymMatrix::from_rows(&[
            vec![2.0, 0.3, -0.4, 0.1],
            vec![0.3, 1.0, 0.6, -0.2],
            vec![-0.4, 0.6, 3.0, 0.5],
            vec![0.1, -0.2, 0.5, 0.7],
        ])
        .unwrap();
        let eig = sym_eigenvalues(&a).unwrap();
        assert!((eig.iter().sum::<f64>() - a.trace()).abs() < 1e-10);
    }

    #[test]
    fn norms_examples_and_kronecker_identities() {
        let a = SymMatrix::from_rows(&[vec![3.0, 4.0], vec![4.0, 3.0]]).unwrap();
        let na = norms(&a).unwrap();
        assert!((na.frobenius - 50.0f64.sqrt()).abs() < 1e-12);
        assert!((na.spectral - 7.0).abs() < 1e-12);
        assert!((na.entrywise_l1 - 14.0).abs() < 1e-12);

        let b = SymMatrix::from_rows(&[
            vec![1.0, 0.2, -0.1],
            vec![0.2, 2.0, 0.3],
            vec![-0.1, 0.3, 1.1],
        ])
        .unwrap();
        let nb = norms(&b).unwrap();
        let prod = kron_materialize(&[a, b], 1.0).unwrap();
        let np = norms(&prod).unwrap();
        assert!((np.frobenius - na.frobenius * nb.frobenius).abs() < 1e-10);
        assert!((np.entrywise_l1 - na.entrywise_l1 * nb.entrywise_l1).abs() < 1e-9);
        assert!((np.spectral - na.spectral * nb.spectral).abs() < 1e-9);
    }
}
