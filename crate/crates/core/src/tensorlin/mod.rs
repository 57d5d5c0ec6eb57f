//! Tensor index arithmetic, partial-trace and rotation kernels, and the
//! dense symmetric linear algebra used by the estimator and the tests.
//!
//! Conventions
//! -----------
//! - A cross-section of dimension `n = n_1 x ... x n_v` is indexed row-major
//!   over the multi-index `(i_1, ..., i_v)` with `i_1` slowest.
//! - Indices are 0-based internally; factor positions `h` in the public API
//!   are 1-based (`1 <= h <= v`) to match the usual reporting convention.
//! - Permuted matrices are never materialized: a rotation is stored as the
//!   length-`n` forward index map and applied by entry lookup.

mod dense;

pub use dense::{cholesky, invert_spd, norms, quad_form_inv, sym_eigenvalues, MatrixNorms};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Hard cap on the order of any dense matrix this crate will materialize.
pub const DENSE_ORDER_CAP: usize = 4096;

/// Relative tolerance for the symmetry check at [`SymMatrix`] construction.
const SYMMETRY_RTOL: f64 = 1e-10;

/// The factorization `(n_1, ..., n_v)` of a cross-section dimension `n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FactorShape {
    dims: Vec<usize>,
}

impl FactorShape {
    /// Builds a shape from factor dimensions. Requires `v >= 1` and every
    /// `n_j >= 2`.
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidInput("factor shape must be non-empty".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidInput(format!(
                "factor dimensions must be >= 2, got {d}"
            )));
        }
        Ok(Self { dims })
    }

    /// Parses a spec like `"2x5x2"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let dims = spec
            .split('x')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidInput(format!("bad factor dimension {tok:?} in shape {spec:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// The number of factors `v`.
    pub fn num_factors(&self) -> usize {
        self.dims.len()
    }

    /// The cross-section dimension `n`.
    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    /// `n_h` for 1-based `h`.
    pub fn factor_dim(&self, h: usize) -> Result<usize> {
        self.check_h(h)?;
        Ok(self.dims[h - 1])
    }

    /// `n / n_h` for 1-based `h`.
    pub fn co_dim(&self, h: usize) -> Result<usize> {
        Ok(self.total() / self.factor_dim(h)?)
    }

    /// The shape with factor order cycled so that factor `h` comes first:
    /// `(n_h, ..., n_v, n_1, ..., n_{h-1})`.
    pub fn rotated(&self, h: usize) -> Result<Self> {
        self.check_h(h)?;
        let v = self.num_factors();
        let dims = (0..v).map(|k| self.dims[(h - 1 + k) % v]).collect();
        Ok(Self { dims })
    }

    fn check_h(&self, h: usize) -> Result<()> {
        if h == 0 || h > self.num_factors() {
            return Err(Error::InvalidInput(format!(
                "factor index {h} out of range 1..={}",
                self.num_factors()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for FactorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// A dense real symmetric matrix. Symmetry is enforced at construction by
/// averaging `(A + A^T)/2`; gross asymmetry is rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    pub fn new(mut data: Array2<f64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::InvalidInput(format!("matrix must be square, got {r}x{c}")));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        let max_abs = data.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let mut max_asym = 0.0f64;
        for i in 0..r {
            for j in (i + 1)..r {
                max_asym = max_asym.max((data[[i, j]] - data[[j, i]]).abs());
            }
        }
        if max_asym > SYMMETRY_RTOL * max_abs.max(1e-300) {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric: max asymmetry {max_asym:.3e} exceeds tolerance"
            )));
        }
        for i in 0..r {
            for j in (i + 1)..r {
                let avg = 0.5 * (data[[i, j]] + data[[j, i]]);
                data[[i, j]] = avg;
                data[[j, i]] = avg;
            }
        }
        Ok(Self { data })
    }

    /// Builds from row data without an asymmetry tolerance check failing on
    /// exact input; rows must form a square symmetric matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidInput("rows must form a square matrix".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((n, n), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(data)
    }

    pub fn identity(n: usize) -> Self {
        Self { data: Array2::eye(n) }
    }

    pub fn order(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }

    /// Rescales every entry by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { data: &self.data * c }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

/// A bijection on `{0, ..., n-1}` realizing conjugation by commutation
/// matrices as an index remapping.
#[derive(Debug, Clone)]
pub struct IndexPermutation {
    forward: Vec<usize>,
}

impl IndexPermutation {
    /// `forward[p]` is the original linear index placed at rotated index `p`.
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Materializes the conjugated matrix `P A P^T` (test and small-scale use).
    pub fn conjugate(&self, a: &SymMatrix) -> Result<SymMatrix> {
        let n = self.forward.len();
        if a.order() != n {
            return Err(Error::InvalidInput(format!(
                "permutation length {} does not match matrix order {}",
                n,
                a.order()
            )));
        }
        let mut out = Array2::zeros((n, n));
        for p in 0..n {
            for q in 0..n {
                out[[p, q]] = a.get(self.forward[p], self.forward[q]);
            }
        }
        SymMatrix::new(out)
    }
}

/// Row-major linear index of a multi-index: `sum_j multi[j] * (n_{j+1} ... n_v)`.
pub fn linear_index(multi: &[usize], shape: &FactorShape) -> Result<usize> {
    if multi.len() != shape.num_factors() {
        return Err(Error::InvalidInput(format!(
            "multi-index length {} does not match {} factors",
            multi.len(),
            shape.num_factors()
        )));
    }
    let mut idx = 0usize;
    for (j, (&m, &d)) in multi.iter().zip(shape.dims()).enumerate() {
        if m >= d {
            return Err(Error::InvalidInput(format!(
                "index component {m} out of range for factor {} of dimension {d}",
                j + 1
            )));
        }
        idx = idx * d + m;
    }
    Ok(idx)
}

fn decode_multi(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut multi = vec![0usize; dims.len()];
    for j in (0..dims.len()).rev() {
        multi[j] = idx % dims[j];
        idx /= dims[j];
    }
    multi
}

/// The index map realizing the factor-order rotation `(h, ..., v, 1, ..., h-1)`.
///
/// `forward[p]` is the linear index (in the original layout) of the
/// multi-index whose rotated linear index is `p`; `h = 1` is the identity.
pub fn rotation_map(shape: &FactorShape, h: usize) -> Result<IndexPermutation> {
    let rotated = shape.rotated(h)?;
    let v = shape.num_factors();
    let n = shape.total();
    let mut forward = vec![0usize; n];
    let mut original = vec![0usize; v];
    for (p, slot) in forward.iter_mut().enumerate() {
        let rot_multi = decode_multi(p, rotated.dims());
        for (k, &val) in rot_multi.iter().enumerate() {
            original[(h - 1 + k) % v] = val;
        }
        *slot = linear_index(&original, shape)?;
    }
    Ok(IndexPermutation { forward })
}

/// Partial trace: views `A` as `n1 x n1` blocks and returns the matrix of
/// block traces.
pub fn partial_trace(a: &SymMatrix, n1: usize) -> Result<SymMatrix> {
    let n = a.order();
    if n1 == 0 || n % n1 != 0 {
        return Err(Error::InvalidInput(format!(
            "order {n} is not divisible by block count {n1}"
        )));
    }
    let m = n / n1;
    let arr = a.as_array();
    let mut out = Array2::zeros((n1, n1));
    for i in 0..n1 {
        for j in 0..n1 {
            let mut s = 0.0;
            for l in 0..m {
                s += arr[[i * m + l, j * m + l]];
            }
            out[[i, j]] = s;
        }
    }
    SymMatrix::new(out)
}

/// Partial trace of the rotated matrix, computed by direct index lookup.
/// Equals `partial_trace(rotation_map(shape, h).conjugate(a), n_h)` without
/// ever materializing the rotated matrix.
pub fn rotated_partial_trace(a: &SymMatrix, shape: &FactorShape, h: usize) -> Result<SymMatrix> {
    if a.order() != shape.total() {
        return Err(Error::InvalidInput(format!(
            "matrix order {} does not match shape product {}",
            a.order(),
            shape.total()
        )));
    }
    if h == 1 {
        return partial_trace(a, shape.factor_dim(1)?);
    }
    let nh = shape.factor_dim(h)?;
    let m = shape.co_dim(h)?;
    let perm = rotation_map(shape, h)?;
    let f = perm.forward();
    let arr = a.as_array();
    let mut out = Array2::zeros((nh, nh));
    for i in 0..nh {
        for j in 0..nh {
            let mut s = 0.0;
            for l in 0..m {
                s += arr[[f[i * m + l], f[j * m + l]]];
            }
            out[[i, j]] = s;
        }
    }
    SymMatrix::new(out)
}

/// Dense Kronecker product `scale * A_1 (x) ... (x) A_k`.
pub fn kron_materialize(factors: &[SymMatrix], scale: f64) -> Result<SymMatrix> {
    if factors.is_empty() {
        return Err(Error::InvalidInput("at least one factor required".into()));
    }
    let total: usize = factors.iter().map(|f| f.order()).product();
    if total > DENSE_ORDER_CAP {
        return Err(Error::Resource(format!(
            "dense Kronecker product of order {total} exceeds cap {DENSE_ORDER_CAP}"
        )));
    }
    let mut acc = Array2::from_elem((1, 1), scale);
    for f in factors {
        acc = kron_dense(&acc.view(), &f.view());
    }
    SymMatrix::new(acc)
}

fn kron_dense(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Structured matvec `scale * (A_1 (x) ... (x) A_k) x` in `O(n * sum n_j)`.
pub fn kron_matvec(factors: &[SymMatrix], scale: f64, x: &[f64]) -> Result<Vec<f64>> {
    let views: Vec<ArrayView2<f64>> = factors.iter().map(|f| f.view()).collect();
    kron_matvec_general(&views, scale, x)
}

/// As [`kron_matvec`] but for general (not necessarily symmetric) square
/// factors, e.g. Cholesky factors used when sampling.
pub fn kron_matvec_general(factors: &[ArrayView2<f64>], scale: f64, x: &[f64]) -> Result<Vec<f64>> {
    if factors.is_empty() {
        return Err(Error::InvalidInput("at least one factor required".into()));
    }
    let total: usize = factors.iter().map(|f| f.nrows()).product();
    if factors.iter().any(|f| f.nrows() != f.ncols()) {
        return Err(Error::InvalidInput("factors must be square".into()));
    }
    if x.len() != total {
        return Err(Error::InvalidInput(format!(
            "vector length {} does not match factor order product {}",
            x.len(),
            total
        )));
    }
    let mut cur = x.to_vec();
    let mut scratch = vec![0.0f64; total];
    let mut right: usize = factors[1..].iter().map(|f| f.nrows()).product();
    let mut left = 1usize;
    for (j, fac) in factors.iter().enumerate() {
        let nj = fac.nrows();
        for l in 0..left {
            let base = l * nj * right;
            for s in 0..right {
                for r in 0..nj {
                    let mut acc = 0.0;
                    for c in 0..nj {
                        acc += fac[[r, c]] * cur[base + c * right + s];
                    }
                    scratch[base + r * right + s] = acc;
                }
            }
        }
        std::mem::swap(&mut cur, &mut scratch);
        left *= nj;
        if j + 1 < factors.len() {
            right /= factors[j + 1].nrows();
        }
    }
    for v in cur.iter_mut() {
        *v *= scale;
    }
    Ok(cur)
}
