//! Data types for the shared-eigenbasis model and its Gaussian likelihood.
//!
//! A data set is a collection of K square N x N matrices `C_k`. The model
//! explains each of them as `B diag(u_k) B' + E_k` with a common orthonormal
//! `B` (N x M, M <= N), per-matrix eigenvalues `u_k` and i.i.d. Gaussian
//! noise with per-matrix variance `sigma2_k`. Working with the vectorized
//! form `x_k = vec(C_k)` turns the mean into `A u_k` where the design matrix
//! `A` has `vec(b_m b_m')` as its m-th column; orthonormality of `B` gives
//! `A'A = I` exactly, which is what makes the conjugate updates cheap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-entry tolerance on `B'B - I` accepted by [`StiefelPoint::new`].
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// A collection of K real square matrices of a common dimension N.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSet {
    dim: usize,
    matrices: Vec<DMatrix<f64>>,
}

impl MatrixSet {
    /// Validates that all matrices are square, finite and of equal dimension.
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::InvalidArgument("matrix set must be non-empty".into()));
        }
        let dim = matrices[0].nrows();
        if dim == 0 {
            return Err(Error::InvalidArgument("matrices must be non-empty".into()));
        }
        for (k, c) in matrices.iter().enumerate() {
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "matrix {k} is {}x{}, expected {dim}x{dim}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("matrix {k} has non-finite entries")));
            }
        }
        Ok(Self { dim, matrices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_count(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn get(&self, k: usize) -> &DMatrix<f64> {
        &self.matrices[k]
    }

    /// Serializes to the on-disk JSON form with row-major matrix entries.
    pub fn to_json_string(&self) -> String {
        let wire = MatrixSetWire {
            n: self.dim,
            k: self.k_count(),
            matrices: self.matrices.iter().map(flatten_row_major).collect(),
        };
        serde_json::to_string(&wire).expect("matrix set serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let wire: MatrixSetWire =
            serde_json::from_str(s).map_err(|e| Error::Parse(format!("matrix set JSON: {e}")))?;
        if wire.k != wire.matrices.len() {
            return Err(Error::Parse(format!(
                "matrix set JSON declares k={} but holds {} matrices",
                wire.k,
                wire.matrices.len()
            )));
        }
        let matrices = wire
            .matrices
            .iter()
            .enumerate()
            .map(|(k, flat)| {
                from_row_major(wire.n, wire.n, flat).map_err(|_| {
                    Error::Parse(format!(
                        "matrix {k} has {} entries, expected {}",
                        flat.len(),
                        wire.n * wire.n
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(matrices)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// One CSV document per matrix: N lines of N comma-separated values.
    pub fn to_csv_strings(&self) -> Vec<String> {
        self.matrices
            .iter()
            .map(|c| {
                let mut out = String::new();
                for i in 0..self.dim {
                    let row: Vec<String> = (0..self.dim).map(|j| format!("{}", c[(i, j)])).collect();
                    out.push_str(&row.join(","));
                    out.push('\n');
                }
                out
            })
            .collect()
    }

    pub fn from_csv_strings(docs: &[String]) -> Result<Self> {
        let matrices = docs
            .iter()
            .enumerate()
            .map(|(k, doc)| {
                let rows: Vec<Vec<f64>> = doc
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        l.split(',')
                            .map(|v| {
                                v.trim()
                                    .parse::<f64>()
                                    .map_err(|e| Error::Parse(format!("matrix {k}: {e}")))
                            })
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Parse(format!("matrix {k} is not square")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(matrices)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixSetWire {
    n: usize,
    k: usize,
    matrices: Vec<Vec<f64>>,
}

/// An N x M matrix with orthonormal columns (a point on the Stiefel manifold).
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    matrix: DMatrix<f64>,
}

impl StiefelPoint {
    /// Accepts `B` when every entry of `B'B - I` is within
    /// [`ORTHONORMALITY_TOL`] in absolute value.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() > matrix.nrows() || matrix.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "Stiefel point must be N x M with 1 <= M <= N, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dev = ortho_deviation(&matrix);
        if !(dev <= ORTHONORMALITY_TOL) {
            return Err(Error::NotOrthonormal(dev));
        }
        Ok(Self { matrix })
    }

    /// Skips validation; the caller guarantees orthonormal columns.
    pub fn new_unchecked(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn m(&self) -> usize {
        self.matrix.ncols()
    }

    /// Max-entry deviation of `B'B` from the identity.
    pub fn ortho_deviation(&self) -> f64 {
        ortho_deviation(&self.matrix)
    }
}

fn ortho_deviation(b: &DMatrix<f64>) -> f64 {
    let gram = b.transpose() * b;
    let mut dev: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev
}

/// K eigenvalue vectors of a common length M; signs are unrestricted.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenvalueSet {
    values: Vec<DVector<f64>>,
}

impl EigenvalueSet {
    pub fn new(values: Vec<DVector<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("eigenvalue set must be non-empty".into()));
        }
        let m = values[0].len();
        if m == 0 || values.iter().any(|u| u.len() != m) {
            return Err(Error::Dimension("eigenvalue vectors must share a non-zero length".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn get(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn m(&self) -> usize {
        self.values[0].len()
    }

    pub fn k_count(&self) -> usize {
        self.values.len()
    }
}

/// Per-matrix noise variances `sigma2_k` and eigenvalue scales `v2_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseState {
    pub sigma2: Vec<f64>,
    pub v2: Vec<f64>,
}

impl NoiseState {
    pub fn validate(&self) -> Result<()> {
        if self.sigma2.len() != self.v2.len() {
            return Err(Error::Dimension("sigma2 and v2 must have equal length".into()));
        }
        if self.sigma2.iter().chain(self.v2.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositive("noise variances must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Gamma prior parameters, one `(a_k, b_k)` pair per matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl HyperParams {
    /// The vague default `a_k = b_k = 1e-3`.
    pub fn vague(k: usize) -> Self {
        Self { a: vec![1e-3; k], b: vec![1e-3; k] }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.a.len() != k || self.b.len() != k {
            return Err(Error::Dimension(format!("hyperparameters must have length {k}")));
        }
        if self.a.iter().chain(self.b.iter()).any(|&v| !(v > 0.0)) {
            return Err(Error::NonPositive("hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

/// Stacks the columns of `c` into a single vector (column-major order).
pub fn vectorize(c: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(c.as_slice())
}

/// The N^2 x M design matrix whose m-th column is `vec(b_m b_m')`.
///
/// Orthonormal columns of `B` make the result satisfy `A'A = I` exactly, so
/// the least-squares projection of `vec(C)` onto the column span is just
/// `A' vec(C)`.
pub fn design_matrix(b: &StiefelPoint) -> DMatrix<f64> {
    let (n, m) = (b.n(), b.m());
    let mut a = DMatrix::zeros(n * n, m);
    for col in 0..m {
        let bm = b.matrix().column(col);
        // vec(b b') in column-major order is the Kronecker product b (x) b.
        for j in 0..n {
            for i in 0..n {
                a[(j * n + i, col)] = bm[i] * bm[j];
            }
        }
    }
    a
}

/// `B diag(u) B'`, the noiseless model mean for one matrix.
pub fn reconstruct(b: &StiefelPoint, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    if u.len() != b.m() {
        return Err(Error::Dimension(format!(
            "eigenvalue vector has length {}, expected {}",
            u.len(),
            b.m()
        )));
    }
    let scaled = b.matrix() * DMatrix::from_diagonal(u);
    Ok(scaled * b.matrix().transpose())
}

/// Gaussian log-likelihood of the full matrix set:
/// `sum_k [ -(N^2/2) log(2 pi sigma2_k) - ||C_k - B diag(u_k) B'||_F^2 / (2 sigma2_k) ]`.
pub fn log_likelihood(
    c: &MatrixSet,
    b: &StiefelPoint,
    lambdas: &EigenvalueSet,
    noise: &NoiseState,
) -> Result<f64> {
    let k = c.k_count();
    if lambdas.k_count() != k || noise.sigma2.len() != k {
        return Err(Error::Dimension("eigenvalues/noise must match the matrix count".into()));
    }
    if b.n() != c.dim() || lambdas.m() != b.m() {
        return Err(Error::Dimension("basis does not match the data dimensions".into()));
    }
    noise.validate()?;
    let n2 = (c.dim() * c.dim()) as f64;
    let mut total = 0.0;
    for kk in 0..k {
        let sigma2 = noise.sigma2[kk];
        let mean = reconstruct(b, lambdas.get(kk))?;
        let resid = c.get(kk) - mean;
        let ss: f64 = resid.iter().map(|v| v * v).sum();
        total += -0.5 * n2 * (2.0 * std::f64::consts::PI * sigma2).ln() - ss / (2.0 * sigma2);
    }
    Ok(total)
}

/// Row-major flattening used by every on-disk format in this crate.
pub fn flatten_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`flatten_row_major`].
pub fn from_row_major(nrows: usize, ncols: usize, flat: &[f64]) -> Result<DMatrix<f64>> {
    if flat.len() != nrows * ncols {
        return Err(Error::Dimension(format!(
            "flat slice has {} entries, expected {}",
            flat.len(),
            nrows * ncols
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| flat[i * ncols + j]))
}
