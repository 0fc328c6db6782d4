//! Synthetic data: planted joint-diagonalization instances, mixed sinusoid
//! recordings for source-separation runs, and a two-class dataset for
//! common-spatial-pattern style analysis.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bingham::sorted_symmetric_eigen;
use crate::model::{EigenvalueSet, MatrixSet, StiefelPoint};
use crate::{Error, Result};

/// Eigenvalue floor below which whitening refuses the input as rank deficient.
pub const WHITEN_RANK_TOL: f64 = 1e-12;

/// A generated instance with its ground truth.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub matrices: MatrixSet,
    pub basis: StiefelPoint,
    pub eigenvalues: EigenvalueSet,
    pub sigma2: f64,
}

/// Whitening transform fitted to a signal matrix: `x_tilde = W (x - mean)`.
#[derive(Debug, Clone)]
pub struct Whitening {
    /// The N x N whitening matrix `W = D^{-1/2} U'`.
    pub matrix: DMatrix<f64>,
    /// Per-channel mean removed before whitening.
    pub mean: DVector<f64>,
    /// The whitened signals (unit sample covariance).
    pub whitened: DMatrix<f64>,
}

/// Two-class synthetic recordings sharing one mixing matrix.
#[derive(Debug, Clone)]
pub struct CspaInstance {
    pub class1: DMatrix<f64>,
    pub class2: DMatrix<f64>,
    pub mixing: DMatrix<f64>,
}

/// Haar-distributed point on the Stiefel manifold: QR of a Gaussian matrix
/// with the sign ambiguity fixed by making the R diagonal positive.
pub fn random_stiefel<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<StiefelPoint> {
    if m == 0 || m > n {
        return Err(Error::Dimension(format!("need 1 <= M <= N, got N={n}, M={m}")));
    }
    let gauss = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..m {
        if r[(c, c)] < 0.0 {
            let neg = -q.column(c).clone_owned();
            q.set_column(c, &neg);
        }
    }
    Ok(StiefelPoint::new_unchecked(q))
}

/// Planted instance: Haar basis, standard Gaussian eigenvalues and i.i.d.
/// Gaussian noise of variance `sigma2` (zero allowed for exact instances).
pub fn jd_dataset<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    k: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<PlantedInstance> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one matrix".into()));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::NonPositive("sigma2 must be finite and non-negative".into()));
    }
    let basis = random_stiefel(n, m, rng)?;
    let noise_std = sigma2.sqrt();
    let mut values = Vec::with_capacity(k);
    let mut matrices = Vec::with_capacity(k);
    for _ in 0..k {
        let u = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut c = crate::model::reconstruct(&basis, &u)?;
        if noise_std > 0.0 {
            for v in c.iter_mut() {
                *v += noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        values.push(u);
        matrices.push(c);
    }
    Ok(PlantedInstance {
        matrices: MatrixSet::new(matrices)?,
        basis,
        eigenvalues: EigenvalueSet::new(values)?,
        sigma2,
    })
}

/// Deterministic bank of sinusoid sources, one per row: source `i` is
/// `sin(2 pi f_i t / T + phi_i)` with `f_i = 2 + 3 i` cycles per record and
/// `phi_i = i pi / 7`. Integer cycle counts make the rows zero-mean and
/// essentially uncorrelated.
pub fn sine_sources(n_sources: usize, n_samples: usize) -> Result<DMatrix<f64>> {
    if n_sources == 0 || n_samples < 2 {
        return Err(Error::InvalidArgument("need at least one source and two samples".into()));
    }
    let t_total = n_samples as f64;
    Ok(DMatrix::from_fn(n_sources, n_samples, |i, t| {
        let freq = (2 + 3 * i) as f64;
        let phase = i as f64 * std::f64::consts::PI / 7.0;
        (2.0 * std::f64::consts::PI * freq * t as f64 / t_total + phase).sin()
    }))
}

/// Mixes sources into channel recordings: `X = A S + E` with i.i.d. Gaussian
/// noise of standard deviation `noise_std`. The mixing matrix must be square
/// (channels = sources) and nonsingular.
pub fn mix_sources<R: Rng + ?Sized>(
    s: &DMatrix<f64>,
    a: &DMatrix<f64>,
    noise_std: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension(format!(
            "mixing matrix must be {n}x{n}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::NonPositive("noise level must be finite and non-negative".into()));
    }
    if !a.clone().full_piv_lu().is_invertible() {
        return Err(Error::RankDeficient("mixing matrix is singular".into()));
    }
    let mut x = a * s;
    if noise_std > 0.0 {
        for v in x.iter_mut() {
            *v += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(x)
}

/// Centers the channels and fits `W = D^{-1/2} U'` from the eigendecomposed
/// sample covariance (normalized by T), so the whitened output has unit
/// sample covariance. Covariance eigenvalues below [`WHITEN_RANK_TOL`] are
/// rejected.
pub fn whiten(x: &DMatrix<f64>) -> Result<Whitening> {
    let (n, t) = (x.nrows(), x.ncols());
    if t <= n {
        return Err(Error::Dimension(format!("need more samples than channels ({t} <= {n})")));
    }
    let mean = DVector::from_fn(n, |i, _| x.row(i).sum() / t as f64);
    let mut centered = x.clone();
    for i in 0..n {
        for j in 0..t {
            centered[(i, j)] -= mean[i];
        }
    }
    let cov = &centered * centered.transpose() / t as f64;
    let (u, vals) = sorted_symmetric_eigen(&cov);
    if vals.iter().any(|&v| v < WHITEN_RANK_TOL) {
        return Err(Error::RankDeficient(format!(
            "covariance eigenvalue {:.3e} below {WHITEN_RANK_TOL:.0e}",
            vals.min()
        )));
    }
    let d_inv_sqrt = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    let w = d_inv_sqrt * u.transpose();
    let whitened = &w * centered;
    Ok(Whitening { matrix: w, mean, whitened })
}

/// Time-lagged covariance matrices of a (typically whitened) signal matrix:
/// `C(tau)[i][j] = (1/(T - tau)) sum_t x_i(t + tau) x_j(t)` for
/// `tau = 1..max_lag`. No symmetrization is applied, so the results are
/// genuinely non-symmetric.
pub fn lagged_covariances(x: &DMatrix<f64>, max_lag: usize) -> Result<MatrixSet> {
    let (n, t) = (x.nrows(), x.ncols());
    if max_lag == 0 || max_lag >= t {
        return Err(Error::InvalidArgument(format!(
            "max_lag must be in [1, T-1], got {max_lag} with T={t}"
        )));
    }
    let mut out = Vec::with_capacity(max_lag);
    for tau in 1..=max_lag {
        let len = t - tau;
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for step in 0..len {
                    acc += x[(i, step + tau)] * x[(j, step)];
                }
                c[(i, j)] = acc / len as f64;
            }
        }
        out.push(c);
    }
    MatrixSet::new(out)
}

/// Two-class data: class 1 sources are N(0, diag(0.1, 0.9)), class 2 swaps
/// the variances, and both classes share one random nonsingular mixing
/// matrix.
pub fn cspa_dataset<R: Rng + ?Sized>(n_per_class: usize, rng: &mut R) -> Result<CspaInstance> {
    if n_per_class < 3 {
        return Err(Error::InvalidArgument("need at least 3 samples per class".into()));
    }
    let gen_class = |vars: [f64; 2], rng: &mut R| {
        DMatrix::from_fn(2, n_per_class, |i, _| {
            vars[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
    };
    let s1 = gen_class([0.1, 0.9], rng);
    let s2 = gen_class([0.9, 0.1], rng);
    let mixing = loop {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        if a.determinant().abs() >= 0.3 {
            break a;
        }
    };
    Ok(CspaInstance { class1: &mixing * s1, class2: &mixing * s2, mixing })
}

/// Projects recordings through the whitening transform and the learned
/// basis: `B' W (y - mean)`, using the mean stored in the whitening.
pub fn csp_filter(b: &StiefelPoint, wh: &Whitening, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = wh.matrix.nrows();
    if y.nrows() != n || b.n() != n {
        return Err(Error::Dimension("channel counts do not match the whitening".into()));
    }
    let mut centered = y.clone();
    for i in 0..n {
        for j in 0..y.ncols() {
            centered[(i, j)] -= wh.mean[i];
        }
    }
    Ok(b.matrix().transpose() * (&wh.matrix * centered))
}
