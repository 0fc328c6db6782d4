//! Gibbs sampling from the vector Bingham distribution
//! `p(x | Sigma) ∝ exp(x' Sigma x)` on the unit sphere `S^{M-1}`.
//!
//! Sampling happens in the eigenbasis of `Sigma`: with `Sigma = U L U'` and
//! `y = U'x`, the density becomes `exp(sum_i lambda_i y_i^2)`. One sweep
//! visits each coordinate `i` in turn and redraws `theta = y_i^2` from its
//! full conditional
//!
//! ```text
//! p(theta) ∝ theta^{-1/2} (1-theta)^{(M-3)/2}
//!            exp{ lambda_i theta + (1-theta) sum_{j!=i} lambda_j u_j },
//! ```
//!
//! where `u_j = y_j^2 / (1 - y_i^2)` are the relative weights of the other
//! coordinates. Three interchangeable schemes draw from this univariate
//! density: exact rejection with a Beta(1/2, (M-1)/2) envelope, slice
//! sampling, and a discretized grid.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::{Error, Result};

/// Consecutive rejections after which the rejection scheme gives up.
pub const REJECTION_LIMIT: u64 = 1_000_000;

/// Internal slice-sampler updates per conditional draw.
const SLICE_STEPS: usize = 8;

/// Coarse grid whose categorical draw seeds the slice sampler.
const SLICE_INIT_GRID: usize = 64;

/// A pivot coordinate this close to carrying all mass is left untouched.
const PIVOT_SKIP_TOL: f64 = 1e-14;

/// Symmetric parameter matrix of a vector Bingham distribution.
#[derive(Debug, Clone)]
pub struct BinghamParams {
    sigma: DMatrix<f64>,
}

impl BinghamParams {
    /// Requires a finite square matrix of dimension >= 2, symmetric up to
    /// `1e-10 * (1 + max|entry|)`; the stored copy is symmetrized exactly.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() < 2 {
            return Err(Error::Dimension(format!(
                "Bingham parameter must be square with dimension >= 2, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("Bingham parameter has non-finite entries".into()));
        }
        let scale = 1.0 + sigma.amax();
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        Ok(Self { sigma: sym })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
}

/// How the univariate `theta` conditional is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaScheme {
    /// Exact rejection with a Beta(1/2, (M-1)/2) proposal.
    Rejection,
    /// Slice sampling with the given stepping-out width.
    Slice { width: f64 },
    /// Discretized draw over cell midpoints.
    Grid { size: usize },
}

impl ThetaScheme {
    pub fn slice() -> Self {
        ThetaScheme::Slice { width: 0.25 }
    }

    pub fn grid() -> Self {
        ThetaScheme::Grid { size: 1000 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ThetaScheme::Rejection => Ok(()),
            ThetaScheme::Slice { width } => {
                if width > 0.0 && width.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("slice width must be positive".into()))
                }
            }
            ThetaScheme::Grid { size } => {
                if size >= 10 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("grid size must be at least 10".into()))
                }
            }
        }
    }

    /// Parses "rejection", "slice" or "grid" (with default width/size).
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "rejection" => Ok(ThetaScheme::Rejection),
            "slice" => Ok(ThetaScheme::slice()),
            "grid" => Ok(ThetaScheme::grid()),
            other => Err(Error::InvalidArgument(format!("unknown theta scheme '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ThetaScheme::Rejection => "rejection",
            ThetaScheme::Slice { .. } => "slice",
            ThetaScheme::Grid { .. } => "grid",
        }
    }
}

/// Coordinate visiting order within one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanOrder {
    Sequential,
    Random,
}

/// Eigendecomposition of a Bingham parameter matrix, eigenvalues sorted in
/// descending order with eigenvector columns permuted to match.
pub fn eigendecompose(params: &BinghamParams) -> (DMatrix<f64>, DVector<f64>) {
    sorted_symmetric_eigen(params.sigma())
}

/// Descending-order symmetric eigendecomposition of an (assumed symmetric)
/// matrix. Shared by the basis updates, whitening and the sampler init.
pub(crate) fn sorted_symmetric_eigen(sym: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = sym.clone().symmetric_eigen();
    let m = sym.nrows();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = DVector::from_fn(m, |i, _| eig.eigenvalues[idx[i]]);
    let vecs = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vecs, vals)
}

/// Unnormalized log density of `theta = y_i^2` given the pivot eigenvalue
/// `lambda_i` and `rest_term = sum_{j!=i} lambda_j u_j`. Returns `-inf`
/// outside the open interval (0, 1).
pub fn theta_log_density(theta: f64, lambda_i: f64, rest_term: f64, m: usize) -> f64 {
    debug_assert!(m >= 2);
    if theta <= 0.0 || theta >= 1.0 {
        return f64::NEG_INFINITY;
    }
    -0.5 * theta.ln() + 0.5 * (m as f64 - 3.0) * (1.0 - theta).ln()
        + lambda_i * theta
        + (1.0 - theta) * rest_term
}

/// Draws `theta` from the conditional density above using the given scheme.
pub fn sample_theta<R: Rng + ?Sized>(
    lambda_i: f64,
    rest_term: f64,
    m: usize,
    scheme: ThetaScheme,
    rng: &mut R,
) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidArgument("theta conditional needs dimension >= 2".into()));
    }
    scheme.validate()?;
    match scheme {
        ThetaScheme::Rejection => {
            // Target / envelope = exp(c theta) with c = lambda_i - rest_term,
            // so accepting with probability exp(c theta - max(c, 0)) is exact.
            let c = lambda_i - rest_term;
            let cap = c.max(0.0);
            let beta = Beta::new(0.5, 0.5 * (m as f64 - 1.0))
                .map_err(|e| Error::InvalidArgument(format!("beta proposal: {e}")))?;
            let mut rejections: u64 = 0;
            loop {
                let theta: f64 = beta.sample(rng);
                if theta > 0.0 && theta < 1.0 && rng.random::<f64>() < (c * theta - cap).exp() {
                    return Ok(theta);
                }
                rejections += 1;
                if rejections >= REJECTION_LIMIT {
                    return Err(Error::RejectionOverflow(REJECTION_LIMIT));
                }
            }
        }
        ThetaScheme::Slice { width } => {
            let f = |t: f64| theta_log_density(t, lambda_i, rest_term, m);
            // Seed from a categorical draw over a coarse grid (a rough sample
            // from the target works in every regime, including the endpoint
            // singularities where a deterministic mode seed sticks), then run
            // a short slice chain to erase the quantization.
            let g = SLICE_INIT_GRID as f64;
            let mut logw = [0.0; SLICE_INIT_GRID];
            let mut max = f64::NEG_INFINITY;
            for (cell, w) in logw.iter_mut().enumerate() {
                *w = f((cell as f64 + 0.5) / g);
                max = max.max(*w);
            }
            let mut total = 0.0;
            for w in logw.iter_mut() {
                *w = (*w - max).exp();
                total += *w;
            }
            let mut target = rng.random::<f64>() * total;
            let mut x = (g - 0.5) / g;
            for (cell, w) in logw.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    x = (cell as f64 + 0.5) / g;
                    break;
                }
            }
            for _ in 0..SLICE_STEPS {
                let level = f(x) + rng.random::<f64>().ln();
                let mut lo = x - width * rng.random::<f64>();
                let mut hi = lo + width;
                while lo > 0.0 && f(lo) > level {
                    lo -= width;
                }
                lo = lo.max(0.0);
                while hi < 1.0 && f(hi) > level {
                    hi += width;
                }
                hi = hi.min(1.0);
                loop {
                    let cand = lo + rng.random::<f64>() * (hi - lo);
                    if f(cand) > level {
                        x = cand;
                        break;
                    }
                    if cand < x {
                        lo = cand;
                    } else {
                        hi = cand;
                    }
                    if hi - lo < 1e-300 {
                        break;
                    }
                }
            }
            Ok(x)
        }
        ThetaScheme::Grid { size } => {
            let g = size as f64;
            let mut logw = Vec::with_capacity(size);
            let mut max = f64::NEG_INFINITY;
            for cell in 0..size {
                let t = (cell as f64 + 0.5) / g;
                let v = theta_log_density(t, lambda_i, rest_term, m);
                max = max.max(v);
                logw.push(v);
            }
            let mut total = 0.0;
            let weights: Vec<f64> = logw
                .iter()
                .map(|v| {
                    let w = (v - max).exp();
                    total += w;
                    w
                })
                .collect();
            let mut target = rng.random::<f64>() * total;
            for (cell, w) in weights.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    return Ok((cell as f64 + 0.5) / g);
                }
            }
            Ok((size as f64 - 0.5) / g)
        }
    }
}

/// One Gibbs sweep over the coordinates of `y` (unit vector, modified in
/// place) in the eigenbasis with eigenvalues `lambda`. Coordinates whose
/// squared value is within [`PIVOT_SKIP_TOL`] of one are skipped.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    y: &mut DVector<f64>,
    lambda: &DVector<f64>,
    scheme: ThetaScheme,
    rng: &mut R,
) -> Result<()> {
    gibbs_sweep_scan(y, lambda, scheme, ScanOrder::Sequential, rng)
}

/// [`gibbs_sweep`] with an explicit coordinate visiting order.
pub fn gibbs_sweep_scan<R: Rng + ?Sized>(
    y: &mut DVector<f64>,
    lambda: &DVector<f64>,
    scheme: ThetaScheme,
    scan: ScanOrder,
    rng: &mut R,
) -> Result<()> {
    let m = y.len();
    if lambda.len() != m {
        return Err(Error::Dimension("eigenvalue vector must match the sphere dimension".into()));
    }
    if m < 2 {
        return Err(Error::Dimension("sphere dimension must be at least 2".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    if scan == ScanOrder::Random {
        use rand::seq::SliceRandom;
        order.shuffle(rng);
    }
    let mut weights = vec![0.0; m];
    for &i in &order {
        let denom = 1.0 - y[i] * y[i];
        if denom < PIVOT_SKIP_TOL {
            continue;
        }
        let mut total = 0.0;
        for j in 0..m {
            if j != i {
                weights[j] = y[j] * y[j] / denom;
                total += weights[j];
            }
        }
        // The weights sum to one analytically; renormalizing kills the
        // accumulated rounding drift so the updated y stays unit norm.
        let mut rest = 0.0;
        for j in 0..m {
            if j != i {
                weights[j] /= total;
                rest += lambda[j] * weights[j];
            }
        }
        let theta = sample_theta(lambda[i], rest, m, scheme, rng)?;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        y[i] = sign * theta.sqrt();
        for j in 0..m {
            if j != i {
                y[j] = ((1.0 - theta) * weights[j]).sqrt().copysign(y[j]);
            }
        }
    }
    Ok(())
}

/// Draws `n_samples` (after `burn_in` discarded sweeps, one sample per
/// sweep) from the vector Bingham distribution with parameter `sigma`,
/// starting from a uniform point on the sphere.
pub fn sample_vector_bingham<R: Rng + ?Sized>(
    params: &BinghamParams,
    n_samples: usize,
    burn_in: usize,
    scheme: ThetaScheme,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    sample_vector_bingham_scan(params, n_samples, burn_in, scheme, ScanOrder::Sequential, rng)
}

/// [`sample_vector_bingham`] with an explicit coordinate scan order.
pub fn sample_vector_bingham_scan<R: Rng + ?Sized>(
    params: &BinghamParams,
    n_samples: usize,
    burn_in: usize,
    scheme: ThetaScheme,
    scan: ScanOrder,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let (u, lambda) = eigendecompose(params);
    let mut y = random_unit_vector(params.dim(), rng);
    for _ in 0..burn_in {
        gibbs_sweep_scan(&mut y, &lambda, scheme, scan, rng)?;
    }
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        gibbs_sweep_scan(&mut y, &lambda, scheme, scan, rng)?;
        out.push(&u * &y);
    }
    Ok(out)
}

/// Uniform point on the unit sphere via normalized Gaussians.
pub fn random_unit_vector<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let y = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = y.norm();
        if norm > 1e-12 {
            return y / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schemes() -> [ThetaScheme; 3] {
        [ThetaScheme::Rejection, ThetaScheme::slice(), ThetaScheme::grid()]
    }

    #[test]
    fn theta_log_density_frozen_value() {
        // -0.5 ln(0.3) + 3.5 ln(0.7) + 2*0.3 + 0.7*(-1), evaluated externally.
        let v = theta_log_density(0.3, 2.0, -1.0, 10);
        assert!((v - (-0.746_375_901_622_595_5)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn theta_log_density_m2_is_finite_and_boundaries_are_neg_inf() {
        assert!(theta_log_density(0.5, 1.0, 0.0, 2).is_finite());
        assert_eq!(theta_log_density(0.0, 1.0, 0.0, 5), f64::NEG_INFINITY);
        assert_eq!(theta_log_density(1.0, 1.0, 0.0, 5), f64::NEG_INFINITY);
    }

    #[test]
    fn flat_conditional_reduces_to_beta() {
        // m=3 and lambda_i = rest = 0 make the target Beta(1/2, 1), mean 1/3.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for scheme in schemes() {
            let mut sum = 0.0;
            let n = 20_000;
            for _ in 0..n {
                sum += sample_theta(0.0, 0.0, 3, scheme, &mut rng).unwrap();
            }
            let mean = sum / n as f64;
            assert!(
                (mean - 1.0 / 3.0).abs() < 0.01,
                "{} scheme mean {mean} != 1/3",
                scheme.tag()
            );
        }
    }

    #[test]
    fn tilted_conditional_matches_quadrature() {
        // E[theta] for m=10, lambda_i=5, rest=0 computed by 1e5-point
        // midpoint quadrature: 0.23798341118640673.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for scheme in schemes() {
            let mut sum = 0.0;
            let n = 20_000;
            for _ in 0..n {
                sum += sample_theta(5.0, 0.0, 10, scheme, &mut rng).unwrap();
            }
            let mean = sum / n as f64;
            assert!(
                (mean - 0.237_983_411_186_406_73).abs() < 0.01,
                "{} scheme mean {mean}",
                scheme.tag()
            );
        }
    }

    #[test]
    fn rejection_overflow_reports_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let res = sample_theta(1e9, 0.0, 6, ThetaScheme::Rejection, &mut rng);
        assert!(matches!(res, Err(Error::RejectionOverflow(_))));
    }

    #[test]
    fn grid_scheme_rejects_tiny_grids() {
        assert!(ThetaScheme::Grid { size: 9 }.validate().is_err());
        assert!(ThetaScheme::Grid { size: 10 }.validate().is_ok());
        assert!(ThetaScheme::Slice { width: 0.0 }.validate().is_err());
    }

    #[test]
    fn sweep_preserves_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let lambda = DVector::from_vec(vec![3.0, 1.0, 0.0, -2.0, -5.0]);
        for scheme in schemes() {
            let mut y = random_unit_vector(5, &mut rng);
            for _ in 0..1000 {
                gibbs_sweep(&mut y, &lambda, scheme, &mut rng).unwrap();
                let drift = (y.norm() - 1.0).abs();
                assert!(drift < 1e-10, "{} scheme norm drift {drift}", scheme.tag());
            }
        }
    }

    #[test]
    fn sweep_handles_degenerate_pivot() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let lambda = DVector::from_vec(vec![1.0, 0.5, -1.0]);
        let mut y = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        gibbs_sweep(&mut y, &lambda, ThetaScheme::Rejection, &mut rng).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eigendecompose_sorts_descending() {
        let sigma = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let params = BinghamParams::new(sigma).unwrap();
        let (u, l) = eigendecompose(&params);
        assert!((l[0] - 2.0).abs() < 1e-12 && (l[1] + 2.0).abs() < 1e-12);
        // Columns are unit eigenvectors of [[0,2],[2,0]]: (1,1)/sqrt(2) first.
        assert!((u.column(0)[0].abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn bingham_params_reject_asymmetric_and_tiny() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(BinghamParams::new(bad), Err(Error::NotSymmetric(_))));
        assert!(BinghamParams::new(DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn samples_touch_both_hemispheres_and_average_out() {
        // Antipodal symmetry: p(x) = p(-x), so coordinate means vanish.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let sigma = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.3, 0.0, 0.3, 0.0, -0.2, 0.0, -0.2, -2.0],
        );
        let params = BinghamParams::new(sigma).unwrap();
        let samples =
            sample_vector_bingham(&params, 20_000, 100, ThetaScheme::Rejection, &mut rng).unwrap();
        let mut mean = DVector::zeros(3);
        for x in &samples {
            mean += x;
        }
        mean /= samples.len() as f64;
        assert!(mean.amax() < 0.02, "coordinate means {mean}");
        let top_pos = samples.iter().filter(|x| x[0] > 0.0).count();
        let frac = top_pos as f64 / samples.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "hemisphere fraction {frac}");
    }

    #[test]
    fn rotation_equivariance_of_second_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.5, 0.4, 0.1, 0.4, -0.5, 0.0, 0.1, 0.0, -1.0]);
        // A fixed rotation (Givens on coordinates 0,1 by 0.7 radians).
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let r = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let rotated = &r * &sigma * r.transpose();

        let second_moment = |sig: DMatrix<f64>, rng: &mut ChaCha8Rng| {
            let params = BinghamParams::new(sig).unwrap();
            let samples =
                sample_vector_bingham(&params, 50_000, 200, ThetaScheme::Rejection, rng).unwrap();
            let mut acc = DMatrix::zeros(3, 3);
            for x in &samples {
                acc += x * x.transpose();
            }
            acc / samples.len() as f64
        };

        let base = second_moment(sigma, &mut rng);
        let rot = second_moment(rotated, &mut rng);
        let expect = &r * &base * r.transpose();
        let dev = (rot - expect).amax();
        assert!(dev < 0.02, "second moments fail to rotate: {dev}");
    }

    #[test]
    fn rayleigh_bounds_hold_for_every_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let raw = DMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let params = BinghamParams::new((&raw + raw.transpose()) * 0.5).unwrap();
        let (_, l) = eigendecompose(&params);
        let (lmax, lmin) = (l[0], l[3]);
        for scheme in schemes() {
            let samples = sample_vector_bingham(&params, 2000, 50, scheme, &mut rng).unwrap();
            for x in &samples {
                let q = (x.transpose() * params.sigma() * x)[(0, 0)];
                assert!(
                    q >= lmin - 1e-9 && q <= lmax + 1e-9,
                    "{} scheme Rayleigh quotient {q} outside [{lmin}, {lmax}]",
                    scheme.tag()
                );
            }
        }
    }
}
