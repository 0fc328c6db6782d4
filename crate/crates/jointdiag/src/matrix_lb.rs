//! Conditional updates of the shared orthonormal basis `B`.
//!
//! Given the data, eigenvalues and noise variances, the conditional density
//! of `B` is proportional to `exp( sum_m b_m' G_m b_m )` with per-column
//! fields `G_m = sum_k lambda_m^k Upsilon_k` built from the scaled symmetric
//! parts `Upsilon_k = (C_k + C_k') / (2 sigma2_k)`.
//!
//! For `M < N` one column at a time is redrawn inside the orthogonal
//! complement of the others: with `Q` an orthonormal basis of that
//! complement, `b_i = Q beta` and `beta` follows a vector Bingham
//! distribution with parameter `Q' G_i Q`. For `M = N` the complement of a
//! single column is empty, so columns are redrawn in pairs: the complement
//! of the remaining `N - 2` columns is a plane, and the pair of new columns
//! is an orthonormal 2-frame `Q Z` whose first column follows a circle
//! Bingham law with parameter `A_i - A_j` (the second column is determined
//! up to a sign).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::bingham::{
    eigendecompose, gibbs_sweep, sample_theta, BinghamParams, ThetaScheme,
};
use crate::model::{EigenvalueSet, MatrixSet, NoiseState, StiefelPoint};
use crate::{Error, Result};

/// Orthonormality drift beyond which [`update_basis`] re-orthonormalizes.
pub const REORTHONORMALIZE_TOL: f64 = 1e-6;

/// Diagonal of R below which a QR factor counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Scaled symmetric parts of the data together with the current eigenvalues;
/// everything the basis updates need.
#[derive(Debug, Clone)]
pub struct LBContext {
    sym_scaled: Vec<DMatrix<f64>>,
    lambdas: EigenvalueSet,
}

impl LBContext {
    /// Builds `Upsilon_k = (C_k + C_k') / (2 sigma2_k)` from raw data.
    pub fn new(c: &MatrixSet, noise: &NoiseState, lambdas: EigenvalueSet) -> Result<Self> {
        noise.validate()?;
        if noise.sigma2.len() != c.k_count() || lambdas.k_count() != c.k_count() {
            return Err(Error::Dimension("noise/eigenvalues must match the matrix count".into()));
        }
        if lambdas.m() > c.dim() {
            return Err(Error::Dimension("more eigenvalues than matrix dimensions".into()));
        }
        let sym_scaled = c
            .matrices()
            .iter()
            .zip(&noise.sigma2)
            .map(|(ck, &s2)| (ck + ck.transpose()) / (2.0 * s2))
            .collect();
        Ok(Self { sym_scaled, lambdas })
    }

    /// Fast path for the sampler: `sym` holds the precomputed symmetric
    /// parts `(C_k + C_k') / 2`, which only need rescaling by `1/sigma2_k`.
    pub fn from_symmetric_parts(
        sym: &[DMatrix<f64>],
        noise: &NoiseState,
        lambdas: EigenvalueSet,
    ) -> Result<Self> {
        noise.validate()?;
        if noise.sigma2.len() != sym.len() || lambdas.k_count() != sym.len() {
            return Err(Error::Dimension("noise/eigenvalues must match the matrix count".into()));
        }
        let sym_scaled = sym.iter().zip(&noise.sigma2).map(|(s, &s2)| s / s2).collect();
        Ok(Self { sym_scaled, lambdas })
    }

    pub fn dim(&self) -> usize {
        self.sym_scaled[0].nrows()
    }

    pub fn k_count(&self) -> usize {
        self.sym_scaled.len()
    }

    pub fn m(&self) -> usize {
        self.lambdas.m()
    }

    pub fn upsilon(&self, k: usize) -> &DMatrix<f64> {
        &self.sym_scaled[k]
    }

    pub fn lambdas(&self) -> &EigenvalueSet {
        &self.lambdas
    }
}

/// `G_m = sum_k lambda_m^k Upsilon_k`, the quadratic field seen by column m.
pub fn column_field(ctx: &LBContext, m: usize) -> DMatrix<f64> {
    let n = ctx.dim();
    let mut g = DMatrix::zeros(n, n);
    for k in 0..ctx.k_count() {
        g += ctx.upsilon(k) * ctx.lambdas.get(k)[m];
    }
    g
}

/// Orthonormal basis of the orthogonal complement of the columns of
/// `b_minus` (an N x C matrix of full column rank), returned as N x (N-C).
/// An empty `b_minus` yields the identity.
pub fn null_space_basis(b_minus: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, c) = (b_minus.nrows(), b_minus.ncols());
    if c == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    if c >= n {
        return Err(Error::Dimension(format!(
            "no orthogonal complement: {c} columns in dimension {n}"
        )));
    }
    let qr = b_minus.clone().qr();
    let r = qr.r();
    for i in 0..c {
        if r[(i, i)].abs() < RANK_TOL {
            return Err(Error::RankDeficient(format!(
                "column block is rank deficient (|r_{i}{i}| = {:.3e})",
                r[(i, i)].abs()
            )));
        }
    }
    // Applying the Householder reflections to the identity yields the full
    // N x N orthogonal factor; its trailing columns span the complement.
    let mut qt = DMatrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let q_full = qt.transpose();
    Ok(q_full.columns(c, n - c).into_owned())
}

/// Redraws column `i` of `b` inside the orthogonal complement of the other
/// columns (requires M < N). The new column is `Q beta*` where `beta*` is a
/// vector Bingham draw with parameter `Q' G_i Q`, advanced by one Gibbs
/// sweep from the current column.
pub fn update_column<R: Rng + ?Sized>(
    b: &StiefelPoint,
    i: usize,
    ctx: &LBContext,
    scheme: ThetaScheme,
    rng: &mut R,
) -> Result<StiefelPoint> {
    let (n, m) = (b.n(), b.m());
    if m >= n {
        return Err(Error::Dimension("single-column updates need M < N".into()));
    }
    if i >= m {
        return Err(Error::InvalidArgument(format!("column index {i} out of range for M={m}")));
    }
    check_ctx(b, ctx)?;

    let b_minus = drop_columns(b.matrix(), &[i]);
    let q = null_space_basis(&b_minus)?;
    let g = column_field(ctx, i);
    let g_tilde = q.transpose() * g * &q;
    let params = BinghamParams::new(g_tilde)?;
    let (u, lambda) = eigendecompose(&params);

    // The current column already lies in the complement, so its coordinates
    // there form a unit vector (up to rounding, hence the renormalization).
    let beta = q.transpose() * b.matrix().column(i);
    let mut y = u.transpose() * beta;
    let norm = y.norm();
    if norm < 0.5 {
        return Err(Error::NotOrthonormal(1.0 - norm));
    }
    y /= norm;
    gibbs_sweep(&mut y, &lambda, scheme, rng)?;

    let new_col = q * (u * y);
    let mut out = b.matrix().clone();
    out.set_column(i, &new_col);
    Ok(StiefelPoint::new_unchecked(out))
}

/// Redraws columns `i` and `j` jointly (requires M = N). In the plane `Q`
/// orthogonal to the remaining columns, the new pair is `Q Z` with
/// `Z = [z, s z_perp]`: `z` follows a circle Bingham law with parameter
/// `A_i - A_j` where `A_c = sum_k lambda_c^k Q' Upsilon_k Q`, and the sign
/// `s` is uniform. The angle draw is exact (rejection on the circle).
pub fn update_column_pair<R: Rng + ?Sized>(
    b: &StiefelPoint,
    i: usize,
    j: usize,
    ctx: &LBContext,
    rng: &mut R,
) -> Result<StiefelPoint> {
    let (n, m) = (b.n(), b.m());
    if m != n {
        return Err(Error::Dimension("pair updates are for the square case M = N".into()));
    }
    if i == j || i >= m || j >= m {
        return Err(Error::InvalidArgument(format!("invalid column pair ({i}, {j}) for M={m}")));
    }
    check_ctx(b, ctx)?;

    let b_minus = drop_columns(b.matrix(), &[i, j]);
    let q = null_space_basis(&b_minus)?;
    debug_assert_eq!(q.ncols(), 2);

    let mut a_i = DMatrix::zeros(2, 2);
    let mut a_j = DMatrix::zeros(2, 2);
    for k in 0..ctx.k_count() {
        let small = q.transpose() * ctx.upsilon(k) * &q;
        a_i += &small * ctx.lambdas.get(k)[i];
        a_j += small * ctx.lambdas.get(k)[j];
    }
    // The second column contributes z_perp' A_j z_perp = tr(A_j) - z' A_j z,
    // so z only feels the difference A_i - A_j.
    let d = a_i - a_j;
    let params = BinghamParams::new(d)?;
    let (u, lambda) = eigendecompose(&params);

    // In the eigenframe the angle density is theta^{-1/2}(1-theta)^{-1/2}
    // exp(c theta) for theta = y_1^2, c = lambda_1 - lambda_2 >= 0, with
    // independent uniform signs: exactly the m = 2 conditional.
    let theta = sample_theta(lambda[0] - lambda[1], 0.0, 2, ThetaScheme::Rejection, rng)?;
    let s1 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let s2 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let y = DVector::from_vec(vec![s1 * theta.sqrt(), s2 * (1.0 - theta).sqrt()]);
    let z = u * y;
    let z_perp = DVector::from_vec(vec![-z[1], z[0]]);
    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };

    let mut out = b.matrix().clone();
    out.set_column(i, &(&q * z));
    out.set_column(j, &(&q * (z_perp * s)));
    Ok(StiefelPoint::new_unchecked(out))
}

/// One full conditional pass over the basis: every column (M < N) or every
/// column pair (M = N) in uniformly random order. Returns the new point and
/// whether a re-orthonormalization was needed (drift above
/// [`REORTHONORMALIZE_TOL`]).
pub fn update_basis<R: Rng + ?Sized>(
    b: &StiefelPoint,
    ctx: &LBContext,
    scheme: ThetaScheme,
    rng: &mut R,
) -> Result<(StiefelPoint, bool)> {
    use rand::seq::SliceRandom;
    let m = b.m();
    if m == 1 && b.n() == 1 {
        // The 1x1 manifold is {+1, -1} and the density is antipodally
        // symmetric, so the exact conditional draw is a uniform sign.
        check_ctx(b, ctx)?;
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return Ok((StiefelPoint::new_unchecked(DMatrix::from_element(1, 1, s)), false));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);

    let mut current = b.clone();
    if b.m() < b.n() {
        for &i in &order {
            current = update_column(&current, i, ctx, scheme, rng)?;
        }
    } else {
        let mut pairs: Vec<(usize, usize)> = order.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        if m % 2 == 1 {
            // The odd column out is paired with a random earlier partner.
            let partner = order[rng.random_range(0..m - 1)];
            pairs.push((order[m - 1], partner));
        }
        for &(i, j) in &pairs {
            current = update_column_pair(&current, i, j, ctx, rng)?;
        }
    }

    let drift = current.ortho_deviation();
    if drift > REORTHONORMALIZE_TOL {
        Ok((reorthonormalize(&current), true))
    } else {
        Ok((current, false))
    }
}

/// Thin-QR re-orthonormalization with column signs aligned to the input.
fn reorthonormalize(b: &StiefelPoint) -> StiefelPoint {
    let qr = b.matrix().clone().qr();
    let mut q = qr.q();
    for c in 0..q.ncols() {
        if q.column(c).dot(&b.matrix().column(c)) < 0.0 {
            let neg = -q.column(c).clone_owned();
            q.set_column(c, &neg);
        }
    }
    StiefelPoint::new_unchecked(q)
}

fn check_ctx(b: &StiefelPoint, ctx: &LBContext) -> Result<()> {
    if ctx.dim() != b.n() || ctx.m() != b.m() {
        return Err(Error::Dimension(format!(
            "context is for {}x{} bases, point is {}x{}",
            ctx.dim(),
            ctx.m(),
            b.n(),
            b.m()
        )));
    }
    Ok(())
}

fn drop_columns(m: &DMatrix<f64>, omit: &[usize]) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..m.ncols()).filter(|c| !omit.contains(c)).collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_stiefel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_context(n: usize, m: usize, k: usize, seed: u64) -> (LBContext, StiefelPoint) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = crate::synth::jd_dataset(n, m, k, 0.1, &mut rng).unwrap();
        let noise = NoiseState { sigma2: vec![0.1; k], v2: vec![1.0; k] };
        let lambdas = inst.eigenvalues.clone();
        let ctx = LBContext::new(&inst.matrices, &noise, lambdas).unwrap();
        let b0 = random_stiefel(n, m, &mut rng).unwrap();
        (ctx, b0)
    }

    #[test]
    fn null_space_basis_spans_the_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = random_stiefel(7, 3, &mut rng).unwrap();
        let block = b.matrix().columns(0, 2).into_owned();
        let q = null_space_basis(&block).unwrap();
        assert_eq!((q.nrows(), q.ncols()), (7, 5));
        assert!((q.transpose() * &q - DMatrix::identity(5, 5)).amax() < 1e-10);
        assert!((block.transpose() * &q).amax() < 1e-10);
    }

    #[test]
    fn null_space_basis_of_empty_block_is_identity() {
        let empty = DMatrix::<f64>::zeros(4, 0);
        assert_eq!(null_space_basis(&empty).unwrap(), DMatrix::identity(4, 4));
    }

    #[test]
    fn null_space_basis_rejects_rank_deficiency_and_full_width() {
        let mut dup = DMatrix::zeros(4, 2);
        dup.set_column(0, &DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        dup.set_column(1, &DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        assert!(matches!(null_space_basis(&dup), Err(Error::RankDeficient(_))));
        assert!(null_space_basis(&DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn column_field_is_the_eigenvalue_weighted_sum() {
        let c = MatrixSet::new(vec![DMatrix::identity(3, 3), DMatrix::identity(3, 3) * 2.0]).unwrap();
        let noise = NoiseState { sigma2: vec![1.0, 2.0], v2: vec![1.0, 1.0] };
        let lambdas = EigenvalueSet::new(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![3.0, -1.0]),
        ])
        .unwrap();
        let ctx = LBContext::new(&c, &noise, lambdas).unwrap();
        // Upsilon_1 = I, Upsilon_2 = I; G_0 = 1*I + 3*I = 4I, G_1 = 0*I - 1*I.
        assert!((column_field(&ctx, 0) - DMatrix::identity(3, 3) * 4.0).amax() < 1e-12);
        assert!((column_field(&ctx, 1) + DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn zero_field_makes_the_column_uniform_on_the_complement() {
        // With all eigenvalues zero the conditional for b_i is uniform, so
        // each complement direction carries 1/(N-M+1) of the squared mass.
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let c = MatrixSet::new(vec![DMatrix::identity(4, 4)]).unwrap();
        let noise = NoiseState { sigma2: vec![1.0], v2: vec![1.0] };
        let lambdas = EigenvalueSet::new(vec![DVector::from_vec(vec![0.0, 0.0])]).unwrap();
        let ctx = LBContext::new(&c, &noise, lambdas).unwrap();
        let mut b = random_stiefel(4, 2, &mut rng).unwrap();
        let fixed_minus = b.matrix().columns(1, 1).into_owned();
        let q = null_space_basis(&fixed_minus).unwrap();

        let n_updates = 50_000;
        let mut acc = DVector::<f64>::zeros(3);
        for _ in 0..n_updates {
            b = update_column(&b, 0, &ctx, ThetaScheme::Rejection, &mut rng).unwrap();
            let beta = q.transpose() * b.matrix().column(0);
            for d in 0..3 {
                acc[d] += beta[d] * beta[d];
            }
        }
        for d in 0..3 {
            let mean = acc[d] / n_updates as f64;
            assert!((mean - 1.0 / 3.0).abs() < 0.01, "direction {d}: {mean}");
        }
    }

    #[test]
    fn column_update_matches_spherical_quadrature() {
        // Fixed 4x2 case: the conditional of beta = Q' b_0 is a 3-dim vector
        // Bingham with parameter Q' G_0 Q; compare second moments against
        // quadrature over the 2-sphere.
        let (ctx, mut b) = toy_context(4, 2, 3, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let fixed_minus = b.matrix().columns(1, 1).into_owned();
        let q = null_space_basis(&fixed_minus).unwrap();
        let g_tilde = q.transpose() * column_field(&ctx, 0) * &q;

        // Midpoint quadrature of E[beta beta'] on the sphere.
        let (n_th, n_ph) = (400, 800);
        let mut z = 0.0;
        let mut moment = DMatrix::zeros(3, 3);
        for a in 0..n_th {
            let th = (a as f64 + 0.5) * std::f64::consts::PI / n_th as f64;
            for p in 0..n_ph {
                let ph = (p as f64 + 0.5) * 2.0 * std::f64::consts::PI / n_ph as f64;
                let beta = DVector::from_vec(vec![
                    th.sin() * ph.cos(),
                    th.sin() * ph.sin(),
                    th.cos(),
                ]);
                let w = ((beta.transpose() * &g_tilde * &beta)[(0, 0)]).exp() * th.sin();
                z += w;
                moment += &beta * beta.transpose() * w;
            }
        }
        moment /= z;

        let n_updates = 50_000;
        let mut emp = DMatrix::zeros(3, 3);
        for _ in 0..n_updates {
            b = update_column(&b, 0, &ctx, ThetaScheme::slice(), &mut rng).unwrap();
            let beta = q.transpose() * b.matrix().column(0);
            emp += &beta * beta.transpose();
        }
        emp /= n_updates as f64;
        let dev = (emp - moment).amax();
        assert!(dev < 0.02, "second-moment deviation {dev}");
    }

    #[test]
    fn pair_update_matches_circle_quadrature_without_burn_in() {
        // M = N = 2: each pair update is an exact draw, so moments computed
        // from independent single updates match quadrature immediately.
        let c = MatrixSet::new(vec![DMatrix::from_row_slice(2, 2, &[1.2, 0.4, 0.4, -0.8])]).unwrap();
        let noise = NoiseState { sigma2: vec![0.5], v2: vec![1.0] };
        let lambdas = EigenvalueSet::new(vec![DVector::from_vec(vec![1.5, -0.5])]).unwrap();
        let ctx = LBContext::new(&c, &noise, lambdas).unwrap();

        // Quadrature for E[z z'] with z on the circle, density exp(z' D z).
        let ups = ctx.upsilon(0).clone();
        let d = &ups * 1.5 - &ups * (-0.5);
        let n_grid = 200_000;
        let mut z_norm = 0.0;
        let mut moment = DMatrix::zeros(2, 2);
        for g in 0..n_grid {
            let ang = (g as f64 + 0.5) * 2.0 * std::f64::consts::PI / n_grid as f64;
            let z = DVector::from_vec(vec![ang.cos(), ang.sin()]);
            let w = ((z.transpose() * &d * &z)[(0, 0)]).exp();
            z_norm += w;
            moment += &z * z.transpose() * w;
        }
        moment /= z_norm;

        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let start = StiefelPoint::new(DMatrix::identity(2, 2)).unwrap();
        let n_draws = 50_000;
        let mut emp = DMatrix::zeros(2, 2);
        for _ in 0..n_draws {
            let fresh = update_column_pair(&start, 0, 1, &ctx, &mut rng).unwrap();
            let z = fresh.matrix().column(0);
            emp += z * z.transpose();
        }
        emp /= n_draws as f64;
        let dev = (emp - moment).amax();
        assert!(dev < 0.01, "pair-update moment deviation {dev}");
    }

    #[test]
    fn basis_passes_preserve_orthonormality() {
        let (ctx, mut b) = toy_context(6, 3, 4, 26);
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..200 {
            let (next, _) = update_basis(&b, &ctx, ThetaScheme::grid(), &mut rng).unwrap();
            b = next;
            assert!(b.ortho_deviation() < 1e-10);
        }
    }

    #[test]
    fn square_case_updates_through_pairs_including_odd_m() {
        for (n, seed) in [(4usize, 28u64), (5, 29)] {
            let (ctx, mut b) = toy_context(n, n, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..100 {
                let (next, _) = update_basis(&b, &ctx, ThetaScheme::Rejection, &mut rng).unwrap();
                b = next;
                assert!(b.ortho_deviation() < 1e-10, "n={n}");
            }
        }
    }

    #[test]
    fn single_column_update_rejects_square_case_and_bad_indices() {
        let (ctx, b) = toy_context(3, 3, 2, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        assert!(update_column(&b, 0, &ctx, ThetaScheme::Rejection, &mut rng).is_err());
        let (ctx2, b2) = toy_context(4, 2, 2, 32);
        assert!(update_column(&b2, 5, &ctx2, ThetaScheme::Rejection, &mut rng).is_err());
        assert!(update_column_pair(&b2, 0, 1, &ctx2, &mut rng).is_err());
        assert!(update_column_pair(&b, 1, 1, &ctx, &mut rng).is_err());
    }
}
