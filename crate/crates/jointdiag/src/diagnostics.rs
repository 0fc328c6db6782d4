//! Convergence and recovery metrics: effective sample size, the
//! between/within-chain R statistic, the Amari performance index, and
//! BIC-based selection of the basis width M.

use nalgebra::DMatrix;

use crate::gibbs::{self, ChainState, SamplerConfig};
use crate::model::{log_likelihood, MatrixSet, StiefelPoint};
use crate::{Error, Result};

/// Effective sample size of one scalar chain.
///
/// `n / (1 + 2 sum_t rho_t)` where the autocorrelation sum runs until the
/// first lag `t` with `rho_t + rho_{t+1} <= 0`. The result is clamped to
/// `[1, n]`; an exactly constant series returns `n` by convention.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 100 {
        return Err(Error::InvalidArgument(format!(
            "ess needs at least 100 points, got {n}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("ess input must be finite".into()));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum::<f64>() / nf;
    if c0 == 0.0 {
        return Ok(nf);
    }
    let rho = |t: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - t {
            s += centered[i] * centered[i + t];
        }
        s / (nf * c0)
    };

    let mut sum = 0.0;
    let mut t = 1;
    let mut rho_t = rho(1);
    while t + 1 < n {
        let rho_next = rho(t + 1);
        if rho_t + rho_next <= 0.0 {
            break;
        }
        sum += rho_t;
        rho_t = rho_next;
        t += 1;
    }
    Ok((nf / (1.0 + 2.0 * sum)).clamp(1.0, nf))
}

/// The R convergence statistic over the second halves of the given chains:
/// `sqrt(V / W)` with `W` the mean within-chain variance and
/// `V = ((n-1)/n) W + B/n`, `B` being `n` times the variance of the chain
/// means. Zero within-chain variance returns 1 when all chain means agree
/// and +inf otherwise.
pub fn gelman_rubin<S: AsRef<[f64]>>(chains: &[S]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InvalidArgument("gelman_rubin needs at least 2 chains".into()));
    }
    let full = chains[0].as_ref().len();
    if full < 100 {
        return Err(Error::InvalidArgument(format!(
            "gelman_rubin needs chains of at least 100 points, got {full}"
        )));
    }
    if chains.iter().any(|c| c.as_ref().len() != full) {
        return Err(Error::InvalidArgument("gelman_rubin needs equal-length chains".into()));
    }
    if chains.iter().any(|c| c.as_ref().iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument("gelman_rubin input must be finite".into()));
    }

    // Diagnose the stationary part: each chain contributes its second half.
    let n = full / 2;
    let nf = n as f64;
    let mf = m as f64;
    let mut means = Vec::with_capacity(m);
    let mut vars = Vec::with_capacity(m);
    for c in chains {
        let seg = &c.as_ref()[full - n..];
        let mu = seg.iter().sum::<f64>() / nf;
        let var = seg.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (nf - 1.0);
        means.push(mu);
        vars.push(var);
    }
    let w: f64 = vars.iter().sum::<f64>() / mf;
    if w == 0.0 {
        let all_equal = means.iter().all(|&mu| mu == means[0]);
        return Ok(if all_equal { 1.0 } else { f64::INFINITY });
    }
    let grand = means.iter().sum::<f64>() / mf;
    let b: f64 = nf * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>()
        / (mf - 1.0);
    let vhat = (nf - 1.0) / nf * w + b / nf;
    Ok((vhat / w).sqrt())
}

/// `P = pinv(B_hat) * B_ref`, the mixing of estimated against reference
/// directions that [`amari_index`] scores. For an orthonormal estimate the
/// pseudo-inverse is just the transpose; the general form also accepts
/// non-orthonormal references such as a whitened mixing matrix.
pub fn comparison_matrix(b_hat: &StiefelPoint, b_ref: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b_hat.n() != b_ref.nrows() || b_hat.m() != b_ref.ncols() {
        return Err(Error::Dimension(format!(
            "estimate is {}x{}, reference is {}x{}",
            b_hat.n(),
            b_hat.m(),
            b_ref.nrows(),
            b_ref.ncols()
        )));
    }
    let pinv = b_hat
        .matrix()
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    Ok(pinv * b_ref)
}

/// Amari performance index of a square matrix: for each row the sum of
/// absolute entries over the row maximum minus one, plus the same over
/// columns. Zero exactly when P is a generalized permutation matrix.
pub fn amari_index(p: &DMatrix<f64>) -> Result<f64> {
    let m = p.nrows();
    if m == 0 || p.ncols() != m {
        return Err(Error::Dimension(format!(
            "amari_index needs a nonempty square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let mut total = 0.0;
    for i in 0..m {
        let row_max = p.row(i).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if row_max == 0.0 {
            return Err(Error::InvalidArgument(format!("row {i} of P is all zero")));
        }
        total += p.row(i).iter().map(|v| v.abs()).sum::<f64>() / row_max - 1.0;
    }
    for j in 0..m {
        let col_max = p.column(j).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if col_max == 0.0 {
            return Err(Error::InvalidArgument(format!("column {j} of P is all zero")));
        }
        total += p.column(j).iter().map(|v| v.abs()).sum::<f64>() / col_max - 1.0;
    }
    Ok(total)
}

/// BIC approximation to the log marginal likelihood at a point estimate:
/// `loglik - (d/2) log(n_obs)` with `d = K M + K + (N M - M(M+1)/2)`
/// (eigenvalues, noise variances, and the orthonormal-basis manifold
/// dimension) and `n_obs = K N^2` scalar residuals.
pub fn bic_log_marginal(c: &MatrixSet, theta_map: &ChainState, m: usize) -> Result<f64> {
    if theta_map.basis.m() != m {
        return Err(Error::InvalidArgument(format!(
            "state has basis width {}, expected {m}",
            theta_map.basis.m()
        )));
    }
    let ll = log_likelihood(c, &theta_map.basis, &theta_map.eigenvalues, &theta_map.noise)?;
    let n = c.dim();
    let k = c.k_count();
    let d = (k * m + k + n * m) as f64 - (m * (m + 1)) as f64 / 2.0;
    let n_obs = (k * n * n) as f64;
    Ok(ll - 0.5 * d * n_obs.ln())
}

/// Runs the full sampler for every candidate width in `m_values`, scores each
/// MAP state with [`bic_log_marginal`], and returns the best width together
/// with all scores (in the order requested). Ties go to the earlier entry.
/// The per-width jobs run concurrently.
pub fn model_select(
    c: &MatrixSet,
    m_values: &[usize],
    config: &SamplerConfig,
) -> Result<(usize, Vec<f64>)> {
    use rayon::prelude::*;

    if m_values.is_empty() {
        return Err(Error::InvalidArgument("model_select needs at least one candidate".into()));
    }
    for &m in m_values {
        if m < 1 || m > c.dim() {
            return Err(Error::InvalidArgument(format!(
                "candidate width {m} is outside 1..={}",
                c.dim()
            )));
        }
    }
    let scores = m_values
        .par_iter()
        .map(|&m| {
            let traces = gibbs::run_chains(c, m, config)?;
            let map = gibbs::map_estimate(&traces)?;
            bic_log_marginal(c, &map, m)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((m_values[best], scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EigenvalueSet, NoiseState};
    use crate::synth::{jd_dataset, random_stiefel};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn ess_of_independent_draws_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let series: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let e = ess(&series).unwrap();
        assert!(
            (19_000.0..=20_000.0).contains(&e),
            "independent draws should be nearly fully effective, got {e}"
        );
    }

    #[test]
    fn ess_of_ar1_matches_the_analytic_value() {
        // AR(1) with phi = 0.5 has ESS = n (1 - phi) / (1 + phi) = n / 3.
        let phi = 0.5f64;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut x = 0.0;
        let mut series = Vec::with_capacity(20_000);
        for _ in 0..20_000 {
            let z: f64 = rng.sample(StandardNormal);
            x = phi * x + z;
            series.push(x);
        }
        let e = ess(&series).unwrap();
        let target = 20_000.0 / 3.0;
        assert!(
            (e - target).abs() < 0.15 * target,
            "AR(1) ESS {e} should be within 15% of {target}"
        );
    }

    #[test]
    fn ess_of_constant_series_is_n() {
        let series = vec![2.5; 500];
        assert_eq!(ess(&series).unwrap(), 500.0);
    }

    #[test]
    fn ess_stays_in_bounds_on_arbitrary_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.random_range(100..400);
            let series: Vec<f64> = (0..n)
                .map(|i| {
                    let z: f64 = rng.sample(StandardNormal);
                    if i % 2 == 0 {
                        z + 10.0
                    } else {
                        z - 10.0
                    }
                })
                .collect();
            let e = ess(&series).unwrap();
            assert!(e >= 1.0 && e <= n as f64, "ESS {e} outside [1, {n}]");
        }
    }

    #[test]
    fn ess_rejects_short_and_nonfinite_input() {
        assert!(ess(&vec![1.0; 99]).is_err());
        let mut bad = vec![1.0; 200];
        bad[50] = f64::NAN;
        assert!(ess(&bad).is_err());
    }

    #[test]
    fn gelman_rubin_of_identical_constant_chains_is_one() {
        let chains = vec![vec![3.0; 200]; 4];
        assert_eq!(gelman_rubin(&chains).unwrap(), 1.0);
    }

    #[test]
    fn gelman_rubin_of_identical_chains_hits_the_analytic_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let one: Vec<f64> = (0..2_000).map(|_| rng.sample(StandardNormal)).collect();
        let chains = vec![one.clone(), one.clone(), one];
        let r = gelman_rubin(&chains).unwrap();
        // B = 0 leaves exactly the (n-1)/n floor of the pooled estimate.
        let floor = (999.0f64 / 1000.0).sqrt();
        assert!((r - floor).abs() < 1e-12, "expected the B=0 floor {floor}, got {r}");
        assert!((r - 1.0).abs() < 0.01);
    }

    #[test]
    fn gelman_rubin_of_converged_chains_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let chains: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..2_000).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let r = gelman_rubin(&chains).unwrap();
        assert!(r < 1.05, "independent same-target chains should give R near 1, got {r}");
        // R can dip slightly below 1: the pooled estimate carries a (n-1)/n
        // factor that the between-chain term only makes up on average.
        assert!(r > 0.99, "got {r}");
    }

    #[test]
    fn gelman_rubin_flags_separated_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|c| {
                let shift = if c % 2 == 0 { 0.0 } else { 10.0 };
                (0..400).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect()
            })
            .collect();
        let r = gelman_rubin(&chains).unwrap();
        assert!(r > 1.2, "grossly separated chains must be flagged, got {r}");
    }

    #[test]
    fn gelman_rubin_distinguishes_degenerate_disagreement() {
        let chains = vec![vec![0.0; 200], vec![5.0; 200]];
        assert_eq!(gelman_rubin(&chains).unwrap(), f64::INFINITY);
    }

    #[test]
    fn gelman_rubin_validates_input() {
        assert!(gelman_rubin(&[vec![0.0; 200]]).is_err());
        assert!(gelman_rubin(&[vec![0.0; 200], vec![0.0; 100]]).is_err());
        assert!(gelman_rubin(&[vec![0.0; 50], vec![0.0; 50]]).is_err());
    }

    #[test]
    fn comparison_matrix_recovers_identity_and_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = random_stiefel(6, 3, &mut rng).unwrap();
        let p = comparison_matrix(&b, b.matrix()).unwrap();
        assert!((p - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);

        let mut swapped = b.matrix().clone();
        let c0 = swapped.column(0).clone_owned();
        let c1 = swapped.column(1).clone_owned();
        swapped.set_column(0, &c1);
        swapped.set_column(1, &c0);
        let p = comparison_matrix(&b, &swapped).unwrap();
        let expect =
            DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((p - expect).amax() < 1e-10);
    }

    #[test]
    fn comparison_matrix_matches_a_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let b_hat = random_stiefel(7, 4, &mut rng).unwrap();
        let b_ref = DMatrix::<f64>::from_fn(7, 4, |_, _| rng.sample(StandardNormal));
        let p = comparison_matrix(&b_hat, &b_ref).unwrap();
        // Column-wise normal equations: (B'B) p_j = B' ref_j.
        let gram = b_hat.matrix().transpose() * b_hat.matrix();
        let chol = gram.cholesky().unwrap();
        for j in 0..4 {
            let rhs = b_hat.matrix().transpose() * b_ref.column(j);
            let sol = chol.solve(&rhs);
            assert!(
                (p.column(j) - sol).amax() < 1e-8,
                "column {j} disagrees with the normal-equations solve"
            );
        }
    }

    #[test]
    fn amari_index_is_zero_exactly_on_generalized_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..1_000 {
            let m = rng.random_range(2..8);
            let mut perm: Vec<usize> = (0..m).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let mut p = DMatrix::<f64>::zeros(m, m);
            for (i, &j) in perm.iter().enumerate() {
                let scale: f64 = rng.random_range(0.1..10.0);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                p[(i, j)] = sign * scale;
            }
            assert_eq!(amari_index(&p).unwrap(), 0.0, "generalized permutation must score 0");
        }
        // The converse: any extra nonzero entry moves the index off zero.
        let mut p = DMatrix::<f64>::identity(4, 4);
        p[(0, 1)] = 0.3;
        assert!(amari_index(&p).unwrap() > 0.0);
    }

    #[test]
    fn amari_index_of_the_ones_matrix_is_four() {
        let p = DMatrix::<f64>::from_element(2, 2, 1.0);
        assert_eq!(amari_index(&p).unwrap(), 4.0);
    }

    #[test]
    fn amari_index_matches_a_naive_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..1_000 {
            let p = DMatrix::<f64>::from_fn(10, 10, |_, _| rng.sample(StandardNormal));
            let fast = amari_index(&p).unwrap();
            let mut slow = 0.0;
            for i in 0..10 {
                let mut mx = 0.0f64;
                for l in 0..10 {
                    mx = mx.max(p[(i, l)].abs());
                }
                let mut s = 0.0;
                for j in 0..10 {
                    s += p[(i, j)].abs() / mx;
                }
                slow += s - 1.0;
            }
            for j in 0..10 {
                let mut mx = 0.0f64;
                for l in 0..10 {
                    mx = mx.max(p[(l, j)].abs());
                }
                let mut s = 0.0;
                for i in 0..10 {
                    s += p[(i, j)].abs() / mx;
                }
                slow += s - 1.0;
            }
            assert!((fast - slow).abs() <= 1e-12, "naive oracle disagrees: {fast} vs {slow}");
        }
    }

    #[test]
    fn amari_index_ignores_signs_and_keeps_scaled_permutations_at_zero() {
        // Sign flips of whole rows or columns never move the index (it only
        // sees magnitudes). Magnitude rescaling is a different story: a row
        // scale changes every column's ratio family, so the index is only
        // scale-free on its zero set, where each family has a single nonzero.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = DMatrix::<f64>::from_fn(5, 5, |_, _| rng.sample(StandardNormal));
        let base = amari_index(&p).unwrap();
        let mut flipped = p.clone();
        for i in 0..5 {
            if rng.random::<bool>() {
                for j in 0..5 {
                    flipped[(i, j)] = -flipped[(i, j)];
                }
            }
        }
        for j in 0..5 {
            if rng.random::<bool>() {
                for i in 0..5 {
                    flipped[(i, j)] = -flipped[(i, j)];
                }
            }
        }
        assert_eq!(amari_index(&flipped).unwrap(), base);

        use rand::seq::SliceRandom;
        for _ in 0..100 {
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let mut gp = DMatrix::<f64>::zeros(5, 5);
            for (i, &j) in perm.iter().enumerate() {
                gp[(i, j)] = 1.0;
            }
            for i in 0..5 {
                let s: f64 =
                    rng.random_range(0.2..5.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                for j in 0..5 {
                    gp[(i, j)] *= s;
                }
            }
            for j in 0..5 {
                let s: f64 =
                    rng.random_range(0.2..5.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                for i in 0..5 {
                    gp[(i, j)] *= s;
                }
            }
            assert_eq!(amari_index(&gp).unwrap(), 0.0);
        }
    }

    #[test]
    fn amari_index_rejects_zero_rows_and_columns() {
        let mut p = DMatrix::<f64>::identity(3, 3);
        p[(1, 1)] = 0.0;
        assert!(amari_index(&p).is_err());
        assert!(amari_index(&DMatrix::<f64>::zeros(0, 0)).is_err());
    }

    #[test]
    fn bic_applies_the_documented_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let inst = jd_dataset(10, 5, 100, 0.01, &mut rng).unwrap();
        let state = ChainState {
            basis: inst.basis.clone(),
            eigenvalues: inst.eigenvalues.clone(),
            noise: NoiseState { sigma2: vec![0.01; 100], v2: vec![1.0; 100] },
        };
        let ll = log_likelihood(&inst.matrices, &state.basis, &state.eigenvalues, &state.noise)
            .unwrap();
        let bic = bic_log_marginal(&inst.matrices, &state, 5).unwrap();
        // d = 100*5 + 100 + (50 - 15) = 635 free parameters, n_obs = 10_000.
        let expect = ll - 0.5 * 635.0 * 10_000.0f64.ln();
        assert!((bic - expect).abs() < 1e-9);
    }

    #[test]
    fn bic_prefers_the_smaller_width_on_identical_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let inst = jd_dataset(6, 2, 3, 0.05, &mut rng).unwrap();
        let slim = ChainState {
            basis: inst.basis.clone(),
            eigenvalues: inst.eigenvalues.clone(),
            noise: NoiseState { sigma2: vec![0.05; 3], v2: vec![1.0; 3] },
        };
        // Pad one orthonormal column with a zero eigenvalue: same fit, more
        // parameters.
        let wide_basis = random_stiefel(6, 3, &mut rng).unwrap();
        let mut padded = wide_basis.matrix().clone();
        padded.set_column(0, &inst.basis.matrix().column(0));
        padded.set_column(1, &inst.basis.matrix().column(1));
        // Re-orthonormalize the third column against the first two.
        let mut c2 = padded.column(2).clone_owned();
        for j in 0..2 {
            let proj = padded.column(j).dot(&c2);
            c2 -= padded.column(j) * proj;
        }
        c2 /= c2.norm();
        padded.set_column(2, &c2);
        let wide = ChainState {
            basis: StiefelPoint::new(padded).unwrap(),
            eigenvalues: EigenvalueSet::new(
                inst.eigenvalues
                    .values()
                    .iter()
                    .map(|u| DVector::from_vec(vec![u[0], u[1], 0.0]))
                    .collect(),
            )
            .unwrap(),
            noise: NoiseState { sigma2: vec![0.05; 3], v2: vec![1.0; 3] },
        };
        let slim_score = bic_log_marginal(&inst.matrices, &slim, 2).unwrap();
        let wide_score = bic_log_marginal(&inst.matrices, &wide, 3).unwrap();
        assert!(
            slim_score > wide_score,
            "equal fit must favor fewer parameters: {slim_score} vs {wide_score}"
        );
    }

    #[test]
    fn model_select_identifies_a_rank_one_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let inst = jd_dataset(8, 1, 1, 1e-4, &mut rng).unwrap();
        let mut config = SamplerConfig::default_for(1);
        config.n_samples = 600;
        config.burn_in = 300;
        config.seed = 7;
        let (best, scores) = model_select(&inst.matrices, &[1, 2, 3], &config).unwrap();
        assert_eq!(scores.len(), 3);
        assert!(scores.iter().all(|s| s.is_finite()));
        assert_eq!(best, 1, "a rank-1 family should select width 1, scores {scores:?}");
        assert!(scores[0] > scores[1] && scores[1] > scores[2]);
    }

    #[test]
    fn model_select_validates_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let inst = jd_dataset(4, 2, 2, 0.1, &mut rng).unwrap();
        let config = SamplerConfig::default_for(2);
        assert!(model_select(&inst.matrices, &[], &config).is_err());
        assert!(model_select(&inst.matrices, &[0], &config).is_err());
        assert!(model_select(&inst.matrices, &[5], &config).is_err());
    }
}
