//! The Gibbs sampler over the joint posterior: conjugate conditional draws
//! for eigenvalues and variances, conditional basis passes, multi-chain
//! orchestration, and trace export.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::Serialize;

use crate::bingham::ThetaScheme;
use crate::matrix_lb::{update_basis, LBContext};
use crate::model::{
    design_matrix, flatten_row_major, log_likelihood, vectorize, EigenvalueSet, HyperParams,
    MatrixSet, NoiseState, StiefelPoint,
};
use crate::synth::random_stiefel;
use crate::{Error, Result};

/// Floor applied to the residual-based noise variance at initialization.
pub const INIT_SIGMA2_FLOOR: f64 = 1e-6;

/// One full parameter state of the sampler.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub basis: StiefelPoint,
    pub eigenvalues: EigenvalueSet,
    pub noise: NoiseState,
}

impl ChainState {
    /// Checks mutual consistency of the dimensions and all component
    /// invariants.
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.eigenvalues.m() != self.basis.m() {
            return Err(Error::Dimension("eigenvalue width does not match the basis".into()));
        }
        if self.eigenvalues.k_count() != self.noise.sigma2.len() {
            return Err(Error::Dimension("eigenvalue count does not match the noise state".into()));
        }
        if self.basis.ortho_deviation() > crate::model::ORTHONORMALITY_TOL {
            return Err(Error::NotOrthonormal(self.basis.ortho_deviation()));
        }
        Ok(())
    }
}

/// Run-length, scheme, prior, and seeding choices for one sampler run.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    pub scheme: ThetaScheme,
    pub hyper: HyperParams,
    pub seed: u64,
    pub n_chains: usize,
    /// Start from a uniformly random basis instead of the eigenvector
    /// warm start; useful for honest convergence diagnostics.
    pub random_init: bool,
}

impl SamplerConfig {
    /// Defaults for a `k`-matrix problem: 5000 samples, half burn-in, no
    /// thinning, vague priors, one chain, slice scheme.
    pub fn default_for(k: usize) -> Self {
        Self {
            n_samples: 5000,
            burn_in: 2500,
            thin: 1,
            scheme: ThetaScheme::slice(),
            hyper: HyperParams::vague(k),
            seed: 0,
            n_chains: 1,
            random_init: false,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.n_samples == 0 || self.burn_in >= self.n_samples {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be below the sample count {}",
                self.burn_in, self.n_samples
            )));
        }
        if self.thin < 1 {
            return Err(Error::InvalidArgument("thinning interval must be at least 1".into()));
        }
        if self.n_chains < 1 {
            return Err(Error::InvalidArgument("need at least one chain".into()));
        }
        self.scheme.validate()?;
        self.hyper.validate(k)?;
        Ok(())
    }
}

/// Everything recorded from one chain: thinned post-burn-in states plus
/// full-length scalar series for every iteration.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub states: Vec<ChainState>,
    /// 1-based iteration number of each retained state.
    pub retained_iters: Vec<usize>,
    pub loglik: Vec<f64>,
    pub logpost: Vec<f64>,
    /// Per-iteration noise variances, one row of length K per iteration.
    pub sigma2: Vec<Vec<f64>>,
}

fn state_for_basis(c: &MatrixSet, basis: StiefelPoint) -> ChainState {
    let n2 = (c.dim() * c.dim()) as f64;
    let a = design_matrix(&basis);
    let mut us = Vec::with_capacity(c.k_count());
    let mut sigma2 = Vec::with_capacity(c.k_count());
    for k in 0..c.k_count() {
        let x = vectorize(c.get(k));
        // Least squares through A'A = I: u = A'x.
        let u = a.transpose() * &x;
        let resid = &x - &a * &u;
        sigma2.push((resid.norm_squared() / n2).max(INIT_SIGMA2_FLOOR));
        us.push(u);
    }
    let k = c.k_count();
    ChainState {
        basis,
        eigenvalues: EigenvalueSet::new(us).expect("least-squares eigenvalues are well formed"),
        noise: NoiseState { sigma2, v2: vec![1.0; k] },
    }
}

/// Deterministic warm start: the basis is the top-`m` eigenvectors (by
/// absolute eigenvalue) of the averaged symmetrized matrix, the eigenvalues
/// their least-squares fit, and each noise variance the residual mean square
/// (floored at [`INIT_SIGMA2_FLOOR`]).
pub fn init_state(c: &MatrixSet, m: usize, hyper: &HyperParams) -> Result<ChainState> {
    if m < 1 || m > c.dim() {
        return Err(Error::InvalidArgument(format!(
            "basis width {m} is outside 1..={}",
            c.dim()
        )));
    }
    hyper.validate(c.k_count())?;
    let n = c.dim();
    let mut mean_sym = DMatrix::<f64>::zeros(n, n);
    for ck in c.matrices() {
        mean_sym += (ck + ck.transpose()) * 0.5;
    }
    mean_sym /= c.k_count() as f64;
    let (vecs, vals) = crate::bingham::sorted_symmetric_eigen(&mean_sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| vals[b].abs().partial_cmp(&vals[a].abs()).unwrap());
    let basis = DMatrix::from_fn(n, m, |r, col| vecs[(r, idx[col])]);
    Ok(state_for_basis(c, StiefelPoint::new_unchecked(basis)))
}

/// Cold start from a uniformly random basis, with the same closed-form
/// eigenvalues and variances as [`init_state`].
pub fn init_state_random<R: Rng + ?Sized>(
    c: &MatrixSet,
    m: usize,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<ChainState> {
    if m < 1 || m > c.dim() {
        return Err(Error::InvalidArgument(format!(
            "basis width {m} is outside 1..={}",
            c.dim()
        )));
    }
    hyper.validate(c.k_count())?;
    Ok(state_for_basis(c, random_stiefel(c.dim(), m, rng)?))
}

/// Conditional eigenvalue draw for one matrix:
/// `N(mu, sigma2 Sigma)` with `Sigma = (v^-2 I + A'A)^{-1}` and
/// `mu = Sigma A'x`. The general matrix form is used even though orthonormal
/// bases reduce `Sigma` to a scalar multiple of the identity.
pub fn sample_u_k<R: Rng + ?Sized>(
    x_k: &DVector<f64>,
    a: &DMatrix<f64>,
    sigma2_k: f64,
    v2_k: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(sigma2_k > 0.0 && sigma2_k.is_finite()) || !(v2_k > 0.0 && v2_k.is_finite()) {
        return Err(Error::NonPositive("variances must be positive and finite".into()));
    }
    if x_k.len() != a.nrows() {
        return Err(Error::Dimension("data vector does not match the design matrix".into()));
    }
    let m = a.ncols();
    let mut gram = a.transpose() * a;
    for i in 0..m {
        gram[(i, i)] += 1.0 / v2_k;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("eigenvalue conditional precision".into()))?;
    let mu = chol.solve(&(a.transpose() * x_k));
    let z = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
    // With precision G = L L', the covariance factor is L^{-T}.
    let w = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::RankDeficient("triangular solve in the eigenvalue draw".into()))?;
    Ok(mu + w * sigma2_k.sqrt())
}

/// Conditional noise-variance draw for one matrix: the reciprocal of a
/// `Gamma(a + N^2/2 + M/2, rate b + ||x - Au||^2/2 + u'u/(2 v^2))` precision
/// sample.
pub fn sample_sigma2_k<R: Rng + ?Sized>(
    x_k: &DVector<f64>,
    a: &DMatrix<f64>,
    u_k: &DVector<f64>,
    v2_k: f64,
    a_k: f64,
    b_k: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(v2_k > 0.0) || !(a_k > 0.0) || !(b_k > 0.0) {
        return Err(Error::NonPositive("variance and prior parameters must be positive".into()));
    }
    if x_k.len() != a.nrows() || u_k.len() != a.ncols() {
        return Err(Error::Dimension("conditional inputs disagree in size".into()));
    }
    let resid = x_k - a * u_k;
    let shape = a_k + 0.5 * x_k.len() as f64 + 0.5 * u_k.len() as f64;
    let rate = b_k + 0.5 * resid.norm_squared() + 0.5 * u_k.norm_squared() / v2_k;
    draw_inverse_gamma(shape, rate, rng)
}

/// Conditional eigenvalue-scale draw: the reciprocal of a
/// `Gamma(a + M/2, rate b + u'u/(2 sigma2))` precision sample.
pub fn sample_v2_k<R: Rng + ?Sized>(
    u_k: &DVector<f64>,
    sigma2_k: f64,
    a_k: f64,
    b_k: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(sigma2_k > 0.0) || !(a_k > 0.0) || !(b_k > 0.0) {
        return Err(Error::NonPositive("variance and prior parameters must be positive".into()));
    }
    let shape = a_k + 0.5 * u_k.len() as f64;
    let rate = b_k + 0.5 * u_k.norm_squared() / sigma2_k;
    draw_inverse_gamma(shape, rate, rng)
}

fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::NonPositive(format!("gamma rate must be positive, got {rate}")));
    }
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidArgument(format!("gamma parameters: {e}")))?;
    let precision: f64 = rng.sample(gamma);
    if !(precision > 0.0 && precision.is_finite()) {
        return Err(Error::NonPositive(format!("degenerate precision draw {precision}")));
    }
    Ok(1.0 / precision)
}

/// Log joint posterior density up to an additive constant: the likelihood
/// plus the Gaussian eigenvalue prior and the two inverse-gamma priors per
/// matrix (the basis prior is uniform).
pub fn log_posterior(c: &MatrixSet, state: &ChainState, hyper: &HyperParams) -> Result<f64> {
    let ll = log_likelihood(c, &state.basis, &state.eigenvalues, &state.noise)?;
    hyper.validate(c.k_count())?;
    let m = state.basis.m() as f64;
    let tau = 2.0 * std::f64::consts::PI;
    let mut lp = ll;
    for k in 0..c.k_count() {
        let s2 = state.noise.sigma2[k];
        let v2 = state.noise.v2[k];
        let uu = state.eigenvalues.get(k).norm_squared();
        lp += -0.5 * m * (tau * s2 * v2).ln() - 0.5 * uu / (s2 * v2);
        lp += -(hyper.a[k] + 1.0) * s2.ln() - hyper.b[k] / s2;
        lp += -(hyper.a[k] + 1.0) * v2.ln() - hyper.b[k] / v2;
    }
    Ok(lp)
}

/// Runs a single chain. Every iteration draws, for each matrix in turn, the
/// eigenvalues, then the noise variance, then the eigenvalue scale, and
/// finally takes one conditional pass over the basis. The log likelihood and
/// log posterior are recorded every iteration; states after burn-in are
/// retained at the thinning interval.
pub fn run_chain<R: Rng + ?Sized>(
    c: &MatrixSet,
    m: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<ChainTrace> {
    run_chain_labeled(c, m, config, 0, rng)
}

fn run_chain_labeled<R: Rng + ?Sized>(
    c: &MatrixSet,
    m: usize,
    config: &SamplerConfig,
    chain_idx: usize,
    rng: &mut R,
) -> Result<ChainTrace> {
    config.validate(c.k_count())?;
    let kc = c.k_count();
    let mut state = if config.random_init {
        init_state_random(c, m, &config.hyper, rng)?
    } else {
        init_state(c, m, &config.hyper)?
    };

    let xs: Vec<DVector<f64>> = c.matrices().iter().map(vectorize).collect();
    let syms: Vec<DMatrix<f64>> =
        c.matrices().iter().map(|ck| (ck + ck.transpose()) * 0.5).collect();

    let retained_cap = (config.n_samples - config.burn_in).div_ceil(config.thin);
    let mut trace = ChainTrace {
        states: Vec::with_capacity(retained_cap),
        retained_iters: Vec::with_capacity(retained_cap),
        loglik: Vec::with_capacity(config.n_samples),
        logpost: Vec::with_capacity(config.n_samples),
        sigma2: Vec::with_capacity(config.n_samples),
    };

    for t in 1..=config.n_samples {
        let a = design_matrix(&state.basis);
        let mut us = Vec::with_capacity(kc);
        let mut sigma2 = Vec::with_capacity(kc);
        let mut v2 = Vec::with_capacity(kc);
        for k in 0..kc {
            let u = sample_u_k(&xs[k], &a, state.noise.sigma2[k], state.noise.v2[k], rng)?;
            let s2 = sample_sigma2_k(
                &xs[k],
                &a,
                &u,
                state.noise.v2[k],
                config.hyper.a[k],
                config.hyper.b[k],
                rng,
            )?;
            let vk = sample_v2_k(&u, s2, config.hyper.a[k], config.hyper.b[k], rng)?;
            us.push(u);
            sigma2.push(s2);
            v2.push(vk);
        }
        state.eigenvalues = EigenvalueSet::new(us)?;
        state.noise = NoiseState { sigma2, v2 };

        let ctx = LBContext::from_symmetric_parts(&syms, &state.noise, state.eigenvalues.clone())?;
        let (basis, _reorthonormalized) = update_basis(&state.basis, &ctx, config.scheme, rng)?;
        state.basis = basis;

        let ll = log_likelihood(c, &state.basis, &state.eigenvalues, &state.noise)?;
        if !ll.is_finite() {
            return Err(Error::NonFiniteLogLik {
                chain: chain_idx,
                iter: t,
                state_dump: dump_state(&state),
            });
        }
        trace.loglik.push(ll);
        trace.logpost.push(log_posterior(c, &state, &config.hyper)?);
        trace.sigma2.push(state.noise.sigma2.clone());

        if t > config.burn_in && (t - config.burn_in - 1) % config.thin == 0 {
            trace.states.push(state.clone());
            trace.retained_iters.push(t);
        }
    }
    Ok(trace)
}

/// Runs `config.n_chains` independent chains, chain `i` seeded with
/// `seed + i` through the generator's key-expansion split. Chains execute
/// concurrently; the output order is the chain index order.
pub fn run_chains(c: &MatrixSet, m: usize, config: &SamplerConfig) -> Result<Vec<ChainTrace>> {
    use rayon::prelude::*;
    config.validate(c.k_count())?;
    (0..config.n_chains)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(i as u64));
            run_chain_labeled(c, m, config, i, &mut rng)
        })
        .collect()
}

/// The retained state with the highest recorded log posterior across all
/// chains. Exact ties keep the earlier state (chain index first, then
/// iteration).
pub fn map_estimate(traces: &[ChainTrace]) -> Result<ChainState> {
    let mut best: Option<(f64, &ChainState)> = None;
    for trace in traces {
        for (state, &iter) in trace.states.iter().zip(&trace.retained_iters) {
            let lp = trace.logpost[iter - 1];
            if best.as_ref().is_none_or(|(b, _)| lp > *b) {
                best = Some((lp, state));
            }
        }
    }
    best.map(|(_, s)| s.clone())
        .ok_or_else(|| Error::InvalidArgument("no retained states to choose from".into()))
}

/// Full-length scalar traces as CSV with header
/// `chain,iter,loglik,logpost,sigma2_1..sigma2_K` (chain and iter 1-based).
pub fn trace_csv(traces: &[ChainTrace]) -> String {
    let k = traces
        .first()
        .and_then(|t| t.sigma2.first())
        .map_or(0, |row| row.len());
    let mut out = String::from("chain,iter,loglik,logpost");
    for i in 1..=k {
        out.push_str(&format!(",sigma2_{i}"));
    }
    out.push('\n');
    for (ci, trace) in traces.iter().enumerate() {
        for t in 0..trace.loglik.len() {
            out.push_str(&format!("{},{},{},{}", ci + 1, t + 1, trace.loglik[t], trace.logpost[t]));
            for v in &trace.sigma2[t] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize)]
struct StateLine {
    chain: usize,
    iter: usize,
    b: Vec<f64>,
    u: Vec<Vec<f64>>,
}

/// Retained states as JSON lines, one object per state:
/// `{"chain":c,"iter":t,"b":[N*M row-major],"u":[[M floats] per matrix]}`.
pub fn states_jsonl(traces: &[ChainTrace]) -> String {
    let mut out = String::new();
    for (ci, trace) in traces.iter().enumerate() {
        for (state, &iter) in trace.states.iter().zip(&trace.retained_iters) {
            let line = StateLine {
                chain: ci + 1,
                iter,
                b: flatten_row_major(state.basis.matrix()),
                u: state
                    .eigenvalues
                    .values()
                    .iter()
                    .map(|u| u.iter().copied().collect())
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("state serialization"));
            out.push('\n');
        }
    }
    out
}

fn dump_state(state: &ChainState) -> String {
    format!(
        "b={:?} u={:?} sigma2={:?} v2={:?}",
        flatten_row_major(state.basis.matrix()),
        state
            .eigenvalues
            .values()
            .iter()
            .map(|u| u.iter().copied().collect::<Vec<f64>>())
            .collect::<Vec<_>>(),
        state.noise.sigma2,
        state.noise.v2
    )
}
