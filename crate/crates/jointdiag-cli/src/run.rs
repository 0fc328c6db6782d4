//! Subcommand bodies. Every function here is deterministic given its
//! arguments; wall-clock timings go to stderr so stdout and all written
//! files stay byte-stable run to run.

use crate::truth::TruthSidecar;
use jointdiag::baseline::{jacobi_jd, JACOBI_MAX_SWEEPS, JACOBI_TOL};
use jointdiag::bingham::{sample_vector_bingham, BinghamParams, ThetaScheme};
use jointdiag::diagnostics::{amari_index, comparison_matrix, ess, gelman_rubin, model_select};
use jointdiag::gibbs::{map_estimate, run_chains, states_jsonl, trace_csv, SamplerConfig};
use jointdiag::model::{from_row_major, MatrixSet, StiefelPoint};
use jointdiag::synth::{
    cspa_dataset, csp_filter, jd_dataset, lagged_covariances, mix_sources, sine_sources, whiten,
    Whitening,
};
use jointdiag::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Offset separating the data-generation stream from the sampler stream in
/// pipelines that need both from one user-supplied seed.
const SAMPLER_SEED_OFFSET: u64 = 1 << 32;

pub fn generate(
    kind: &str,
    n: usize,
    m: usize,
    k: usize,
    sigma2: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        "jd" => {
            let inst = jd_dataset(n, m, k, sigma2, &mut rng)?;
            inst.matrices.write_json(&out.join("matrices.json"))?;
            let truth = TruthSidecar {
                b_true: jointdiag::model::flatten_row_major(inst.basis.matrix()),
                u_true: (0..k).map(|i| inst.eigenvalues.get(i).iter().copied().collect()).collect(),
                sigma2,
                seed,
                samples_per_class: None,
            };
            truth.write(&out.join("truth.json"))?;
            println!(
                "jd instance: n={n} m={m} k={k} sigma2={sigma2} seed={seed} -> {}",
                out.display()
            );
        }
        "bss" => {
            let (_, _, wh, a, covs) = bss_pipeline(n, k, sigma2, seed)?;
            covs.write_json(&out.join("matrices.json"))?;
            let truth = TruthSidecar {
                b_true: jointdiag::model::flatten_row_major(&(&wh.matrix * &a)),
                u_true: Vec::new(),
                sigma2,
                seed,
                samples_per_class: None,
            };
            truth.write(&out.join("truth.json"))?;
            println!(
                "bss instance: {n} sources, {k} lagged covariances, sigma2={sigma2} seed={seed} \
                 -> {}",
                out.display()
            );
        }
        "cspa" => {
            let (_, wh, mixing, covs) = cspa_pipeline(CSPA_SAMPLES_PER_CLASS, seed)?;
            covs.write_json(&out.join("matrices.json"))?;
            let truth = TruthSidecar {
                b_true: jointdiag::model::flatten_row_major(&(&wh.matrix * &mixing)),
                u_true: Vec::new(),
                sigma2: 0.0,
                seed,
                samples_per_class: Some(CSPA_SAMPLES_PER_CLASS),
            };
            truth.write(&out.join("truth.json"))?;
            println!(
                "cspa instance: 2 classes x {CSPA_SAMPLES_PER_CLASS} samples, seed={seed} -> {}",
                out.display()
            );
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown dataset kind '{other}' (expected jd, bss or cspa)"
            )))
        }
    }
    Ok(())
}

/// Sources, mixtures, whitening, mixing matrix and lagged covariances of the
/// synthetic blind-source-separation pipeline.
#[allow(clippy::type_complexity)]
fn bss_pipeline(
    n: usize,
    max_lag: usize,
    sigma2: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Whitening, DMatrix<f64>, MatrixSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = sine_sources(n, 1000)?;
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = mix_sources(&s, &a, sigma2.sqrt(), &mut rng)?;
    let wh = whiten(&x)?;
    let covs = lagged_covariances(&wh.whitened, max_lag)?;
    Ok((s, x, wh, a, covs))
}

const CSPA_SAMPLES_PER_CLASS: usize = 200;

/// Two-class pipeline: generated classes, pooled whitening, mixing matrix
/// and the two whitened per-class covariance matrices.
fn cspa_pipeline(
    n_per_class: usize,
    seed: u64,
) -> Result<(jointdiag::synth::CspaInstance, Whitening, DMatrix<f64>, MatrixSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = cspa_dataset(n_per_class, &mut rng)?;
    let channels = inst.class1.nrows();
    let total = inst.class1.ncols() + inst.class2.ncols();
    let mut pooled = DMatrix::zeros(channels, total);
    pooled.view_mut((0, 0), (channels, inst.class1.ncols())).copy_from(&inst.class1);
    pooled
        .view_mut((0, inst.class1.ncols()), (channels, inst.class2.ncols()))
        .copy_from(&inst.class2);
    let wh = whiten(&pooled)?;
    let c1 = class_covariance(&inst.class1, &wh);
    let c2 = class_covariance(&inst.class2, &wh);
    let mixing = inst.mixing.clone();
    Ok((inst, wh, mixing, MatrixSet::new(vec![c1, c2])?))
}

/// Sample covariance of one class after the pooled whitening transform.
fn class_covariance(class: &DMatrix<f64>, wh: &Whitening) -> DMatrix<f64> {
    let mut centered = class.clone();
    for mut col in centered.column_iter_mut() {
        col -= &wh.mean;
    }
    let z = &wh.matrix * centered;
    let t = z.ncols() as f64;
    (&z * z.transpose()) / (t - 1.0)
}

pub struct SampleArgs {
    pub data: PathBuf,
    pub m: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub scheme: ThetaScheme,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SampleSummary {
    /// Null when fewer than two chains ran or the chains are too short.
    r_hat: Option<f64>,
    /// Per chain; null entries mark chains too short for the estimator.
    ess_loglik: Vec<Option<f64>>,
    n_chains: usize,
    n_samples: usize,
    burn_in: usize,
    thin: usize,
    retained_per_chain: usize,
}

pub fn sample(args: &SampleArgs) -> Result<()> {
    let c = MatrixSet::read_json(&args.data)?;
    std::fs::create_dir_all(&args.out)?;
    let mut config = SamplerConfig::default_for(c.k_count());
    config.n_samples = args.n_samples;
    config.burn_in = args.burn_in;
    config.thin = args.thin;
    config.n_chains = args.chains;
    config.scheme = args.scheme;
    config.seed = args.seed;

    let started = Instant::now();
    let traces = match run_chains(&c, args.m, &config) {
        Ok(traces) => traces,
        Err(err) => {
            if let Error::NonFiniteLogLik { ref state_dump, .. } = err {
                let dump = args.out.join("abort_state.json");
                std::fs::write(&dump, state_dump)?;
                eprintln!("diagnostic state dumped to {}", dump.display());
            }
            return Err(err);
        }
    };
    let elapsed = started.elapsed();

    std::fs::write(args.out.join("trace.csv"), trace_csv(&traces))?;
    std::fs::write(args.out.join("states.jsonl"), states_jsonl(&traces))?;

    let post: Vec<&[f64]> = traces.iter().map(|t| &t.loglik[args.burn_in..]).collect();
    // The estimators refuse series that are too short to be meaningful;
    // tiny smoke runs still succeed, they just report nulls.
    let summary = SampleSummary {
        r_hat: if post.len() >= 2 { gelman_rubin(&post).ok() } else { None },
        ess_loglik: post.iter().map(|s| ess(s).ok()).collect(),
        n_chains: args.chains,
        n_samples: args.n_samples,
        burn_in: args.burn_in,
        thin: args.thin,
        retained_per_chain: traces[0].states.len(),
    };
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_string(&summary).expect("summary serialization"),
    )?;
    println!(
        "sampled {} chain(s) x {} iterations, retained {} each -> {}",
        args.chains,
        args.n_samples,
        summary.retained_per_chain,
        args.out.display()
    );
    eprintln!("sampling took {elapsed:?}");
    Ok(())
}

/// One retained state parsed back from the states file.
#[derive(serde::Deserialize)]
struct StateRow {
    chain: usize,
    iter: usize,
    b: Vec<f64>,
    u: Vec<Vec<f64>>,
}

struct ParsedTrace {
    /// Per chain, loglik at every iteration (1-based iterations).
    loglik: Vec<Vec<f64>>,
    /// Per chain, logpost at every iteration.
    logpost: Vec<Vec<f64>>,
    states: Vec<StateRow>,
}

fn parse_trace_dir(dir: &Path) -> Result<ParsedTrace> {
    let csv = std::fs::read_to_string(dir.join("trace.csv"))?;
    let mut loglik: Vec<Vec<f64>> = Vec::new();
    let mut logpost: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in csv.lines().enumerate() {
        if lineno == 0 {
            if !line.starts_with("chain,iter,loglik,logpost") {
                return Err(Error::Parse(format!("unexpected trace header: {line}")));
            }
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| Error::Parse(format!("trace line {lineno} missing {name}")))
        };
        let chain: usize = next("chain")?
            .parse()
            .map_err(|e| Error::Parse(format!("trace line {lineno} chain: {e}")))?;
        let iter: usize = next("iter")?
            .parse()
            .map_err(|e| Error::Parse(format!("trace line {lineno} iter: {e}")))?;
        let ll: f64 = next("loglik")?
            .parse()
            .map_err(|e| Error::Parse(format!("trace line {lineno} loglik: {e}")))?;
        let lp: f64 = next("logpost")?
            .parse()
            .map_err(|e| Error::Parse(format!("trace line {lineno} logpost: {e}")))?;
        if chain == 0 || chain > loglik.len() + 1 {
            return Err(Error::Parse(format!("trace line {lineno}: chain {chain} out of order")));
        }
        if chain == loglik.len() + 1 {
            loglik.push(Vec::new());
            logpost.push(Vec::new());
        }
        if iter != loglik[chain - 1].len() + 1 {
            return Err(Error::Parse(format!("trace line {lineno}: iteration {iter} out of order")));
        }
        loglik[chain - 1].push(ll);
        logpost[chain - 1].push(lp);
    }
    if loglik.is_empty() {
        return Err(Error::Parse("trace.csv holds no samples".into()));
    }

    let jsonl = std::fs::read_to_string(dir.join("states.jsonl"))?;
    let mut states = Vec::new();
    for (lineno, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: StateRow = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("states line {}: {e}", lineno + 1)))?;
        states.push(row);
    }
    if states.is_empty() {
        return Err(Error::Parse("states.jsonl holds no retained states".into()));
    }
    Ok(ParsedTrace { loglik, logpost, states })
}

#[derive(Serialize)]
struct ApiStats {
    min: f64,
    mean: f64,
    std: f64,
    max: f64,
    map: f64,
}

#[derive(Serialize)]
struct DiagnoseReport {
    ess: EssReport,
    r_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    api: Option<ApiStats>,
}

#[derive(Serialize)]
struct EssReport {
    loglik: Vec<Option<f64>>,
}

pub fn diagnose(trace_dir: &Path, truth_path: Option<&Path>) -> Result<()> {
    let parsed = parse_trace_dir(trace_dir)?;
    // Retention starts right after burn-in whatever the thinning, so the
    // earliest retained iteration recovers the burn-in length.
    let burn = parsed.states.iter().map(|s| s.iter).min().expect("nonempty") - 1;
    let post: Vec<&[f64]> = parsed.loglik.iter().map(|c| &c[burn.min(c.len() - 1)..]).collect();
    let report = DiagnoseReport {
        ess: EssReport { loglik: post.iter().map(|s| ess(s).ok()).collect() },
        r_hat: if post.len() >= 2 { gelman_rubin(&post).ok() } else { None },
        api: truth_path.map(|p| api_stats(&parsed, p)).transpose()?,
    };
    println!("{}", serde_json::to_string(&report).expect("report serialization"));
    Ok(())
}

fn api_stats(parsed: &ParsedTrace, truth_path: &Path) -> Result<ApiStats> {
    let truth = TruthSidecar::read(truth_path)?;
    let m = parsed.states[0].u.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(Error::Parse("retained states carry no eigenvalue rows".into()));
    }
    let b_ref = truth.basis(m)?;
    let mut apis = Vec::with_capacity(parsed.states.len());
    let mut map_api = f64::NAN;
    let mut best_lp = f64::NEG_INFINITY;
    for row in &parsed.states {
        if row.b.len() % m != 0 || row.b.len() / m != b_ref.nrows() {
            return Err(Error::Dimension(format!(
                "state basis has {} entries, truth is {}x{}",
                row.b.len(),
                b_ref.nrows(),
                b_ref.ncols()
            )));
        }
        let b = StiefelPoint::new(from_row_major(b_ref.nrows(), m, &row.b)?)?;
        let api = amari_index(&comparison_matrix(&b, &b_ref)?)?;
        let lp = parsed.logpost[row.chain - 1][row.iter - 1];
        if lp > best_lp {
            best_lp = lp;
            map_api = api;
        }
        apis.push(api);
    }
    let n = apis.len() as f64;
    let mean = apis.iter().sum::<f64>() / n;
    let std = if apis.len() > 1 {
        (apis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ApiStats {
        min: apis.iter().copied().fold(f64::INFINITY, f64::min),
        mean,
        std,
        max: apis.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        map: map_api,
    })
}

pub struct ModelSelectArgs {
    pub data: PathBuf,
    pub m_range: Option<(usize, usize)>,
    pub n_samples: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub scheme: ThetaScheme,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn run_model_select(args: &ModelSelectArgs) -> Result<()> {
    let c = MatrixSet::read_json(&args.data)?;
    let (lo, hi) = args.m_range.unwrap_or((1, c.dim()));
    if lo == 0 || hi < lo {
        return Err(Error::InvalidArgument(format!("bad column range {lo}..{hi}")));
    }
    let m_values: Vec<usize> = (lo..=hi).collect();
    let mut config = SamplerConfig::default_for(c.k_count());
    config.n_samples = args.n_samples;
    config.burn_in = args.burn_in;
    config.n_chains = args.chains;
    config.scheme = args.scheme;
    config.seed = args.seed;
    let started = Instant::now();
    let (best, scores) = model_select(&c, &m_values, &config)?;
    let mut csv = String::from("m,bic_log_marginal\n");
    for (m, score) in m_values.iter().zip(&scores) {
        writeln!(csv, "{m},{score}").expect("string write");
    }
    match &args.out {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("chosen m = {best} ({:?})", started.elapsed());
    Ok(())
}

pub struct CompareArgs {
    pub data: PathBuf,
    pub truth: PathBuf,
    pub m: Option<usize>,
    pub n_samples: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub scheme: ThetaScheme,
    pub seed: u64,
}

#[derive(Serialize)]
struct GibbsApiStats {
    min: f64,
    mean: f64,
    std: f64,
    max: f64,
}

#[derive(Serialize)]
struct CompareReport {
    jacobi_api: f64,
    gibbs_map_api: f64,
    gibbs_api_stats: GibbsApiStats,
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let c = MatrixSet::read_json(&args.data)?;
    let truth = TruthSidecar::read(&args.truth)?;
    let m = match args.m {
        Some(m) => m,
        None => truth.column_count()?,
    };
    let b_ref = truth.basis(m)?;
    if b_ref.nrows() != c.dim() {
        return Err(Error::Dimension(format!(
            "truth basis is {}x{}, data matrices are {}x{}",
            b_ref.nrows(),
            b_ref.ncols(),
            c.dim(),
            c.dim()
        )));
    }
    // The Jacobi baseline always returns a full orthogonal basis, so a
    // side-by-side accuracy comparison needs a full-rank truth.
    if b_ref.nrows() != b_ref.ncols() {
        return Err(Error::InvalidArgument(format!(
            "compare needs a square truth basis, got {}x{}; use diagnose for truncated bases",
            b_ref.nrows(),
            b_ref.ncols()
        )));
    }

    let jac = jacobi_jd(&c, JACOBI_TOL, JACOBI_MAX_SWEEPS)?;
    let jacobi_api = amari_index(&comparison_matrix(&jac.basis, &b_ref)?)?;

    let mut config = SamplerConfig::default_for(c.k_count());
    config.n_samples = args.n_samples;
    config.burn_in = args.burn_in;
    config.n_chains = args.chains;
    config.scheme = args.scheme;
    config.seed = args.seed;
    let started = Instant::now();
    let traces = run_chains(&c, m, &config)?;
    let map = map_estimate(&traces)?;
    let gibbs_map_api = amari_index(&comparison_matrix(&map.basis, &b_ref)?)?;
    let mut apis = Vec::new();
    for trace in &traces {
        for state in &trace.states {
            apis.push(amari_index(&comparison_matrix(&state.basis, &b_ref)?)?);
        }
    }
    let n = apis.len() as f64;
    let mean = apis.iter().sum::<f64>() / n;
    let report = CompareReport {
        jacobi_api,
        gibbs_map_api,
        gibbs_api_stats: GibbsApiStats {
            min: apis.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            std: if apis.len() > 1 {
                (apis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            },
            max: apis.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        },
    };
    println!("{}", serde_json::to_string(&report).expect("report serialization"));
    eprintln!("comparison took {:?}", started.elapsed());
    Ok(())
}

pub struct BinghamBenchArgs {
    pub m: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    pub schemes: Vec<ThetaScheme>,
    pub seed: u64,
}

pub fn bingham_bench(args: &BinghamBenchArgs) -> Result<()> {
    let mut data_rng = ChaCha8Rng::seed_from_u64(args.seed);
    let g = DMatrix::from_fn(args.m, args.m, |_, _| data_rng.sample::<f64, _>(StandardNormal));
    let sigma = (&g + g.transpose()) * 0.5;
    let params = BinghamParams::new(sigma.clone())?;
    let (_, lambda) = jointdiag::bingham::eigendecompose(&params);
    let (l_max, l_min) = (lambda[0], lambda[args.m - 1]);

    let mut csv = String::from("scheme,min,median,mean,max\n");
    for (i, scheme) in args.schemes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1 + i as u64));
        let started = Instant::now();
        let samples = sample_vector_bingham(&params, args.n_samples, args.burn_in, *scheme, &mut rng)?;
        for x in &samples {
            let q = (x.transpose() * &sigma * x)[(0, 0)];
            if q < l_min || q > l_max {
                return Err(Error::InvalidArgument(format!(
                    "sample has quadratic form {q} outside the spectral bounds [{l_min}, {l_max}]"
                )));
            }
        }
        let mut per_coord = Vec::with_capacity(args.m);
        for coord in 0..args.m {
            let series: Vec<f64> = samples.iter().map(|x| x[coord]).collect();
            per_coord.push(ess(&series)?);
        }
        per_coord.sort_by(|a, b| a.partial_cmp(b).expect("finite ess"));
        let median = if args.m % 2 == 0 {
            0.5 * (per_coord[args.m / 2 - 1] + per_coord[args.m / 2])
        } else {
            per_coord[args.m / 2]
        };
        let mean = per_coord.iter().sum::<f64>() / args.m as f64;
        writeln!(
            csv,
            "{},{},{median},{mean},{}",
            scheme.tag(),
            per_coord[0],
            per_coord[args.m - 1]
        )
        .expect("string write");
        eprintln!("{} took {:?}", scheme.tag(), started.elapsed());
    }
    print!("{csv}");
    Ok(())
}

const BSS_SOURCES: usize = 10;
const BSS_LAGS: usize = 100;
const BSS_NOISE_SD: f64 = 0.1;
const DEMO_SAMPLES: usize = 3000;
const DEMO_BURN_IN: usize = 1500;

pub fn bss_demo(seed: u64) -> Result<()> {
    let (_, _, wh, a, covs) =
        bss_pipeline(BSS_SOURCES, BSS_LAGS, BSS_NOISE_SD * BSS_NOISE_SD, seed)?;
    let b_ref = &wh.matrix * &a;

    let jac = jacobi_jd(&covs, JACOBI_TOL, JACOBI_MAX_SWEEPS)?;
    let jacobi_api = amari_index(&comparison_matrix(&jac.basis, &b_ref)?)?;

    let mut config = SamplerConfig::default_for(covs.k_count());
    config.n_samples = DEMO_SAMPLES;
    config.burn_in = DEMO_BURN_IN;
    config.seed = seed.wrapping_add(SAMPLER_SEED_OFFSET);
    let started = Instant::now();
    let traces = run_chains(&covs, BSS_SOURCES, &config)?;
    let map = map_estimate(&traces)?;
    let gibbs_map_api = amari_index(&comparison_matrix(&map.basis, &b_ref)?)?;
    let mut apis = Vec::new();
    for trace in &traces {
        for state in &trace.states {
            apis.push(amari_index(&comparison_matrix(&state.basis, &b_ref)?)?);
        }
    }
    let n = apis.len() as f64;
    let mean = apis.iter().sum::<f64>() / n;
    let report = CompareReport {
        jacobi_api,
        gibbs_map_api,
        gibbs_api_stats: GibbsApiStats {
            min: apis.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            std: (apis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
            max: apis.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        },
    };
    println!("{}", serde_json::to_string(&report).expect("report serialization"));
    eprintln!("demo took {:?}", started.elapsed());
    Ok(())
}

#[derive(Serialize)]
struct CspaReport {
    /// Per class, the variances of the two filtered coordinates.
    variances: [[f64; 2]; 2],
    /// Largest off-diagonal covariance magnitude of the pooled filtered data.
    pooled_offdiag: f64,
}

pub fn cspa_demo(seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let (inst, wh, _, covs) = cspa_pipeline(CSPA_SAMPLES_PER_CLASS, seed)?;

    let mut config = SamplerConfig::default_for(covs.k_count());
    config.n_samples = 2000;
    config.burn_in = 1000;
    config.seed = seed.wrapping_add(SAMPLER_SEED_OFFSET);
    let traces = run_chains(&covs, 2, &config)?;
    let map = map_estimate(&traces)?;

    let f1 = csp_filter(&map.basis, &wh, &inst.class1)?;
    let f2 = csp_filter(&map.basis, &wh, &inst.class2)?;
    write_signal_csv(&out.join("filtered_class1.csv"), &f1)?;
    write_signal_csv(&out.join("filtered_class2.csv"), &f2)?;

    let v = |f: &DMatrix<f64>, coord: usize| {
        let row = f.row(coord);
        let mean = row.sum() / row.len() as f64;
        row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (row.len() as f64 - 1.0)
    };
    let variances = [[v(&f1, 0), v(&f1, 1)], [v(&f2, 0), v(&f2, 1)]];
    let mut table = String::from("class,coordinate,variance\n");
    for (class, pair) in variances.iter().enumerate() {
        for (coord, value) in pair.iter().enumerate() {
            writeln!(table, "{},{},{value}", class + 1, coord + 1).expect("string write");
        }
    }
    std::fs::write(out.join("variances.csv"), table)?;

    let total = f1.ncols() + f2.ncols();
    let mut pooled = DMatrix::zeros(2, total);
    pooled.view_mut((0, 0), (2, f1.ncols())).copy_from(&f1);
    pooled.view_mut((0, f1.ncols()), (2, f2.ncols())).copy_from(&f2);
    let mut centered = pooled.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.sum() / total as f64;
        row.add_scalar_mut(-mean);
    }
    let cov = (&centered * centered.transpose()) / (total as f64 - 1.0);
    let report = CspaReport { variances, pooled_offdiag: cov[(0, 1)].abs() };
    println!("{}", serde_json::to_string(&report).expect("report serialization"));
    Ok(())
}

fn write_signal_csv(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for row in x.row_iter() {
        let fields: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", fields.join(",")).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}
