//! Command-line driver for the jointdiag library.
//!
//! Randomness discipline: every subcommand takes one 64-bit `--seed`.
//! Dataset generators consume the seed directly; pipelines that generate
//! data and then sample hand the sampler `seed + 2^32` so the two streams
//! never overlap; the sampler itself derives chain `i` from `seed + i`.
//! Repeating an invocation with equal flags therefore reproduces every
//! output file byte for byte (timings go to stderr, never into files).
//!
//! Exit codes: 0 success, 2 argument or format error, 3 I/O error,
//! 4 numerical abort (rejection overflow or a non-finite likelihood).

mod run;
mod truth;

use clap::{Args, Parser, Subcommand};
use jointdiag::bingham::ThetaScheme;
use jointdiag::{Error, Result};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "jointdiag", version, about = "Bayesian joint diagonalization of matrix families")]
struct Cli {
    /// JSON file supplying defaults for any tunable flag; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (matrices plus a truth sidecar) to a directory.
    Generate {
        /// Dataset family: jd (planted joint diagonalization), bss (lagged
        /// covariances of mixed sines) or cspa (two-class covariance pair).
        #[arg(long)]
        kind: String,
        #[command(flatten)]
        tune: Tunables,
    },
    /// Run the Gibbs sampler on a matrix set and write trace, states and summary.
    Sample {
        /// Matrix-set JSON produced by generate (or compatible).
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        tune: Tunables,
    },
    /// Summarize a finished run: ESS and shrink factor, plus accuracy against a truth sidecar.
    Diagnose {
        /// Directory holding trace.csv and states.jsonl from sample.
        #[arg(long)]
        trace: PathBuf,
        /// Truth sidecar; enables the accuracy block of the report.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Score a range of basis sizes by BIC log marginal likelihood.
    ModelSelect {
        #[arg(long)]
        data: PathBuf,
        /// Inclusive range of column counts to score, e.g. 1..10.
        #[arg(long, value_name = "LO..HI")]
        m_range: Option<String>,
        #[command(flatten)]
        tune: Tunables,
    },
    /// Run the Jacobi baseline and the sampler on the same data and report both accuracies.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[command(flatten)]
        tune: Tunables,
    },
    /// Effective-sample-size benchmark of the axis-weight update schemes.
    BinghamBench {
        /// Comma-separated scheme list.
        #[arg(long, default_value = "rejection,slice,grid")]
        schemes: String,
        #[command(flatten)]
        tune: Tunables,
    },
    /// End-to-end blind source separation demo (fixed sine sources, random mixing).
    BssDemo {
        #[command(flatten)]
        tune: Tunables,
    },
    /// End-to-end two-class spatial-filtering demo; writes filtered signals and variances.
    CspaDemo {
        #[command(flatten)]
        tune: Tunables,
    },
}

/// Flags shared by the subcommands, all optional so a config file can fill
/// them in; `resolve` applies flag > config > default.
#[derive(Args)]
struct Tunables {
    /// Matrix dimension N.
    #[arg(long)]
    n: Option<usize>,
    /// Basis column count M.
    #[arg(long)]
    m: Option<usize>,
    /// Number of matrices K.
    #[arg(long)]
    k: Option<usize>,
    /// Noise variance of the generated data.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Root seed for all randomness in this invocation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file for model-select).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampler iterations per chain.
    #[arg(long)]
    nsamps: Option<usize>,
    /// Iterations discarded from the front of every chain.
    #[arg(long)]
    burnin: Option<usize>,
    /// Keep every thin-th post-burn-in state.
    #[arg(long)]
    thin: Option<usize>,
    /// Number of independent chains.
    #[arg(long)]
    chains: Option<usize>,
    /// Axis-weight update scheme: rejection, slice or grid.
    #[arg(long)]
    scheme: Option<String>,
}

/// Config-file mirror of `Tunables` plus the per-subcommand arguments a
/// script might want to pin.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    n: Option<usize>,
    m: Option<usize>,
    k: Option<usize>,
    sigma2: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    nsamps: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
    chains: Option<usize>,
    scheme: Option<String>,
    schemes: Option<String>,
    #[serde(alias = "m-range")]
    m_range: Option<String>,
}

struct Resolved {
    n: usize,
    m: Option<usize>,
    k: usize,
    sigma2: f64,
    seed: u64,
    out: PathBuf,
    nsamps: usize,
    burnin: usize,
    thin: usize,
    chains: usize,
    scheme: ThetaScheme,
}

impl Tunables {
    fn resolve(self, cfg: &ConfigFile, defaults: Defaults) -> Result<Resolved> {
        let scheme_tag = self
            .scheme
            .or_else(|| cfg.scheme.clone())
            .unwrap_or_else(|| "slice".to_string());
        Ok(Resolved {
            n: self.n.or(cfg.n).unwrap_or(10),
            m: self.m.or(cfg.m),
            k: self.k.or(cfg.k).unwrap_or(100),
            sigma2: self.sigma2.or(cfg.sigma2).unwrap_or(0.01),
            seed: self.seed.or(cfg.seed).unwrap_or(0),
            out: self.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
            nsamps: self.nsamps.or(cfg.nsamps).unwrap_or(defaults.nsamps),
            burnin: self.burnin.or(cfg.burnin).unwrap_or(defaults.burnin),
            thin: self.thin.or(cfg.thin).unwrap_or(1),
            chains: self.chains.or(cfg.chains).unwrap_or(1),
            scheme: ThetaScheme::parse(&scheme_tag)?,
        })
    }
}

/// Per-subcommand sampler horizon defaults.
struct Defaults {
    nsamps: usize,
    burnin: usize,
}

const SAMPLE_DEFAULTS: Defaults = Defaults { nsamps: 5000, burnin: 2500 };
const SELECT_DEFAULTS: Defaults = Defaults { nsamps: 2000, burnin: 1000 };
const BENCH_DEFAULTS: Defaults = Defaults { nsamps: 20_000, burnin: 1000 };

fn parse_m_range(text: &str) -> Result<(usize, usize)> {
    let (lo, hi) = text
        .split_once("..")
        .ok_or_else(|| Error::InvalidArgument(format!("expected LO..HI, got '{text}'")))?;
    let lo = lo
        .trim()
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("bad range start '{lo}': {e}")))?;
    let hi = hi
        .trim()
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("bad range end '{hi}': {e}")))?;
    Ok((lo, hi))
}

fn load_config(path: Option<&PathBuf>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("config {}: {e}", p.display())))
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Generate { kind, tune } => {
            let r = tune.resolve(&cfg, SAMPLE_DEFAULTS)?;
            run::generate(&kind, r.n, r.m.unwrap_or(5), r.k, r.sigma2, r.seed, &r.out)
        }
        Command::Sample { data, tune } => {
            let r = tune.resolve(&cfg, SAMPLE_DEFAULTS)?;
            let m = r.m.map_or_else(
                || jointdiag::model::MatrixSet::read_json(&data).map(|c| c.dim()),
                Ok,
            )?;
            run::sample(&run::SampleArgs {
                data,
                m,
                n_samples: r.nsamps,
                burn_in: r.burnin,
                thin: r.thin,
                chains: r.chains,
                scheme: r.scheme,
                seed: r.seed,
                out: r.out,
            })
        }
        Command::Diagnose { trace, truth } => run::diagnose(&trace, truth.as_deref()),
        Command::ModelSelect { data, m_range, tune } => {
            let range_text = m_range.or_else(|| cfg.m_range.clone());
            let r = tune.resolve(&cfg, SELECT_DEFAULTS)?;
            run::run_model_select(&run::ModelSelectArgs {
                data,
                m_range: range_text.as_deref().map(parse_m_range).transpose()?,
                n_samples: r.nsamps,
                burn_in: r.burnin,
                chains: r.chains,
                scheme: r.scheme,
                seed: r.seed,
                out: tune_out_file(r.out),
            })
        }
        Command::Compare { data, truth, tune } => {
            let r = tune.resolve(&cfg, SAMPLE_DEFAULTS)?;
            run::compare(&run::CompareArgs {
                data,
                truth,
                m: r.m,
                n_samples: r.nsamps,
                burn_in: r.burnin,
                chains: r.chains,
                scheme: r.scheme,
                seed: r.seed,
            })
        }
        Command::BinghamBench { schemes, tune } => {
            let list = if schemes == "rejection,slice,grid" {
                cfg.schemes.clone().unwrap_or(schemes)
            } else {
                schemes
            };
            let parsed: Vec<ThetaScheme> = list
                .split(',')
                .map(|tag| ThetaScheme::parse(tag.trim()))
                .collect::<Result<_>>()?;
            let r = tune.resolve(&cfg, BENCH_DEFAULTS)?;
            run::bingham_bench(&run::BinghamBenchArgs {
                m: r.m.unwrap_or(10),
                n_samples: r.nsamps,
                burn_in: r.burnin,
                schemes: parsed,
                seed: r.seed,
            })
        }
        Command::BssDemo { tune } => {
            let r = tune.resolve(&cfg, SAMPLE_DEFAULTS)?;
            run::bss_demo(r.seed)
        }
        Command::CspaDemo { tune } => {
            let r = tune.resolve(&cfg, SAMPLE_DEFAULTS)?;
            run::cspa_demo(r.seed, &r.out)
        }
    }
}

/// model-select writes its table to stdout unless an explicit file was
/// given; the directory default used elsewhere would shadow that.
fn tune_out_file(out: PathBuf) -> Option<PathBuf> {
    if out == PathBuf::from(".") {
        None
    } else {
        Some(out)
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 3,
        Error::RejectionOverflow(_) | Error::NonFiniteLogLik { .. } => 4,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
