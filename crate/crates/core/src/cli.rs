//! Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage
//! error. Usage errors are detected before any output file is opened.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::embedding_store::{self, EmbeddingMatrix};
use crate::error::Error;
use crate::gradcheck::{self, Fault};
use crate::inversion::{self, AnchorSource, RunConfig, RunResult, RunSettings, StopRule, SweepAxis, SweepEntry};
use crate::nn_index::CosineIndex;
use crate::optimizers::{AdamWConfig, OptimizerConfig};
use crate::parametrization::{self, ParamKind};
use crate::stats::{GaussianStats, DEFAULT_SHRINKAGE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ovi",
    version,
    about = "Optimize latent embeddings toward a target embedding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate mean and shrunk covariance of a reference embedding file.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHRINKAGE)]
        shrinkage: f64,
        /// Output prefix: writes <prefix>.mean.emb, <prefix>.chol.emb, <prefix>.stats.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one inversion.
    Invert {
        #[command(flatten)]
        run: RunArgs,
        /// Output prefix: writes <prefix>.emb, <prefix>.trajectory.csv, <prefix>.config.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one inversion per value along an axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_axis)]
        axis: Option<SweepAxis>,
        /// Comma-separated values, e.g. 0,0.5,4
        #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "preset")]
        values: Vec<f64>,
        #[arg(long, value_enum, conflicts_with = "axis")]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: u64,
        /// Output prefix: writes <prefix>.sweep.csv and per-run files
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact cosine top-k of each query row against an index file.
    Nn {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every analytic gradient.
    CheckGrad {
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        dim: u64,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, hide = true)]
        fault: Option<FaultArg>,
    },
    /// Convert a CSV embedding table to the binary format.
    Convert {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// First column holds row labels.
        #[arg(long)]
        labels: bool,
    },
    /// Reference encoder for the oracle protocol: replies with the token mean.
    #[command(hide = true)]
    EchoEncoder {
        #[arg(long)]
        drift_after: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// lambda_n over 0, 0.5, 4
    Neighbor,
    /// lambda_m over 0, 0.009, 0.017, 0.05
    Mahalanobis,
    /// n_tokens over 1, 3, 6, 9
    Tokens,
    /// steps over 100, 600, 1000
    Steps,
}

impl Preset {
    fn expand(self) -> (SweepAxis, Vec<f64>) {
        match self {
            Preset::Neighbor => (SweepAxis::LambdaN, vec![0.0, 0.5, 4.0]),
            Preset::Mahalanobis => (SweepAxis::LambdaM, vec![0.0, 0.009, 0.017, 0.05]),
            Preset::Tokens => (SweepAxis::NTokens, vec![1.0, 3.0, 6.0, 9.0]),
            Preset::Steps => (SweepAxis::Steps, vec![100.0, 600.0, 1000.0]),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    SignFlip,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adamw,
    Sgd,
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ParamKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Run flags. Each one overrides the matching field of `--config` (or of
/// the defaults when no config is given).
#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run config to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target embedding file.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    target_row: Option<usize>,
    /// Stats prefix written by `ovi stats`.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    lambda_m: Option<f64>,
    /// Reference matrix searched for the target's nearest neighbor.
    #[arg(long, conflicts_with = "anchor")]
    index: Option<PathBuf>,
    /// Neighbors averaged into the anchor when --index is used.
    #[arg(long, requires = "index", value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Explicit anchor embedding file.
    #[arg(long)]
    anchor: Option<PathBuf>,
    #[arg(long)]
    lambda_n: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    tokens: Option<u64>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<ParamKind>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d_tok: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    log_every: Option<u64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Enable plateau stopping over this many steps.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    plateau_window: Option<u64>,
    #[arg(long, requires = "plateau_window")]
    min_delta: Option<f64>,
    /// Embedding to track similarity against at every logged step.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Domain(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunArgs {
    fn into_config(self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let target = self
                    .target
                    .clone()
                    .ok_or_else(|| usage("--target is required unless --config is given"))?;
                RunConfig::new(target, RunSettings::default())
            }
        };
        if let Some(t) = self.target {
            cfg.target = t;
        }
        if let Some(r) = self.target_row {
            cfg.target_row = r;
        }
        if let Some(s) = self.stats {
            cfg.stats = Some(s);
        }
        match (self.index, self.anchor) {
            (Some(path), _) => {
                cfg.anchor = Some(AnchorSource::Index {
                    path,
                    k: self.k.unwrap_or(1) as usize,
                })
            }
            (None, Some(path)) => cfg.anchor = Some(AnchorSource::File { path }),
            (None, None) => {}
        }
        if let Some(r) = self.reference {
            cfg.reference = Some(r);
        }

        let s = &mut cfg.settings;
        let explicit_tokens = self.tokens.is_some();
        if let Some(kind) = self.kind {
            s.kind = kind;
            if kind == ParamKind::Direct && !explicit_tokens && self.config.is_none() {
                s.n_tokens = 1;
            }
        }
        if let Some(n) = self.tokens {
            s.n_tokens = n as usize;
        }
        if let Some(d) = self.d_tok {
            s.d_tok = Some(d as usize);
        }
        if let Some(v) = self.steps {
            s.steps = v as usize;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.log_every {
            s.log_every = v as usize;
        }
        if let Some(v) = self.lambda_m {
            s.lambda_m = v;
        }
        if let Some(v) = self.lambda_n {
            s.lambda_n = v;
        }
        if let Some(window) = self.plateau_window {
            s.stop = StopRule::Plateau {
                window: window as usize,
                min_delta: self.min_delta.unwrap_or(1e-10),
            };
        }
        match self.optimizer {
            Some(OptimizerArg::Sgd) => {
                let lr = self.lr.unwrap_or(1.0);
                s.optimizer = OptimizerConfig::Sgd { lr };
            }
            Some(OptimizerArg::Adamw) if !matches!(s.optimizer, OptimizerConfig::Adamw(_)) => {
                s.optimizer = OptimizerConfig::Adamw(AdamWConfig::default());
            }
            _ => {}
        }
        match &mut s.optimizer {
            OptimizerConfig::Adamw(a) => {
                if let Some(v) = self.lr {
                    a.lr = v;
                }
                if let Some(v) = self.beta1 {
                    a.beta1 = v;
                }
                if let Some(v) = self.beta2 {
                    a.beta2 = v;
                }
                if let Some(v) = self.eps {
                    a.eps = v;
                }
                if let Some(v) = self.weight_decay {
                    a.weight_decay = Some(v);
                }
            }
            OptimizerConfig::Sgd { lr } => {
                if let Some(v) = self.lr {
                    *lr = v;
                }
                if self.beta1.or(self.beta2).or(self.eps).or(self.weight_decay).is_some() {
                    return Err(usage("--beta1/--beta2/--eps/--weight-decay apply to adamw only"));
                }
            }
        }
        check_run_usage(&cfg)?;
        Ok(cfg)
    }
}

fn check_run_usage(cfg: &RunConfig) -> CliResult {
    let s = &cfg.settings;
    for (flag, v) in [("--lambda-m", s.lambda_m), ("--lambda-n", s.lambda_n)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(usage(format!("{flag} must be a finite value >= 0")));
        }
    }
    if s.lambda_m > 0.0 && cfg.stats.is_none() {
        return Err(usage("--lambda-m needs --stats"));
    }
    if s.lambda_n > 0.0 && cfg.anchor.is_none() {
        return Err(usage("--lambda-n needs --anchor or --index"));
    }
    s.validate().map_err(|e| usage(e.to_string()))
}

fn sweep_needs(cfg: &RunConfig, axis: SweepAxis, values: &[f64]) -> CliResult {
    let positive = values.iter().any(|&v| v > 0.0);
    match axis {
        SweepAxis::LambdaM if positive && cfg.stats.is_none() => Err(usage("a lambda_m sweep needs --stats")),
        SweepAxis::LambdaN if positive && cfg.anchor.is_none() => {
            Err(usage("a lambda_n sweep needs --anchor or --index"))
        }
        _ if values.iter().any(|v| !v.is_finite()) => Err(usage("--values must be finite")),
        _ => Ok(()),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_run_outputs(prefix: &Path, result: &RunResult) -> CliResult {
    embedding_store::write_vector(&result.final_embedding, with_suffix(prefix, ".emb"))?;
    embedding_store::write_trajectory(&result.trajectory, with_suffix(prefix, ".trajectory.csv"))?;
    Ok(())
}

fn display_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_stats(data: &Path, shrinkage: f64, out: &Path) -> CliResult {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(usage(format!("--shrinkage must lie in [0, 1], got {shrinkage}")));
    }
    let matrix = embedding_store::read_matrix(data)?;
    eprintln!(
        "estimating statistics over {} rows of dimension {}",
        matrix.rows(),
        matrix.dim()
    );
    let stats = GaussianStats::estimate(&matrix, shrinkage)?;
    stats.save(out)?;
    let p = stats.profile(&matrix)?;
    println!(
        "{{\"rows\":{},\"dim\":{},\"shrinkage\":{},\"distance_mean\":{},\"distance_stddev\":{},\"distance_min\":{},\"distance_max\":{}}}",
        matrix.rows(),
        matrix.dim(),
        shrinkage,
        p.mean,
        p.stddev,
        p.min,
        p.max
    );
    Ok(())
}

fn cmd_invert(run: RunArgs, out: &Path) -> CliResult {
    let cfg = run.into_config()?;
    let inputs = cfg.resolve()?;
    eprintln!(
        "inverting: dim {} kind {} tokens {} steps {} seed {}",
        inputs.target.dim(),
        cfg.settings.kind,
        cfg.settings.n_tokens,
        cfg.settings.steps,
        cfg.settings.seed
    );
    let result = match inversion::invert(&cfg.settings, &inputs) {
        Ok(r) => r,
        Err(Error::NonFiniteLoss { step, trajectory }) => {
            embedding_store::write_trajectory(&trajectory, with_suffix(out, ".trajectory.csv"))?;
            return Err(Error::NonFiniteLoss { step, trajectory }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_run_outputs(out, &result)?;
    cfg.save(with_suffix(out, ".config.json"))?;
    println!("{}", serde_json::to_string(&result.summary()).map_err(Error::from)?);
    Ok(())
}

const SWEEP_COLUMNS: &str =
    "value,status,sim_target,sim_anchor,sim_reference,mahalanobis,neighbor,loss_total,wall_steps";

fn format_sweep(entries: &[SweepEntry]) -> String {
    let mut out = String::from(SWEEP_COLUMNS);
    out.push('\n');
    for e in entries {
        match &e.result {
            Ok(r) => {
                let s = r.summary();
                let _ = writeln!(
                    out,
                    "{},ok,{},{},{},{},{},{},{}",
                    e.value,
                    s.sim_target,
                    display_opt(s.sim_anchor),
                    display_opt(s.sim_reference),
                    display_opt(s.mahalanobis),
                    display_opt(s.neighbor),
                    s.loss_total,
                    s.wall_steps
                );
            }
            Err(_) => {
                let _ = writeln!(out, "{},error,,,,,,,", e.value);
            }
        }
    }
    out
}

fn cmd_sweep(
    run: RunArgs,
    axis: Option<SweepAxis>,
    values: Vec<f64>,
    preset: Option<Preset>,
    jobs: usize,
    out: &Path,
) -> CliResult {
    let (axis, values) = match (preset, axis) {
        (Some(p), _) => p.expand(),
        (None, Some(a)) if !values.is_empty() => (a, values),
        _ => return Err(usage("sweep needs --preset, or --axis with --values")),
    };
    let cfg = run.into_config()?;
    sweep_needs(&cfg, axis, &values)?;
    let inputs = cfg.resolve()?;
    eprintln!("sweeping {} over {:?} with {jobs} job(s)", axis.name(), values);
    let entries = inversion::run_sweep(&cfg.settings, &inputs, axis, &values, jobs)?;
    for (i, e) in entries.iter().enumerate() {
        match &e.result {
            Ok(r) => write_run_outputs(&with_suffix(out, &format!(".run{i}")), r)?,
            Err(err) => eprintln!("{} = {}: {err}", axis.name(), e.value),
        }
    }
    write_text(&with_suffix(out, ".sweep.csv"), &format_sweep(&entries))?;
    cfg.save(with_suffix(out, ".config.json"))?;
    Ok(())
}

fn cmd_nn(index: &Path, query: &Path, k: usize, out: Option<&Path>) -> CliResult {
    let index = CosineIndex::build(embedding_store::read_matrix(index)?)?;
    if index.dropped() > 0 {
        eprintln!("dropped {} zero-norm reference rows", index.dropped());
    }
    let queries = embedding_store::read_matrix(query)?;
    let mut text = String::from("query_id,rank,row_id,similarity\n");
    for q in 0..queries.rows() {
        let hits = index.query(&queries.row_vector(q), k)?;
        for (rank, h) in hits.iter().enumerate() {
            let _ = writeln!(text, "{q},{},{},{}", rank + 1, h.row_id, h.similarity);
        }
    }
    match out {
        Some(path) => write_text(path, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e).into()),
    }
}

fn cmd_check_grad(dim: usize, trials: usize, seed: u64, fault: Option<FaultArg>) -> CliResult<bool> {
    let fault = match fault {
        Some(FaultArg::SignFlip) => Fault::SignFlip,
        None => Fault::None,
    };
    let report = gradcheck::run(dim, trials, seed, fault)?;
    print!("{}", report.to_table());
    Ok(report.passed())
}

fn cmd_convert(csv: &Path, out: &Path, labels: bool) -> CliResult {
    let m: EmbeddingMatrix = embedding_store::read_csv(csv, labels)?;
    embedding_store::write_matrix(&m, out)?;
    eprintln!("wrote {} rows of dimension {}", m.rows(), m.dim());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Stats { data, shrinkage, out } => cmd_stats(&data, shrinkage, &out)?,
        Command::Invert { run, out } => cmd_invert(run, &out)?,
        Command::Sweep {
            run,
            axis,
            values,
            preset,
            jobs,
            out,
        } => cmd_sweep(run, axis, values, preset, jobs as usize, &out)?,
        Command::Nn { index, query, k, out } => cmd_nn(&index, &query, k as usize, out.as_deref())?,
        Command::CheckGrad {
            dim,
            trials,
            seed,
            fault,
        } => {
            if !cmd_check_grad(dim as usize, trials as usize, seed, fault)? {
                eprintln!("gradient check failed");
                return Ok(EXIT_DOMAIN);
            }
        }
        Command::Convert { csv, out, labels } => cmd_convert(&csv, &out, labels)?,
        Command::EchoEncoder { drift_after } => {
            let stdin = std::io::stdin();
            parametrization::serve_echo_encoder(stdin.lock(), std::io::stdout().lock(), drift_after)?;
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            EXIT_DOMAIN
        }
    }
}
