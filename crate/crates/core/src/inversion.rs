//! The optimization loop: forward → loss → backward → optimizer step.
//!
//! A run evaluates the latent at steps `0..=T`, applying `T` updates in
//! between. Step `t` is logged when `t % log_every == 0` and always at the
//! last evaluated step.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{self, EmbeddingVector};
use crate::error::{Error, Result};
use crate::losses::{cosine_sim, total_loss, LossSpec};
use crate::nn_index::CosineIndex;
use crate::optimizers::{AdamWState, Optimizer, OptimizerConfig, SgdState, DEFAULT_WEIGHT_DECAY};
use crate::parametrization::{LatentState, ParamKind};
use crate::stats::GaussianStats;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_TOKENS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    MaxSteps,
    /// Stop once the best loss improved by less than `min_delta` over the
    /// last `window` steps, or once it is already below `min_delta` (every
    /// term is non-negative, so no larger improvement is possible).
    Plateau {
        window: usize,
        min_delta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    Plateau,
}

/// Numeric run parameters; everything except the input embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub steps: usize,
    pub kind: ParamKind,
    pub n_tokens: usize,
    /// Token width; `None` means the embedding dimension.
    pub d_tok: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub lambda_m: f64,
    pub lambda_n: f64,
    pub seed: u64,
    pub log_every: usize,
    pub stop: StopRule,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            kind: ParamKind::MeanAggregate,
            n_tokens: DEFAULT_TOKENS,
            d_tok: None,
            optimizer: OptimizerConfig::default(),
            lambda_m: 0.0,
            lambda_n: 0.0,
            seed: 0,
            log_every: 1,
            stop: StopRule::MaxSteps,
        }
    }
}

impl RunSettings {
    /// Single-token, embedding-space latent.
    pub fn direct() -> Self {
        Self {
            kind: ParamKind::Direct,
            n_tokens: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParam("steps must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidParam("log_every must be >= 1".into()));
        }
        if let StopRule::Plateau { window, min_delta } = self.stop {
            if window == 0 || min_delta.is_nan() || min_delta < 0.0 {
                return Err(Error::InvalidParam(
                    "plateau needs window >= 1 and min_delta >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Resolved, in-memory inputs of a run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub target: EmbeddingVector,
    pub stats: Option<Arc<GaussianStats>>,
    pub anchor: Option<EmbeddingVector>,
    /// Any external embedding to track similarity against (e.g. a trained
    /// prior's output for the same prompt).
    pub reference: Option<EmbeddingVector>,
}

impl Inputs {
    pub fn new(target: EmbeddingVector) -> Self {
        Self {
            target,
            stats: None,
            anchor: None,
            reference: None,
        }
    }

    pub fn with_stats(mut self, stats: Arc<GaussianStats>) -> Self {
        self.stats = Some(stats);
        self
    }

    pub fn with_anchor(mut self, anchor: EmbeddingVector) -> Self {
        self.anchor = Some(anchor);
        self
    }

    pub fn with_reference(mut self, reference: EmbeddingVector) -> Self {
        self.reference = Some(reference);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum AnchorSource {
    /// First row of an embedding file.
    File { path: PathBuf },
    /// Top-`k` neighbors of the target in a reference matrix.
    Index { path: PathBuf, k: usize },
}

/// File-backed run description; round-trips through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub target: PathBuf,
    #[serde(default)]
    pub target_row: usize,
    #[serde(default)]
    pub stats: Option<PathBuf>,
    #[serde(default)]
    pub anchor: Option<AnchorSource>,
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default)]
    pub settings: RunSettings,
}

impl RunConfig {
    pub fn new(target: impl Into<PathBuf>, settings: RunSettings) -> Self {
        Self {
            target: target.into(),
            target_row: 0,
            stats: None,
            anchor: None,
            reference: None,
            settings,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Loads every referenced file. The anchor is resolved here, once.
    pub fn resolve(&self) -> Result<Inputs> {
        let target = embedding_store::read_row(&self.target, self.target_row)?;
        let stats = match &self.stats {
            Some(prefix) => Some(Arc::new(GaussianStats::load(prefix)?)),
            None => None,
        };
        let anchor = match &self.anchor {
            Some(AnchorSource::File { path }) => Some(embedding_store::read_vector(path)?),
            Some(AnchorSource::Index { path, k }) => {
                let index = CosineIndex::build(embedding_store::read_matrix(path)?)?;
                Some(index.anchor_for(&target, *k)?)
            }
            None => None,
        };
        let reference = match &self.reference {
            Some(path) => Some(embedding_store::read_vector(path)?),
            None => None,
        };
        Ok(Inputs {
            target,
            stats,
            anchor,
            reference,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_ovi: f64,
    pub loss_mahalanobis: Option<f64>,
    pub loss_neighbor: Option<f64>,
    pub sim_target: f64,
    pub sim_anchor: Option<f64>,
    pub sim_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub final_embedding: EmbeddingVector,
    pub trajectory: Vec<TrajectoryRecord>,
    pub stop_reason: StopReason,
    /// Optimizer updates applied; equals the step of the last record.
    pub wall_steps: usize,
    /// Norm of the combined embedding-space gradient at the final iterate.
    pub final_grad_norm: f64,
}

impl RunResult {
    pub fn final_record(&self) -> &TrajectoryRecord {
        self.trajectory.last().expect("trajectory is never empty")
    }
}

fn build_optimizer(settings: &RunSettings, spec: &LossSpec, latent: &LatentState) -> Result<Optimizer> {
    let (rows, cols) = latent.tokens().shape();
    Ok(match &settings.optimizer {
        OptimizerConfig::Adamw(cfg) => {
            let mut cfg = *cfg;
            if cfg.weight_decay.is_none() {
                // decay has nothing to act against when the objective ignores scale
                let scale_free = latent.kind() == ParamKind::Direct && spec.is_scale_invariant();
                cfg.weight_decay = Some(if scale_free { 0.0 } else { DEFAULT_WEIGHT_DECAY });
            }
            Optimizer::AdamW(AdamWState::new(rows, cols, &cfg)?)
        }
        OptimizerConfig::Sgd { lr } => Optimizer::Sgd(SgdState::new(*lr)?),
    })
}

pub fn run_inversion(config: &RunConfig) -> Result<RunResult> {
    let inputs = config.resolve()?;
    invert(&config.settings, &inputs)
}

pub fn invert(settings: &RunSettings, inputs: &Inputs) -> Result<RunResult> {
    invert_observed(settings, inputs, |_, _| {})
}

/// Like [`invert`], calling `observer(step, z)` at every evaluated iterate.
pub fn invert_observed<F>(settings: &RunSettings, inputs: &Inputs, mut observer: F) -> Result<RunResult>
where
    F: FnMut(usize, &EmbeddingVector),
{
    settings.validate()?;
    let spec = LossSpec::new(
        inputs.target.clone(),
        settings.lambda_m,
        settings.lambda_n,
        inputs.anchor.clone(),
        inputs.stats.clone(),
    )?;
    let d_emb = spec.dim();
    if let Some(r) = &inputs.reference {
        cosine_sim(r, &inputs.target)?;
    }
    let d_tok = settings.d_tok.unwrap_or(d_emb);
    let mut latent = LatentState::init(settings.kind, settings.n_tokens, d_tok, d_emb, settings.seed)?;
    let mut optimizer = build_optimizer(settings, &spec, &latent)?;

    let mut trajectory = Vec::new();
    let mut best_history = Vec::with_capacity(settings.steps + 1);
    let mut best = f64::INFINITY;

    for step in 0..=settings.steps {
        let non_finite = |trajectory: &Vec<TrajectoryRecord>| Error::NonFiniteLoss {
            step,
            trajectory: trajectory.clone(),
        };
        let z = match latent.forward() {
            Ok(z) => z,
            Err(Error::NonFinite { .. }) => return Err(non_finite(&trajectory)),
            Err(e) => return Err(e),
        };
        let breakdown = match total_loss(&z, &spec) {
            Ok(b) if b.total.is_finite() => b,
            Ok(_) | Err(Error::NonFinite { .. }) => return Err(non_finite(&trajectory)),
            Err(e) => return Err(e),
        };
        observer(step, &z);

        best = best.min(breakdown.total);
        best_history.push(best);
        let plateau = match settings.stop {
            StopRule::MaxSteps => false,
            StopRule::Plateau { window, min_delta } => {
                best < min_delta || (step >= window && best_history[step - window] - best < min_delta)
            }
        };
        let last = plateau || step == settings.steps;

        if step % settings.log_every == 0 || last {
            trajectory.push(TrajectoryRecord {
                step,
                loss_total: breakdown.total,
                loss_ovi: breakdown.ovi,
                loss_mahalanobis: breakdown.mahalanobis,
                loss_neighbor: breakdown.neighbor,
                sim_target: 1.0 - breakdown.ovi,
                sim_anchor: inputs.anchor.as_ref().map(|a| cosine_sim(&z, a)).transpose()?,
                sim_reference: inputs.reference.as_ref().map(|r| cosine_sim(&z, r)).transpose()?,
            });
        }
        if last {
            return Ok(RunResult {
                final_grad_norm: breakdown.grad.norm(),
                final_embedding: z,
                trajectory,
                stop_reason: if plateau {
                    StopReason::Plateau
                } else {
                    StopReason::MaxSteps
                },
                wall_steps: step,
            });
        }

        let token_grads = latent.backward(&breakdown.grad)?;
        optimizer.step(latent.tokens_mut(), &token_grads)?;
    }
    unreachable!("the loop returns at its final step")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LambdaM,
    LambdaN,
    NTokens,
    Steps,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_m" | "lambda-m" => Ok(SweepAxis::LambdaM),
            "lambda_n" | "lambda-n" => Ok(SweepAxis::LambdaN),
            "n_tokens" | "tokens" => Ok(SweepAxis::NTokens),
            "steps" => Ok(SweepAxis::Steps),
            other => Err(Error::InvalidParam(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LambdaM => "lambda_m",
            SweepAxis::LambdaN => "lambda_n",
            SweepAxis::NTokens => "n_tokens",
            SweepAxis::Steps => "steps",
        }
    }

    pub fn apply(self, base: &RunSettings, value: f64) -> Result<RunSettings> {
        let mut s = base.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value.is_finite() {
                Ok(value as usize)
            } else {
                Err(Error::InvalidParam(format!(
                    "{} needs a positive integer, got {value}",
                    self.name()
                )))
            }
        };
        match self {
            SweepAxis::LambdaM => s.lambda_m = value,
            SweepAxis::LambdaN => s.lambda_n = value,
            SweepAxis::NTokens => s.n_tokens = count()?,
            SweepAxis::Steps => s.steps = count()?,
        }
        Ok(s)
    }
}

/// Final-step figures of one sweep run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sim_target: f64,
    pub sim_anchor: Option<f64>,
    pub sim_reference: Option<f64>,
    pub mahalanobis: Option<f64>,
    pub neighbor: Option<f64>,
    pub loss_total: f64,
    pub wall_steps: usize,
    pub stop_reason: StopReason,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary {
        let r = self.final_record();
        RunSummary {
            sim_target: r.sim_target,
            sim_anchor: r.sim_anchor,
            sim_reference: r.sim_reference,
            mahalanobis: r.loss_mahalanobis,
            neighbor: r.loss_neighbor,
            loss_total: r.loss_total,
            wall_steps: self.wall_steps,
            stop_reason: self.stop_reason,
        }
    }
}

#[derive(Debug)]
pub struct SweepEntry {
    pub value: f64,
    pub result: Result<RunResult>,
}

/// One run per value, all with the base seed. A failing run is recorded in
/// its entry and does not stop the sweep. Output order follows `values`
/// regardless of `jobs`.
pub fn run_sweep(
    base: &RunSettings,
    inputs: &Inputs,
    axis: SweepAxis,
    values: &[f64],
    jobs: usize,
) -> Result<Vec<SweepEntry>> {
    if values.is_empty() {
        return Err(Error::InvalidParam("sweep needs at least one value".into()));
    }
    let one = |&value: &f64| SweepEntry {
        value,
        result: axis.apply(base, value).and_then(|s| invert(&s, inputs)),
    };
    if jobs <= 1 {
        return Ok(values.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    Ok(pool.install(|| values.par_iter().map(one).collect()))
}

/// Mean pairwise cosine similarity among final embeddings.
pub fn collapse_diagnostic(finals: &[EmbeddingVector]) -> Result<f64> {
    if finals.len() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            actual: finals.len(),
        });
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in finals.iter().enumerate() {
        for b in &finals[i + 1..] {
            sum += cosine_sim(a, b)?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}
