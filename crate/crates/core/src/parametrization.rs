//! How the learnable pseudo-tokens form an embedding-space point.
//!
//! * `direct`: one token, used as the embedding itself.
//! * `mean_aggregate`: the arithmetic mean of `N` tokens.
//! * `frozen_linear`: a fixed random linear map applied to the token mean.
//!   With `d_tok < d_emb` the reachable set is a proper subspace, so the
//!   alignment plateaus below 1.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding_store::EmbeddingVector;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Direct,
    MeanAggregate,
    FrozenLinear,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Direct => "direct",
            ParamKind::MeanAggregate => "mean_aggregate",
            ParamKind::FrozenLinear => "frozen_linear",
        })
    }
}

impl FromStr for ParamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ParamKind::Direct),
            "mean_aggregate" | "mean-aggregate" | "mean" => Ok(ParamKind::MeanAggregate),
            "frozen_linear" | "frozen-linear" | "linear" => Ok(ParamKind::FrozenLinear),
            other => Err(Error::InvalidParam(format!("unknown parametrization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    tokens: Matrix,
    kind: ParamKind,
    frozen_map: Option<Matrix>,
    seed: u64,
}

impl LatentState {
    /// Draws tokens i.i.d. `N(0, 1)` from a generator seeded with `seed`.
    /// For `frozen_linear` the map is drawn afterwards from the same stream,
    /// with entries `N(0, 1/d_tok)`.
    pub fn init(kind: ParamKind, n_tokens: usize, d_tok: usize, d_emb: usize, seed: u64) -> Result<Self> {
        if n_tokens == 0 || d_tok == 0 || d_emb == 0 {
            return Err(Error::Shape("token count and dimensions must be positive".into()));
        }
        match kind {
            ParamKind::Direct if n_tokens != 1 || d_tok != d_emb => {
                return Err(Error::Shape(format!(
                    "direct parametrization needs exactly one token of the embedding dimension, got {n_tokens}x{d_tok} for d_emb={d_emb}"
                )))
            }
            ParamKind::MeanAggregate if d_tok != d_emb => {
                return Err(Error::Shape(format!(
                    "mean_aggregate needs d_tok = d_emb, got {d_tok} vs {d_emb}"
                )))
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    scale * x
                })
                .collect()
        };
        let tokens = Matrix::from_vec(n_tokens, d_tok, draw(n_tokens * d_tok, 1.0))?;
        let frozen_map = match kind {
            ParamKind::FrozenLinear => Some(Matrix::from_vec(
                d_emb,
                d_tok,
                draw(d_emb * d_tok, 1.0 / (d_tok as f64).sqrt()),
            )?),
            _ => None,
        };
        Ok(Self {
            tokens,
            kind,
            frozen_map,
            seed,
        })
    }

    /// Assembles a state from explicit parts, checking kind constraints.
    pub fn from_parts(kind: ParamKind, tokens: Matrix, frozen_map: Option<Matrix>, seed: u64) -> Result<Self> {
        let (n, d_tok) = tokens.shape();
        if n == 0 || d_tok == 0 {
            return Err(Error::Shape("empty token matrix".into()));
        }
        match (kind, &frozen_map) {
            (ParamKind::Direct, None) if n == 1 => {}
            (ParamKind::MeanAggregate, None) => {}
            (ParamKind::FrozenLinear, Some(map)) if map.cols() == d_tok && map.rows() > 0 => {}
            _ => {
                return Err(Error::Shape(format!(
                    "{kind} cannot be built from {n}x{d_tok} tokens with map {:?}",
                    frozen_map.as_ref().map(Matrix::shape)
                )))
            }
        }
        Ok(Self {
            tokens,
            kind,
            frozen_map,
            seed,
        })
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut Matrix {
        &mut self.tokens
    }

    pub fn frozen_map(&self) -> Option<&Matrix> {
        self.frozen_map.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn d_emb(&self) -> usize {
        match &self.frozen_map {
            Some(map) => map.rows(),
            None => self.tokens.cols(),
        }
    }

    pub fn forward(&self) -> Result<EmbeddingVector> {
        let z = match self.kind {
            ParamKind::Direct => self.tokens.row(0).to_vec(),
            ParamKind::MeanAggregate => self.tokens.column_mean(),
            ParamKind::FrozenLinear => {
                let map = self.frozen_map.as_ref().expect("checked at construction");
                map.matvec(&self.tokens.column_mean())
            }
        };
        EmbeddingVector::new(z)
    }

    /// Pulls an embedding-space gradient back to the tokens.
    pub fn backward(&self, grad_embedding: &EmbeddingVector) -> Result<Matrix> {
        if grad_embedding.dim() != self.d_emb() {
            return Err(Error::DimMismatch {
                expected: self.d_emb(),
                actual: grad_embedding.dim(),
            });
        }
        let (n, d_tok) = self.tokens.shape();
        let g = grad_embedding.as_slice();
        let per_token: Vec<f64> = match self.kind {
            ParamKind::Direct => return Matrix::from_vec(1, d_tok, g.to_vec()),
            ParamKind::MeanAggregate => g.iter().map(|v| v / n as f64).collect(),
            ParamKind::FrozenLinear => {
                let map = self.frozen_map.as_ref().expect("checked at construction");
                let mut back = map.matvec_transposed(g);
                back.iter_mut().for_each(|v| *v /= n as f64);
                back
            }
        };
        let mut out = Matrix::zeros(n, d_tok);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(&per_token);
        }
        Ok(out)
    }
}

pub fn init_latent(kind: ParamKind, n_tokens: usize, d_tok: usize, d_emb: usize, seed: u64) -> Result<LatentState> {
    LatentState::init(kind, n_tokens, d_tok, d_emb, seed)
}

pub fn forward(s: &LatentState) -> Result<EmbeddingVector> {
    s.forward()
}

pub fn backward(s: &LatentState, grad_embedding: &EmbeddingVector) -> Result<Matrix> {
    s.backward(grad_embedding)
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    tokens: Vec<&'a [f64]>,
}

#[derive(Deserialize)]
struct EncodeResponse {
    embedding: Vec<f64>,
}

/// An external encoder process speaking one JSON object per line over its
/// standard streams. Evaluation only: no gradients are ever requested.
pub struct EncoderOracle {
    endpoint: String,
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    dim: Option<usize>,
}

impl EncoderOracle {
    pub fn spawn<I, S>(program: &str, args: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<std::ffi::OsStr>,
    {
        let endpoint = program.to_string();
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport {
                endpoint: endpoint.clone(),
                message: format!("failed to start: {e}"),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            endpoint,
            child,
            stdin,
            stdout,
            dim: None,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Embedding dimension fixed by the first response, if any.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn transport(&self, message: impl Into<String>) -> Error {
        Error::Transport {
            endpoint: self.endpoint.clone(),
            message: message.into(),
        }
    }

    pub fn encode(&mut self, tokens: &Matrix) -> Result<EmbeddingVector> {
        let request = EncodeRequest {
            tokens: (0..tokens.rows()).map(|i| tokens.row(i)).collect(),
        };
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| self.transport(format!("write failed: {e}")))?;

        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| self.transport(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(self.transport("process closed its output"));
        }
        let response: EncodeResponse =
            serde_json::from_str(reply.trim()).map_err(|e| self.transport(format!("bad response: {e}")))?;
        let got = response.embedding.len();
        match self.dim {
            None => self.dim = Some(got),
            Some(first) if first != got => {
                return Err(Error::DimensionDrift {
                    endpoint: self.endpoint.clone(),
                    first,
                    now: got,
                })
            }
            Some(_) => {}
        }
        EmbeddingVector::new(response.embedding)
    }
}

impl Drop for EncoderOracle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn encode_external(oracle: &mut EncoderOracle, tokens: &Matrix) -> Result<EmbeddingVector> {
    oracle.encode(tokens)
}

/// Serves the oracle protocol by answering each request with the token
/// mean. After `drift_after` answers the reply gains one extra component,
/// which lets callers exercise dimension-drift handling.
pub fn serve_echo_encoder(input: impl BufRead, mut output: impl Write, drift_after: Option<usize>) -> Result<()> {
    #[derive(Deserialize)]
    struct Request {
        tokens: Vec<Vec<f64>>,
    }
    for (served, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line)?;
        let d = req.tokens.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; d];
        for t in &req.tokens {
            linalg::axpy(1.0 / req.tokens.len() as f64, t, &mut mean);
        }
        if drift_after.is_some_and(|k| served >= k) {
            mean.push(0.0);
        }
        let reply = serde_json::json!({ "embedding": mean });
        writeln!(output, "{reply}")
            .and_then(|_| output.flush())
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}
