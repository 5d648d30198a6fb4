//! Runtime finite-difference verification of every analytic gradient.
//!
//! For dimensions up to [`FULL_FD_MAX_DIM`] each coordinate is perturbed;
//! above it, the check compares directional derivatives along a few random
//! unit directions, normalized by `‖∇‖`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding_store::EmbeddingVector;
use crate::error::Result;
use crate::linalg::{self, Matrix};
use crate::losses::{neighbor_loss, ovi_loss};
use crate::parametrization::{LatentState, ParamKind};
use crate::stats::GaussianStats;

pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
pub const FULL_FD_MAX_DIM: usize = 64;
const DIRECTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Negates every analytic gradient before comparison.
    SignFlip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub dim: usize,
    pub suites: Vec<SuiteReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("suite,dim,trials,max_rel_error,status\n");
        for s in &self.suites {
            out.push_str(&format!(
                "{},{},{},{:.3e},{}\n",
                s.name,
                self.dim,
                s.trials,
                s.max_rel_error,
                if s.passed() { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Relative disagreement between an analytic gradient and central
/// differences of `f` at `x`.
pub fn gradient_error(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut probe = x.to_vec();
    let mut central = |dir: &[f64]| {
        for ((p, &x0), &d) in probe.iter_mut().zip(x).zip(dir) {
            *p = x0 + FD_STEP * d;
        }
        let fp = f(&probe);
        for ((p, &x0), &d) in probe.iter_mut().zip(x).zip(dir) {
            *p = x0 - FD_STEP * d;
        }
        (fp - f(&probe)) / (2.0 * FD_STEP)
    };
    if x.len() <= FULL_FD_MAX_DIM {
        let mut numeric = vec![0.0; x.len()];
        let mut e = vec![0.0; x.len()];
        for i in 0..x.len() {
            e[i] = 1.0;
            numeric[i] = central(&e);
            e[i] = 0.0;
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = linalg::norm(analytic)
            .max(linalg::norm(&numeric))
            .max(f64::MIN_POSITIVE);
        linalg::norm(&diff) / scale
    } else {
        let scale = linalg::norm(analytic).max(f64::MIN_POSITIVE);
        (0..DIRECTIONS)
            .map(|_| {
                let mut dir = gaussian(rng, x.len());
                let n = linalg::norm(&dir);
                dir.iter_mut().for_each(|v| *v /= n);
                (linalg::dot(analytic, &dir) - central(&dir)).abs() / scale
            })
            .fold(0.0, f64::max)
    }
}

fn vector(values: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(values).expect("finite by construction")
}

fn random_factor(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let mut l = Matrix::zeros(d, d);
    let off = 0.5 / (d as f64).sqrt();
    for i in 0..d {
        for j in 0..i {
            let x: f64 = StandardNormal.sample(rng);
            l.set(i, j, off * x);
        }
        l.set(i, i, rng.random_range(0.5..2.0));
    }
    l
}

/// Runs every gradient suite `trials` times at dimension `dim`.
pub fn run(dim: usize, trials: usize, seed: u64, fault: Fault) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = match fault {
        Fault::None => 1.0,
        Fault::SignFlip => -1.0,
    };
    let flip = |g: &[f64]| g.iter().map(|v| sign * v).collect::<Vec<_>>();
    let mut suites: Vec<SuiteReport> = Vec::new();
    let mut record = |name: &'static str, err: f64| match suites.iter_mut().find(|s| s.name == name) {
        Some(s) => {
            s.trials += 1;
            s.max_rel_error = s.max_rel_error.max(err);
        }
        None => suites.push(SuiteReport {
            name,
            trials: 1,
            max_rel_error: err,
        }),
    };

    for _ in 0..trials {
        let z = gaussian(&mut rng, dim);
        let target = vector(gaussian(&mut rng, dim));
        let (_, g) = ovi_loss(&vector(z.clone()), &target)?;
        let f = |x: &[f64]| ovi_loss(&vector(x.to_vec()), &target).expect("nonzero").0;
        record("ovi_loss", gradient_error(&f, &z, &flip(g.as_slice()), &mut rng));

        let anchor = vector(gaussian(&mut rng, dim));
        let (_, g) = neighbor_loss(&vector(z.clone()), &anchor)?;
        let f = |x: &[f64]| neighbor_loss(&vector(x.to_vec()), &anchor).expect("nonzero").0;
        record("neighbor_loss", gradient_error(&f, &z, &flip(g.as_slice()), &mut rng));

        let mean = vector(gaussian(&mut rng, dim));
        let stats = GaussianStats::from_factor(mean, random_factor(&mut rng, dim), 0.0, 0)?;
        let m = stats.mahalanobis_grad(&vector(z.clone()))?;
        let f = |x: &[f64]| stats.mahalanobis(&vector(x.to_vec())).expect("dims agree");
        record(
            "mahalanobis",
            gradient_error(&f, &z, &flip(m.grad.as_slice()), &mut rng),
        );

        for (name, kind, n_tokens) in [
            ("backward_direct", ParamKind::Direct, 1),
            ("backward_mean_aggregate", ParamKind::MeanAggregate, 6),
            ("backward_frozen_linear", ParamKind::FrozenLinear, 6),
        ] {
            let latent = LatentState::init(kind, n_tokens, dim, dim, rng.random())?;
            let z = latent.forward()?;
            let (_, g) = ovi_loss(&z, &target)?;
            let analytic = latent.backward(&g)?;
            let f = |x: &[f64]| {
                let tokens = Matrix::from_vec(n_tokens, dim, x.to_vec()).expect("shape");
                let s = LatentState::from_parts(kind, tokens, latent.frozen_map().cloned(), 0).expect("valid");
                ovi_loss(&s.forward().expect("finite"), &target).expect("nonzero").0
            };
            record(
                name,
                gradient_error(&f, latent.tokens().as_slice(), &flip(analytic.as_slice()), &mut rng),
            );
        }
    }
    Ok(GradCheckReport { dim, suites })
}
