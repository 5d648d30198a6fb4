//! Alignment and regularization terms with analytic gradients.
//!
//! The combined objective is
//!
//! ```text
//! total = (1 − cos(z, target)) + λ_M · mahalanobis(z) + λ_N · (1 − cos(z, anchor))
//! ```
//!
//! Either weight may be zero; with one of them zero the objective reduces to
//! the plain Mahalanobis-constrained or neighbor-constrained variant.

use std::sync::Arc;

use crate::embedding_store::EmbeddingVector;
use crate::error::{Error, Result};
use crate::linalg;
use crate::stats::GaussianStats;

pub const MIN_NORM: f64 = 1e-12;

fn check_pair(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_sim(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_pair(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na <= MIN_NORM || nb <= MIN_NORM {
        return Err(Error::ZeroNorm);
    }
    if !(na * nb).is_finite() {
        return Err(Error::NonFinite { row: 0 });
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 − cos(z, reference)` and its gradient with respect to `z`.
///
/// `∇ = −(r̂/‖z‖ − cos · z/‖z‖²)`, which is always orthogonal to `z`.
fn cosine_distance(z: &EmbeddingVector, reference: &EmbeddingVector) -> Result<(f64, EmbeddingVector)> {
    check_pair(z, reference)?;
    let (nz, nr) = (z.norm(), reference.norm());
    if nz <= MIN_NORM || nr <= MIN_NORM {
        return Err(Error::ZeroNorm);
    }
    if !(nz * nz).is_finite() || !nr.is_finite() {
        return Err(Error::NonFinite { row: 0 });
    }
    let sim = (z.dot(reference) / (nz * nr)).clamp(-1.0, 1.0);
    let grad = z
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(&zi, &ri)| -(ri / (nr * nz) - sim * zi / (nz * nz)))
        .collect();
    Ok((1.0 - sim, EmbeddingVector::new(grad)?))
}

/// Text-alignment term: `1 − cos(z, target)`.
pub fn ovi_loss(z: &EmbeddingVector, target: &EmbeddingVector) -> Result<(f64, EmbeddingVector)> {
    cosine_distance(z, target)
}

/// Nearest-neighbor term: `1 − cos(z, anchor)`.
pub fn neighbor_loss(z: &EmbeddingVector, anchor: &EmbeddingVector) -> Result<(f64, EmbeddingVector)> {
    cosine_distance(z, anchor)
}

/// Weights and references of the combined objective.
#[derive(Debug, Clone)]
pub struct LossSpec {
    target: EmbeddingVector,
    lambda_m: f64,
    lambda_n: f64,
    anchor: Option<EmbeddingVector>,
    stats: Option<Arc<GaussianStats>>,
}

impl LossSpec {
    pub fn new(
        target: EmbeddingVector,
        lambda_m: f64,
        lambda_n: f64,
        anchor: Option<EmbeddingVector>,
        stats: Option<Arc<GaussianStats>>,
    ) -> Result<Self> {
        for (name, l) in [("lambda_m", lambda_m), ("lambda_n", lambda_n)] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be finite and >= 0, got {l}")));
            }
        }
        if lambda_m > 0.0 && stats.is_none() {
            return Err(Error::InvalidParam("lambda_m > 0 requires reference statistics".into()));
        }
        if lambda_n > 0.0 && anchor.is_none() {
            return Err(Error::InvalidParam("lambda_n > 0 requires an anchor".into()));
        }
        if target.norm() <= MIN_NORM {
            return Err(Error::ZeroNorm);
        }
        let d = target.dim();
        if let Some(a) = &anchor {
            check_pair(&target, a)?;
            if a.norm() <= MIN_NORM {
                return Err(Error::ZeroNorm);
            }
        }
        if let Some(s) = &stats {
            if s.dim() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    actual: s.dim(),
                });
            }
        }
        Ok(Self {
            target,
            lambda_m,
            lambda_n,
            anchor,
            stats,
        })
    }

    /// Pure text-alignment objective.
    pub fn unconstrained(target: EmbeddingVector) -> Result<Self> {
        Self::new(target, 0.0, 0.0, None, None)
    }

    pub fn target(&self) -> &EmbeddingVector {
        &self.target
    }

    pub fn anchor(&self) -> Option<&EmbeddingVector> {
        self.anchor.as_ref()
    }

    pub fn stats(&self) -> Option<&GaussianStats> {
        self.stats.as_deref()
    }

    pub fn lambda_m(&self) -> f64 {
        self.lambda_m
    }

    pub fn lambda_n(&self) -> f64 {
        self.lambda_n
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// True when every active term depends only on the direction of `z`.
    pub fn is_scale_invariant(&self) -> bool {
        self.lambda_m == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ovi: f64,
    /// Present when stats are supplied, whatever the weight.
    pub mahalanobis: Option<f64>,
    /// Present when an anchor is supplied, whatever the weight.
    pub neighbor: Option<f64>,
    pub grad: EmbeddingVector,
}

pub fn total_loss(z: &EmbeddingVector, spec: &LossSpec) -> Result<LossBreakdown> {
    let (ovi, ovi_grad) = ovi_loss(z, &spec.target)?;
    let mut grad = ovi_grad.into_vec();
    let mut total = ovi;

    let mahalanobis = match &spec.stats {
        Some(stats) => {
            let m = stats.mahalanobis_grad(z)?;
            if spec.lambda_m > 0.0 {
                total += spec.lambda_m * m.distance;
                linalg::axpy(spec.lambda_m, m.grad.as_slice(), &mut grad);
            }
            Some(m.distance)
        }
        None => None,
    };
    let neighbor = match &spec.anchor {
        Some(anchor) => {
            let (n, g) = neighbor_loss(z, anchor)?;
            if spec.lambda_n > 0.0 {
                total += spec.lambda_n * n;
                linalg::axpy(spec.lambda_n, g.as_slice(), &mut grad);
            }
            Some(n)
        }
        None => None,
    };
    Ok(LossBreakdown {
        total,
        ovi,
        mahalanobis,
        neighbor,
        grad: EmbeddingVector::new(grad)?,
    })
}
