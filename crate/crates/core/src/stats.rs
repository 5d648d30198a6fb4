//! Reference-distribution statistics and the Mahalanobis penalty.
//!
//! The covariance is estimated with the unbiased `n − 1` normalization and
//! shrunk toward a scaled identity,
//!
//! ```text
//! Σ_reg = (1 − s)·Σ_sample + s·(tr(Σ_sample)/d)·I
//! ```
//!
//! and only its Cholesky factor `L` (`L Lᵀ = Σ_reg`) is kept. `Σ⁻¹ v` is two
//! triangular solves; no explicit inverse is ever formed.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{self, EmbeddingMatrix, EmbeddingVector};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const DEFAULT_SHRINKAGE: f64 = 0.01;

/// Distances closer than this to the mean get the zero subgradient.
pub const DEGENERATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    mean: EmbeddingVector,
    cov_factor: Matrix,
    shrinkage: f64,
    sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSidecar {
    pub shrinkage: f64,
    pub sample_count: usize,
}

/// Result of [`GaussianStats::mahalanobis_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisGrad {
    pub distance: f64,
    pub grad: EmbeddingVector,
    /// `z` sat on the mean; `grad` is the zero subgradient.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceProfile {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

impl GaussianStats {
    /// Estimates mean and shrunk covariance from the rows of `data`.
    pub fn estimate(data: &EmbeddingMatrix, shrinkage: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&shrinkage) {
            return Err(Error::InvalidParam(format!("shrinkage {shrinkage} outside [0, 1]")));
        }
        let n = data.rows();
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, actual: n });
        }
        let d = data.dim();
        let samples = Matrix::from_vec(n, d, data.as_slice().to_vec())?;
        let mean = samples.column_mean();

        let centered: Vec<f64> = samples
            .as_slice()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m))
            .collect();

        // Lower triangle of Σ_sample, one output row per task. Each entry is a
        // sum over samples in index order, so the result does not depend on
        // how rayon schedules rows.
        let mut cov = Matrix::zeros(d, d);
        cov.as_mut_slice()
            .par_chunks_exact_mut(d)
            .enumerate()
            .for_each(|(i, out)| {
                let acc = &mut out[..=i];
                for x in centered.chunks_exact(d) {
                    linalg::axpy(x[i], &x[..=i], acc);
                }
            });
        let denom = (n - 1) as f64;
        let trace: f64 = (0..d).map(|i| cov.get(i, i) / denom).sum();
        let iso = trace / d as f64;
        for i in 0..d {
            for j in 0..=i {
                let sample = cov.get(i, j) / denom;
                let mut v = (1.0 - shrinkage) * sample;
                if i == j {
                    v += shrinkage * iso;
                }
                cov.set(i, j, v);
            }
        }
        linalg::cholesky_in_place(&mut cov)?;
        Ok(Self {
            mean: EmbeddingVector::new(mean)?,
            cov_factor: cov,
            shrinkage,
            sample_count: n,
        })
    }

    /// Builds stats from an explicit symmetric covariance (lower triangle read).
    pub fn from_covariance(mean: EmbeddingVector, mut covariance: Matrix) -> Result<Self> {
        if covariance.shape() != (mean.dim(), mean.dim()) {
            return Err(Error::DimMismatch {
                expected: mean.dim(),
                actual: covariance.rows(),
            });
        }
        linalg::cholesky_in_place(&mut covariance)?;
        Ok(Self {
            mean,
            cov_factor: covariance,
            shrinkage: 0.0,
            sample_count: 0,
        })
    }

    /// Wraps an existing lower-triangular factor after validating it.
    pub fn from_factor(mean: EmbeddingVector, cov_factor: Matrix, shrinkage: f64, sample_count: usize) -> Result<Self> {
        let d = mean.dim();
        if cov_factor.shape() != (d, d) {
            return Err(Error::DimMismatch {
                expected: d,
                actual: cov_factor.rows(),
            });
        }
        for i in 0..d {
            if cov_factor.get(i, i).is_nan() || cov_factor.get(i, i) <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: i });
            }
            if cov_factor.row(i)[i + 1..].iter().any(|&v| v != 0.0) {
                return Err(Error::Shape(format!("factor row {i} has entries above the diagonal")));
            }
        }
        if !cov_factor.is_finite() {
            return Err(Error::NonFinite { row: 0 });
        }
        Ok(Self {
            mean,
            cov_factor,
            shrinkage,
            sample_count,
        })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::from_factor(EmbeddingVector::zeros(dim)?, Matrix::identity(dim), 0.0, 0)
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn mean(&self) -> &EmbeddingVector {
        &self.mean
    }

    pub fn cov_factor(&self) -> &Matrix {
        &self.cov_factor
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// `Σ_reg = L Lᵀ`, reconstructed densely. Diagnostic use only.
    pub fn covariance(&self) -> Matrix {
        let d = self.dim();
        let l = &self.cov_factor;
        let mut out = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let v = linalg::dot(&l.row(i)[..=j], &l.row(j)[..=j]);
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }

    fn check_dim(&self, z: &EmbeddingVector) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: z.dim(),
            });
        }
        Ok(())
    }

    fn whiten(&self, z: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = z.iter().zip(self.mean.as_slice()).map(|(a, b)| a - b).collect();
        linalg::solve_lower(&self.cov_factor, &diff)
    }

    pub fn mahalanobis(&self, z: &EmbeddingVector) -> Result<f64> {
        self.check_dim(z)?;
        Ok(linalg::norm(&self.whiten(z.as_slice())))
    }

    /// Distance and its gradient `Σ⁻¹(z − μ) / d`.
    pub fn mahalanobis_grad(&self, z: &EmbeddingVector) -> Result<MahalanobisGrad> {
        self.check_dim(z)?;
        let u = self.whiten(z.as_slice());
        let distance = linalg::norm(&u);
        if distance <= DEGENERATE_TOLERANCE {
            return Ok(MahalanobisGrad {
                distance,
                grad: EmbeddingVector::zeros(self.dim())?,
                degenerate: true,
            });
        }
        let mut w = linalg::solve_lower_transposed(&self.cov_factor, &u);
        w.iter_mut().for_each(|v| *v /= distance);
        Ok(MahalanobisGrad {
            distance,
            grad: EmbeddingVector::new(w)?,
            degenerate: false,
        })
    }

    /// Summary of distances over every row of `data`.
    pub fn profile(&self, data: &EmbeddingMatrix) -> Result<DistanceProfile> {
        if data.rows() == 0 {
            return Err(Error::TooFewRows { needed: 1, actual: 0 });
        }
        if data.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: data.dim(),
            });
        }
        let distances: Vec<f64> = data
            .as_slice()
            .par_chunks_exact(data.dim())
            .map(|row| linalg::norm(&self.whiten(row)))
            .collect();
        let n = distances.len() as f64;
        let mean = distances.iter().sum::<f64>() / n;
        let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        Ok(DistanceProfile {
            mean,
            stddev: var.sqrt(),
            min: distances.iter().copied().fold(f64::INFINITY, f64::min),
            max: distances.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let paths = StatsPaths::new(prefix);
        embedding_store::write_vector(&self.mean, &paths.mean)?;
        let d = self.dim();
        let factor = EmbeddingMatrix::new(d, d, self.cov_factor.as_slice().to_vec(), None)?;
        embedding_store::write_matrix(&factor, &paths.factor)?;
        let sidecar = StatsSidecar {
            shrinkage: self.shrinkage,
            sample_count: self.sample_count,
        };
        let text = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&paths.sidecar, text + "\n").map_err(|e| Error::io(&paths.sidecar, e))
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let paths = StatsPaths::new(prefix);
        let mean = embedding_store::read_vector(&paths.mean)?;
        let factor = embedding_store::read_matrix(&paths.factor)?;
        let text = std::fs::read_to_string(&paths.sidecar).map_err(|e| Error::io(&paths.sidecar, e))?;
        let sidecar: StatsSidecar = serde_json::from_str(&text)?;
        let l = Matrix::from_vec(factor.rows(), factor.dim(), factor.as_slice().to_vec())?;
        Self::from_factor(mean, l, sidecar.shrinkage, sidecar.sample_count)
    }
}

/// File names derived from a stats prefix.
#[derive(Debug, Clone)]
pub struct StatsPaths {
    pub mean: PathBuf,
    pub factor: PathBuf,
    pub sidecar: PathBuf,
}

impl StatsPaths {
    pub fn new(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref().as_os_str().to_owned();
        let with = |suffix: &str| {
            let mut s = p.clone();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self {
            mean: with(".mean.emb"),
            factor: with(".chol.emb"),
            sidecar: with(".stats.json"),
        }
    }
}

pub fn estimate_stats(data: &EmbeddingMatrix, shrinkage: f64) -> Result<GaussianStats> {
    GaussianStats::estimate(data, shrinkage)
}

pub fn mahalanobis(stats: &GaussianStats, z: &EmbeddingVector) -> Result<f64> {
    stats.mahalanobis(z)
}

pub fn mahalanobis_grad(stats: &GaussianStats, z: &EmbeddingVector) -> Result<MahalanobisGrad> {
    stats.mahalanobis_grad(z)
}

pub fn sample_mahalanobis_profile(stats: &GaussianStats, data: &EmbeddingMatrix) -> Result<DistanceProfile> {
    stats.profile(data)
}
