//! Training-free embedding prior by optimization.
//!
//! Given a target embedding (typically a text embedding), a latent built
//! from learnable pseudo-tokens is optimized to maximize cosine alignment
//! with it. Two optional regularizers pull the result toward a reference
//! embedding distribution: a Mahalanobis penalty against precomputed
//! statistics, and a cosine penalty toward the target's nearest reference
//! neighbor.
//!
//! ```
//! use ovi_prior::{invert, EmbeddingVector, Inputs, RunSettings};
//!
//! let target = EmbeddingVector::new(vec![0.3, -1.0, 2.0, 0.5]).unwrap();
//! let settings = RunSettings { steps: 300, ..RunSettings::direct() };
//! let result = invert(&settings, &Inputs::new(target)).unwrap();
//! assert!(result.final_record().sim_target > 0.99);
//! ```

pub mod cli;
pub mod embedding_store;
pub mod error;
pub mod gradcheck;
pub mod inversion;
pub mod linalg;
pub mod losses;
pub mod nn_index;
pub mod optimizers;
pub mod parametrization;
pub mod stats;

pub use embedding_store::{EmbeddingMatrix, EmbeddingVector};
pub use error::{Error, Result};
pub use inversion::{
    collapse_diagnostic, invert, invert_observed, run_inversion, run_sweep, AnchorSource, Inputs, RunConfig, RunResult,
    RunSettings, StopReason, StopRule, SweepAxis, TrajectoryRecord,
};
pub use linalg::Matrix;
pub use losses::{cosine_sim, neighbor_loss, ovi_loss, total_loss, LossBreakdown, LossSpec};
pub use nn_index::{CosineIndex, Neighbor};
pub use optimizers::{AdamWConfig, AdamWState, OptimizerConfig, SgdState};
pub use parametrization::{EncoderOracle, LatentState, ParamKind};
pub use stats::GaussianStats;
