// Estimating, saving and reloading reference statistics.
//
// `cargo run --example reference_stats`

use ovi_prior::stats::{GaussianStats, StatsPaths};
use ovi_prior::{EmbeddingMatrix, EmbeddingVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (n, d) = (5000, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let data = EmbeddingMatrix::new(n, d, data, None)?;

    let stats = GaussianStats::estimate(&data, 0.01)?;
    let profile = stats.profile(&data)?;
    println!(
        "distance to the mean over the references: mean {:.2} (sqrt(d) = {:.2}), sd {:.2}, range {:.2}..{:.2}",
        profile.mean,
        (d as f64).sqrt(),
        profile.stddev,
        profile.min,
        profile.max
    );

    let dir = tempfile::tempdir()?;
    let prefix = dir.path().join("reference");
    stats.save(&prefix)?;
    let paths = StatsPaths::new(&prefix);
    println!(
        "wrote {}, {}, {}",
        paths.mean.display(),
        paths.factor.display(),
        paths.sidecar.display()
    );

    let loaded = GaussianStats::load(&prefix)?;
    let probe = EmbeddingVector::new(vec![0.5; d])?;
    println!(
        "mahalanobis of a probe: in memory {:.6}, reloaded {:.6}",
        stats.mahalanobis(&probe)?,
        loaded.mahalanobis(&probe)?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
