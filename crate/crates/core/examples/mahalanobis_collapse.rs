// A strong Mahalanobis weight drags every inversion toward the reference
// mean, so distinct targets end up with nearly the same embedding.
//
// `cargo run --example mahalanobis_collapse`

use std::sync::Arc;

use ovi_prior::{collapse_diagnostic, invert, EmbeddingMatrix, EmbeddingVector, GaussianStats, Inputs, RunSettings};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (d, n) = (32, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mean: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();

    // anisotropic reference cloud away from the origin
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for (j, m) in mean.iter().enumerate() {
            data.push(Normal::new(2.0 * m, 2.0 * 0.9f64.powi(j as i32))?.sample(&mut rng));
        }
    }
    let stats = Arc::new(GaussianStats::estimate(&EmbeddingMatrix::new(n, d, data, None)?, 0.01)?);
    let targets = (0..6)
        .map(|_| EmbeddingVector::new((0..d).map(|_| StandardNormal.sample(&mut rng)).collect()))
        .collect::<Result<Vec<_>, _>>()?;

    for lambda_m in [0.0, 0.05, 0.5, 10.0] {
        let mut finals = Vec::new();
        let mut dist = 0.0;
        let mut align = 0.0;
        for (seed, t) in targets.iter().enumerate() {
            let settings = RunSettings {
                lambda_m,
                seed: seed as u64,
                steps: 600,
                ..RunSettings::default()
            };
            let r = invert(&settings, &Inputs::new(t.clone()).with_stats(stats.clone()))?;
            dist += r.final_record().loss_mahalanobis.unwrap_or(0.0);
            align += r.final_record().sim_target;
            finals.push(r.final_embedding);
        }
        let k = targets.len() as f64;
        println!(
            "lambda_m {lambda_m:>5}: sim_target {:.3}  mahalanobis {:>7.3}  pairwise cosine {:.3}",
            align / k,
            dist / k,
            collapse_diagnostic(&finals)?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
