// Plain inversion: align a latent with a target embedding.
//
// `cargo run --example unconstrained`

use ovi_prior::{invert, EmbeddingVector, Inputs, RunSettings};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let target = EmbeddingVector::new((0..1280).map(|_| StandardNormal.sample(&mut rng)).collect())?;

    let settings = RunSettings {
        log_every: 100,
        ..RunSettings::direct()
    };
    let result = invert(&settings, &Inputs::new(target))?;
    for rec in &result.trajectory {
        println!("step {:>4}  sim_target {:.6}", rec.step, rec.sim_target);
    }
    assert!(result.final_record().sim_target > 0.999);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
