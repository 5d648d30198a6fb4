// Pseudo-token count through a frozen random linear encoder.
//
// With `frozen_linear` the tokens live in a smaller space than the
// embedding. Whatever the token count, the latent can only reach the map's
// column space, so alignment with a generic target levels off near
// sqrt(d_tok / d_emb).
//
// `cargo run --example token_sweep`

use ovi_prior::inversion::run_sweep;
use ovi_prior::{EmbeddingVector, Inputs, ParamKind, RunSettings, SweepAxis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = EmbeddingVector::new((0..256).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    let base = RunSettings {
        kind: ParamKind::FrozenLinear,
        d_tok: Some(32),
        steps: 500,
        ..RunSettings::default()
    };
    let entries = run_sweep(
        &base,
        &Inputs::new(target),
        SweepAxis::NTokens,
        &[1.0, 3.0, 6.0, 9.0],
        4,
    )?;
    println!("subspace reference: {:.4}", (32.0f64 / 256.0).sqrt());
    for e in entries {
        println!(
            "{:>2} tokens: sim_target {:.4}",
            e.value,
            e.result?.final_record().sim_target
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
