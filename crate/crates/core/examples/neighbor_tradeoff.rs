// Trading text alignment for closeness to the nearest reference image.
//
// The anchor is the target's nearest row in a reference set; raising
// `lambda_n` moves the result from the target toward that anchor.
//
// `cargo run --example neighbor_tradeoff`

use ovi_prior::inversion::run_sweep;
use ovi_prior::{CosineIndex, EmbeddingMatrix, EmbeddingVector, Inputs, RunSettings, SweepAxis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let (d, rows) = (64, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gauss = |k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(&mut rng)).collect() };

    let index = CosineIndex::build(EmbeddingMatrix::new(rows, d, gauss(rows * d), None)?)?;
    let target = EmbeddingVector::new(gauss(d))?;
    let nearest = index.query(&target, 1)?[0];
    let anchor = index.anchor_for(&target, 1)?;
    println!(
        "nearest reference row {} at cosine {:.3}",
        nearest.row_id, nearest.similarity
    );

    let inputs = Inputs::new(target).with_anchor(anchor);
    let entries = run_sweep(
        &RunSettings::default(),
        &inputs,
        SweepAxis::LambdaN,
        &[0.0, 0.5, 4.0],
        3,
    )?;
    for e in entries {
        let s = e.result?.summary();
        println!(
            "lambda_n {:>3}: sim_target {:.3}  sim_anchor {:.3}  neighbor loss {:.4}",
            e.value,
            s.sim_target,
            s.sim_anchor.unwrap_or(f64::NAN),
            s.neighbor.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
