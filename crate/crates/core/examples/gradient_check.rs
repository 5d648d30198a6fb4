// Finite-difference verification of every analytic gradient.
//
// `cargo run --example gradient_check -- 64`

use ovi_prior::gradcheck::{self, Fault};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    check(std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(16))
}

fn check(dim: usize) -> Result<(), Box<dyn std::error::Error>> {
    let report = gradcheck::run(dim, 20, 0, Fault::None)?;
    print!("{}", report.to_table());
    if !report.passed() {
        return Err("gradient mismatch".into());
    }
    let broken = gradcheck::run(dim, 2, 0, Fault::SignFlip)?;
    println!(
        "with a flipped sign the check {}",
        if broken.passed() {
            "passes (bad)"
        } else {
            "fails, as it should"
        }
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
