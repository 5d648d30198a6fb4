// Evaluating a final latent through an external encoder process.
//
// The encoder speaks one JSON object per line: it reads
// `{"tokens": [[...], ...]}` and answers `{"embedding": [...]}`. By default
// this example starts the bundled echo encoder (`ovi echo-encoder`); pass
// another command to use your own.
//
// `cargo build && cargo run --example external_encoder [-- program args...]`

use std::path::PathBuf;

use ovi_prior::{EncoderOracle, LatentState, ParamKind};

pub fn run_example(program: &str, args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let latent = LatentState::init(ParamKind::MeanAggregate, 6, 8, 8, 42)?;
    let mut oracle = EncoderOracle::spawn(program, args)?;
    let encoded = oracle.encode(latent.tokens())?;
    let local = latent.forward()?;
    println!(
        "encoder {} answered with dimension {:?}",
        oracle.endpoint(),
        oracle.dim()
    );
    println!("local   {:?}", local.as_slice());
    println!("encoded {:?}", encoded.as_slice());
    Ok(())
}

fn bundled_cli() -> PathBuf {
    // target/<profile>/examples/<this> -> target/<profile>/ovi
    let exe = std::env::current_exe().expect("current executable");
    exe.parent()
        .and_then(|p| p.parent())
        .expect("examples directory")
        .join("ovi")
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let program = if args.is_empty() {
        args.push("echo-encoder".into());
        bundled_cli().to_string_lossy().into_owned()
    } else {
        args.remove(0)
    };
    run_example(&program, &args)
}
