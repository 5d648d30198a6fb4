// The binary embedding format, CSV import, and trajectory output.
//
// `cargo run --example embedding_files`

use ovi_prior::embedding_store::{parse_csv, read_matrix, write_matrix, write_trajectory};
use ovi_prior::{invert, Inputs, RunSettings};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let csv = "red,1.0,0.0,0.1\ngreen,0.0,1.0,0.1\nblue,0.1,0.0,1.0\n";
    let m = parse_csv(csv, true)?;
    let path = dir.path().join("colors.emb");
    write_matrix(&m, &path)?;

    let bytes = std::fs::read(&path)?;
    let header_len = u64::from_le_bytes(bytes[4..12].try_into()?) as usize;
    println!("magic {:?}", std::str::from_utf8(&bytes[..4])?);
    println!("header {}", std::str::from_utf8(&bytes[12..12 + header_len])?);
    println!("payload {} bytes", bytes.len() - 12 - header_len);

    let back = read_matrix(&path)?;
    assert_eq!(back, m.quantized());
    println!(
        "read back {}x{} with labels {:?}",
        back.rows(),
        back.dim(),
        back.labels().unwrap()
    );

    let settings = RunSettings {
        steps: 40,
        log_every: 10,
        ..RunSettings::direct()
    };
    let result = invert(&settings, &Inputs::new(back.row_vector(0)))?;
    let traj = dir.path().join("run.trajectory.csv");
    write_trajectory(&result.trajectory, &traj)?;
    print!("{}", std::fs::read_to_string(traj)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
