// Exact cosine top-k over a labeled reference set.
//
// `cargo run --example nearest_neighbor`

use ovi_prior::{CosineIndex, EmbeddingMatrix, EmbeddingVector};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let labels = ["kitchen", "bedroom", "beach", "forest", "empty"];
    let rows = vec![
        0.9, 0.1, 0.0, //
        0.7, 0.7, 0.0, //
        0.0, 0.2, 1.0, //
        0.1, 0.0, 0.8, //
        0.0, 0.0, 0.0,
    ];
    let data = EmbeddingMatrix::new(5, 3, rows, Some(labels.iter().map(|s| s.to_string()).collect()))?;
    let index = CosineIndex::build(data)?;
    println!("indexed {} rows, dropped {} of zero norm", index.len(), index.dropped());

    let query = EmbeddingVector::new(vec![1.0, 0.4, 0.1])?;
    for (rank, hit) in index.query(&query, 3)?.iter().enumerate() {
        println!("{}. {:<8} cosine {:.4}", rank + 1, labels[hit.row_id], hit.similarity);
    }
    println!("anchor (k=2 mean): {:?}", index.anchor_for(&query, 2)?.as_slice());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
