//! Renders synthetic tables and writes them as a JSONL dataset with PNG
//! images, then reads the dataset back.
//!
//! `cargo run --release --example generate_dataset -- [out_dir] [n]`

use std::path::PathBuf;

use tabstruct::core::datagen::{generate, GenConfig, VerticalAlign};
use tabstruct::core::dataset::{export_dataset, load_dataset, DatasetStats};

fn main() -> tabstruct::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_tables".into()));
    let n: usize = args
        .next()
        .map_or(20, |a| a.parse().expect("n is an integer"));

    let config = GenConfig {
        seed: 7,
        p_span: 0.2,
        vertical_align: VerticalAlign::Random,
        ..GenConfig::desk()
    };
    let samples = generate(&config, n)?;
    let path = export_dataset(&samples, &out, config.max_span)?;
    let stats = DatasetStats::from_samples(&samples, config.max_span)?;
    println!("wrote {}", path.display());
    println!("{}", serde_json::to_string_pretty(&stats)?);

    let back = load_dataset(&out)?;
    assert_eq!(back.len(), samples.len());
    let first = &back[0];
    println!(
        "first table: {} rows x {} cols, {} non-empty cells, {} text lines",
        first.grid.n_rows(),
        first.grid.n_cols(),
        first.grid.non_empty_cells().count(),
        first.text_lines.len()
    );
    Ok(())
}
