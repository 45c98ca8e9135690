//! Greedy decoding of one table image: HTML tokens, then all cell boxes in
//! one batched pass. Uses a checkpoint if given, else an untrained model.
//!
//! `cargo run --release --example infer -- [checkpoint] [image.png]`

use candle_core::{DType, Device};
use tabstruct::checkpoint;
use tabstruct::core::datagen::{generate, GenConfig};
use tabstruct::core::postproc::{assemble_html, cell_texts};
use tabstruct::infer::{greedy_decode, DecodeOptions};
use tabstruct::model::{ModelConfig, TableModel};

fn main() -> tabstruct::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(path) => checkpoint::load(path.as_ref(), None, &Device::Cpu)?.model,
        None => TableModel::new(ModelConfig::desk(), 0, DType::F32, &Device::Cpu)?,
    };
    let sample = generate(&GenConfig::desk(), 1)?.remove(0);
    let image = match args.next() {
        Some(path) => image::open(path)?.to_rgb8(),
        None => sample.image.clone(),
    };
    let pred = greedy_decode(&model, &image, DecodeOptions::default())?;
    println!("{}", pred.tokens.to_strings().join(" "));
    for (b, s) in pred.boxes.iter().zip(&pred.scores) {
        println!("box {:?} score {s:.3}", b.to_array());
    }
    if pred.truncated {
        println!("(stopped at the length limit)");
    }
    let texts = cell_texts(&pred.boxes, &sample.text_lines);
    println!("{}", assemble_html(&pred.tokens, &texts));
    Ok(())
}
