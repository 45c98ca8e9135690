//! Cross-attention overlays for every non-empty cell of a table whose rows
//! are misaligned, plus the predicted boxes and the share of attention that
//! falls inside each ground-truth cell.
//!
//! `cargo run --release --example visualize_attention -- [checkpoint]`

use candle_core::{DType, Device};
use tabstruct::checkpoint;
use tabstruct::core::datagen::{generate, GenConfig, VerticalAlign};
use tabstruct::data::model_view;
use tabstruct::infer::{
    attention_mass_inside, attention_overlay, attention_raster, draw_boxes, greedy_decode,
    DecodeOptions,
};
use tabstruct::model::{ModelConfig, TableModel};

fn main() -> tabstruct::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => checkpoint::load(path.as_ref(), None, &Device::Cpu)?.model,
        None => TableModel::new(ModelConfig::desk(), 0, DType::F32, &Device::Cpu)?,
    };
    let config = GenConfig {
        vertical_align: VerticalAlign::Random,
        ..GenConfig::desk()
    };
    let sample = generate(&config, 1)?.remove(0);
    let opts = DecodeOptions {
        record_attention: true,
        ..DecodeOptions::default()
    };
    let pred = greedy_decode(&model, &sample.image, opts)?;
    let side = model.config.image_side;
    let canvas = model_view(&sample.image, side);

    let out = std::env::temp_dir().join("tabstruct_attention_example");
    std::fs::create_dir_all(&out)?;
    draw_boxes(&canvas, &pred.boxes, [220, 30, 30]).save(out.join("boxes.png"))?;
    let gt: Vec<_> = sample
        .grid
        .non_empty_cells()
        .filter_map(|c| c.content_bbox)
        .collect();
    for (i, step) in pred.attention_maps.iter().flatten().enumerate() {
        attention_overlay(&canvas, &attention_raster(&step.weights)?)
            .save(out.join(format!("cell_{i:03}.png")))?;
        if let Some(b) = gt.get(i) {
            println!(
                "cell {i}: {:.3} of attention inside the cell",
                attention_mass_inside(&step.weights, side as f32, b)
            );
        }
    }
    println!("overlays in {}", out.display());
    Ok(())
}
