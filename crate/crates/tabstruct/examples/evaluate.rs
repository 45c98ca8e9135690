//! Scores a checkpoint on held-out synthetic tables and writes JSON and CSV
//! reports. Without a checkpoint, scores the ground truth against itself.
//!
//! `cargo run --release --example evaluate -- [checkpoint] [n]`

use candle_core::Device;
use tabstruct::checkpoint;
use tabstruct::core::datagen::{generate, GenConfig};
use tabstruct::eval::{
    evaluate_predictions, evaluate_tables, ground_truth_table, predict_all, MetricSelection,
};
use tabstruct::infer::DecodeOptions;
use tabstruct::train::held_out;

fn main() -> tabstruct::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next();
    let n: usize = args
        .next()
        .map_or(20, |a| a.parse().expect("n is an integer"));
    let samples = generate(&held_out(&GenConfig::desk()), n)?;
    let sel = MetricSelection::default();
    let report = match ckpt {
        Some(path) => {
            let model = checkpoint::load(path.as_ref(), None, &Device::Cpu)?.model;
            let preds = predict_all(&model, &samples, DecodeOptions::default())?;
            evaluate_predictions(&preds, &samples, &sel)?
        }
        None => {
            let tables = samples
                .iter()
                .map(ground_truth_table)
                .collect::<tabstruct::Result<Vec<_>>>()?;
            evaluate_tables(&tables, &samples, &sel)?
        }
    };
    let out = std::env::temp_dir().join("tabstruct_eval_example");
    report.write(&out)?;
    println!("{}", serde_json::to_string_pretty(&report.aggregate)?);
    println!("reports in {}", out.display());
    Ok(())
}
