//! The three ablation rows (regression head, coordinate sequence head, and
//! the latter with visual alignment) trained on the same data with the same
//! budget, then scored on held-out tables.
//!
//! `cargo run --release --example ablation -- [steps] [n_eval]`

use candle_core::Device;
use tabstruct::core::datagen::generate;
use tabstruct::eval::{evaluate_predictions, predict_all, MetricSelection};
use tabstruct::infer::DecodeOptions;
use tabstruct::train::{held_out, Ablation, ExperimentConfig, Trainer};

fn main() -> tabstruct::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args
        .next()
        .map_or(200, |a| a.parse().expect("steps is an integer"));
    let n_eval: usize = args
        .next()
        .map_or(20, |a| a.parse().expect("n_eval is an integer"));
    let base = ExperimentConfig::desk();
    let train = generate(&base.data, base.train.n_train)?;
    let eval = generate(&held_out(&base.data), n_eval)?;
    let sel = MetricSelection {
        car: false,
        grits: false,
        ..MetricSelection::default()
    };
    for row in 1..=3 {
        let mut config = base.clone();
        config.ablation = Ablation::row(row);
        config.train.max_steps = Some(steps);
        let label = config.ablation.label();
        let mut trainer = Trainer::new(config, &train, &Device::Cpu)?;
        trainer.run(&mut std::io::sink(), None)?;
        let preds = predict_all(&trainer.model, &eval, DecodeOptions::default())?;
        let a = evaluate_predictions(&preds, &eval, &sel)?.aggregate;
        println!(
            "#{row} {label:<7} S-TEDS {:.4}  AP {:.4}  AP50 {:.4}",
            a.s_teds.unwrap_or(0.0),
            a.ap.unwrap_or(0.0),
            a.ap50.unwrap_or(0.0)
        );
    }
    Ok(())
}
