//! Overfits the desk model on a handful of synthetic tables and reports
//! structure and box quality on the same tables as training progresses.
//!
//! `cargo run --release --example overfit -- [n_tables] [max_steps]`

use candle_core::Device;
use tabstruct::core::datagen::generate;
use tabstruct::eval::{evaluate_predictions, predict_all, MetricSelection};
use tabstruct::infer::DecodeOptions;
use tabstruct::train::{ExperimentConfig, Trainer};

fn main() -> tabstruct::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let n = args.first().copied().unwrap_or(50);
    let max_steps = args.get(1).copied().unwrap_or(2000) as u64;
    let mut config = ExperimentConfig::desk();
    config.train.max_steps = Some(max_steps);
    config.train.epochs = 100_000;
    config.optim.milestones =
        vec![(max_steps as usize * 7 / 10).div_ceil(n.div_ceil(config.train.batch_size))];
    let samples = generate(&config.data, n)?;
    let mut trainer = Trainer::new(config, &samples, &Device::Cpu)?;
    let sel = MetricSelection {
        car: false,
        grits: false,
        ..MetricSelection::default()
    };
    let mut sink = std::io::sink();
    while trainer.step < max_steps {
        let chunk = (trainer.step + 250).min(max_steps);
        trainer.config.train.max_steps = Some(chunk);
        let summary = trainer.run(&mut sink, None)?;
        let preds = predict_all(&trainer.model, &samples, DecodeOptions::default())?;
        let report = evaluate_predictions(&preds, &samples, &sel)?;
        let a = &report.aggregate;
        let last = summary.last.expect("at least one step");
        println!(
            "step {:5}  loss {:.4}  l_s {:.4}  l_c {:.4}  s-teds {:.4}  ap50 {:.4}  exact {:.2}",
            trainer.step,
            last.loss,
            last.l_s,
            last.l_c,
            a.s_teds.unwrap_or(0.0),
            a.ap50.unwrap_or(0.0),
            a.structure_accuracy
        );
    }
    Ok(())
}
