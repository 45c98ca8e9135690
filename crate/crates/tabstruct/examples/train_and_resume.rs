//! A short training run that checkpoints halfway and resumes; the resumed
//! log continues the uninterrupted one exactly.
//!
//! `cargo run --release --example train_and_resume`

use candle_core::Device;
use tabstruct::core::datagen::generate;
use tabstruct::train::{ExperimentConfig, StepLog, Trainer};

fn logs(trainer: &mut Trainer, ckpt: Option<&std::path::Path>) -> tabstruct::Result<Vec<StepLog>> {
    let mut buf = Vec::new();
    trainer.run(&mut buf, ckpt)?;
    Ok(String::from_utf8(buf)
        .expect("utf-8 log")
        .lines()
        .map(|l| serde_json::from_str(l).expect("step log line"))
        .collect())
}

fn main() -> tabstruct::Result<()> {
    let mut config = ExperimentConfig::desk();
    config.train.n_train = 16;
    config.train.max_steps = Some(8);
    let samples = generate(&config.data, config.train.n_train)?;

    let straight = logs(
        &mut Trainer::new(config.clone(), &samples, &Device::Cpu)?,
        None,
    )?;

    let dir = std::env::temp_dir().join("tabstruct_resume_example");
    let ckpt = dir.join("checkpoint.safetensors");
    let mut half = config.clone();
    half.train.max_steps = Some(4);
    let mut first = logs(
        &mut Trainer::new(half, &samples, &Device::Cpu)?,
        Some(&ckpt),
    )?;
    let mut resumed = Trainer::resume(config, &samples, &ckpt, &Device::Cpu)?;
    first.extend(logs(&mut resumed, None)?);

    for (a, b) in straight.iter().zip(&first) {
        println!(
            "step {}  loss {:.5}  resumed {:.5}  l_s {:.4}  l_c {:.4}  l_va {:.4}",
            a.step,
            a.loss,
            b.loss,
            a.l_s,
            a.l_c,
            a.l_va.unwrap_or(f64::NAN)
        );
    }
    assert_eq!(straight, first);
    println!("checkpoint at {}", ckpt.display());
    Ok(())
}
