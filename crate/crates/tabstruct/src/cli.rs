//! Command-line entry points. The binary only parses arguments and calls
//! [`run`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tabstruct_core::datagen::{generate, Sample};
use tabstruct_core::dataset::{export_dataset, load_dataset, DatasetStats};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_predictions, predict_all, MetricSelection};
use crate::infer::{attention_overlay, attention_raster, draw_boxes, greedy_decode, DecodeOptions};
use crate::train::{held_out, Ablation, ExperimentConfig, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "tabstruct",
    version,
    about = "Table structure recognition: data, training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset (JSONL plus PNG images).
    Generate(GenerateArgs),
    /// Train a model; writes the checkpoint, resolved config and step log.
    Train(TrainArgs),
    /// Decode a dataset with a checkpoint and score it.
    Eval(EvalArgs),
    /// Predict the structure and cell boxes of one image.
    Infer(InferArgs),
    /// Box overlay and per-cell cross-attention overlays for one image.
    Visualize(InferArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML experiment file; missing keys take the preset's values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override any config key, e.g. `--set train.batch_size=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of tables; defaults to `train.n_train`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Draw from the held-out stream instead of the training one.
    #[arg(long)]
    pub held_out: bool,
    /// Overwrite an existing dataset.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset directory or JSONL file; generated from the config if absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Ablation row: 1 = RD, 2 = CSD, 3 = CSD with visual alignment.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub ablation: Option<u8>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to score; the held-out stream of the training config if absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of generated tables when `--data` is absent.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of teds, car, ap, grits.
    #[arg(long, value_delimiter = ',', default_value = "teds,car,ap,grits")]
    pub metrics: Vec<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Applies `key.path=value` overrides to a serialized config. Values are
/// parsed as TOML and fall back to plain strings.
pub fn apply_overrides(
    config: &ExperimentConfig,
    overrides: &[String],
) -> Result<ExperimentConfig> {
    let mut tree = toml::Value::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not KEY=VALUE")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (leaf, path) = parts.split_last().expect("split yields at least one part");
        let mut node = &mut tree;
        for part in path {
            node = node
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        // Unknown leaf keys are caught when the tree is deserialized.
        node.as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a config field")))?
            .insert(leaf.to_string(), value);
    }
    let text = toml::to_string(&tree).map_err(|e| Error::Config(e.to_string()))?;
    ExperimentConfig::from_toml(&text)
}

pub fn resolve_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => match args.preset {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Full => ExperimentConfig::full(),
        },
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.data.seed = seed;
    }
    let config = apply_overrides(&config, &args.overrides)?;
    config.validate()?;
    Ok(config)
}

fn config_from_checkpoint(path: &Path) -> Result<(checkpoint::Loaded, Option<ExperimentConfig>)> {
    let loaded = checkpoint::load(path, None, &Device::Cpu)?;
    let experiment = loaded
        .experiment
        .as_deref()
        .map(serde_json::from_str::<ExperimentConfig>)
        .transpose()?;
    Ok((loaded, experiment))
}

fn read_image(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<DatasetStats> {
    let config = resolve_config(&args.config)?;
    let jsonl = args.out.join("dataset.jsonl");
    if jsonl.exists() && !args.force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            jsonl.display()
        )));
    }
    let data = if args.held_out {
        held_out(&config.data)
    } else {
        config.data.clone()
    };
    let samples = generate(&data, args.n.unwrap_or(config.train.n_train))?;
    export_dataset(&samples, &args.out, data.max_span)?;
    Ok(DatasetStats::from_samples(&samples, data.max_span)?)
}

pub fn cmd_train(args: &TrainArgs) -> Result<crate::train::RunSummary> {
    let mut config = resolve_config(&args.config)?;
    if let Some(row) = args.ablation {
        config.ablation = Ablation::row(row);
    }
    if let Some(m) = args.max_steps {
        config.train.max_steps = Some(m);
    }
    config.validate()?;
    let samples: Vec<Sample> = match &args.data {
        Some(path) => load_dataset(path)?,
        None => generate(&config.data, config.train.n_train)?,
    };
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), config.to_toml())?;
    let ckpt = args.out.join("checkpoint.safetensors");
    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(config, &samples, path, &Device::Cpu)?,
        None => Trainer::new(config, &samples, &Device::Cpu)?,
    };
    let log = File::options()
        .create(true)
        .append(args.resume.is_some())
        .write(true)
        .truncate(args.resume.is_none())
        .open(args.out.join("train.jsonl"))?;
    let mut log = BufWriter::new(log);
    let summary = trainer.run(&mut log, Some(&ckpt))?;
    log.flush()?;
    Ok(summary)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<crate::eval::Report> {
    let (loaded, experiment) = config_from_checkpoint(&args.checkpoint)?;
    let samples = match &args.data {
        Some(path) => load_dataset(path)?,
        None => {
            let e = experiment.ok_or_else(|| {
                Error::Config("checkpoint stores no experiment config; pass --data".into())
            })?;
            generate(&held_out(&e.data), args.n.unwrap_or(e.train.n_eval))?
        }
    };
    let mut sel = MetricSelection {
        teds: false,
        car: false,
        ap: false,
        grits: false,
        ..MetricSelection::default()
    };
    for m in &args.metrics {
        match m.trim() {
            "teds" => sel.teds = true,
            "car" => sel.car = true,
            "ap" => sel.ap = true,
            "grits" => sel.grits = true,
            other => return Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
    let side = loaded.model.config.image_side;
    if let Some(s) = samples
        .iter()
        .find(|s| s.image.dimensions() != (side, side))
    {
        return Err(Error::Config(format!(
            "dataset image is {:?} but the checkpoint expects {side}×{side}",
            s.image.dimensions()
        )));
    }
    let preds = predict_all(&loaded.model, &samples, DecodeOptions::default())?;
    let report = evaluate_predictions(&preds, &samples, &sel)?;
    report.write(&args.out)?;
    let mut f = BufWriter::new(File::create(args.out.join("predictions.jsonl"))?);
    for p in &preds {
        writeln!(f, "{}", serde_json::to_string(p)?)?;
    }
    f.flush()?;
    Ok(report)
}

pub fn cmd_infer(args: &InferArgs) -> Result<crate::infer::Prediction> {
    let loaded = checkpoint::load(&args.checkpoint, None, &Device::Cpu)?;
    let image = read_image(&args.image)?;
    let pred = greedy_decode(&loaded.model, &image, DecodeOptions::default())?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("prediction.json"), pred.to_json()?)?;
    Ok(pred)
}

/// Writes `boxes.png`, `prediction.json` and one `attention/cell_NNN.png`
/// per trigger token; returns the number of attention overlays.
pub fn cmd_visualize(args: &InferArgs) -> Result<usize> {
    let loaded = checkpoint::load(&args.checkpoint, None, &Device::Cpu)?;
    let image = read_image(&args.image)?;
    let opts = DecodeOptions {
        record_attention: true,
        ..DecodeOptions::default()
    };
    let pred = greedy_decode(&loaded.model, &image, opts)?;
    let side = loaded.model.config.image_side;
    let canvas = crate::data::model_view(&image, side);
    let dir = args.out.join("attention");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(args.out.join("prediction.json"), pred.to_json()?)?;
    draw_boxes(&canvas, &pred.boxes, [220, 30, 30]).save(args.out.join("boxes.png"))?;
    let maps = pred.attention_maps.unwrap_or_default();
    for (i, step) in maps.iter().enumerate() {
        let mut overlay = attention_overlay(&canvas, &attention_raster(&step.weights)?);
        if let Some(b) = pred.boxes.get(i) {
            overlay = draw_boxes(&overlay, std::slice::from_ref(b), [30, 200, 30]);
        }
        overlay.save(dir.join(format!("cell_{i:03}.png")))?;
    }
    Ok(maps.len())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let stats = cmd_generate(&a)?;
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            println!(
                "{}",
                serde_json::json!({ "steps": s.steps, "early_exit": s.early_exit, "last": s.last })
            );
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            println!("{}", serde_json::to_string_pretty(&report.aggregate)?);
        }
        Command::Infer(a) => {
            let p = cmd_infer(&a)?;
            println!("{}", p.to_json()?);
        }
        Command::Visualize(a) => {
            let n = cmd_visualize(&a)?;
            println!(
                "{n} attention overlays written to {}",
                a.out.join("attention").display()
            );
        }
    }
    Ok(())
}
