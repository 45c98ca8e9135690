//! Training loop, experiment configuration and logs.
//!
//! Every random choice is seeded: batch order comes from a stream keyed by
//! `(seed, epoch)` and dropout masks from one keyed by `(seed, step)`, so a
//! run resumed from a checkpoint replays exactly the batches and masks the
//! uninterrupted run would have used.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tabstruct_core::datagen::{GenConfig, Sample};

use crate::checkpoint::{self, Position};
use crate::data::{collate, prepare, Batch, Example};
use crate::error::{Error, Result};
use crate::losses::{
    batched_visual_alignment_loss, coordinate_loss, per_image_weights, regression_loss,
    structure_loss, total_loss, LossParts, LossWeights,
};
use crate::model::{CoordHead, ModelConfig, TableModel};
use crate::nn::Ctx;
use crate::optim::{AdamW, OptimConfig};

/// Setting this variable to anything but `0` requests deterministic
/// execution (single-threaded kernels).
pub const DETERMINISTIC_ENV: &str = "TABSTRUCT_DETERMINISTIC";

pub fn deterministic_requested() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

/// Ablation switches. The three published rows are `(RD, off)`,
/// `(CSD, off)` and `(CSD, on)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub head: CoordHead,
    pub va: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::row(3)
    }
}

impl Ablation {
    /// Row `1`, `2` or `3` of the ablation grid; anything else is the full model.
    pub fn row(n: u8) -> Self {
        match n {
            1 => Self {
                head: CoordHead::Rd,
                va: false,
            },
            2 => Self {
                head: CoordHead::Csd,
                va: false,
            },
            _ => Self {
                head: CoordHead::Csd,
                va: true,
            },
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.head, self.va) {
            (CoordHead::Rd, false) => "RD",
            (CoordHead::Rd, true) => "RD+VA",
            (CoordHead::Csd, false) => "CSD",
            (CoordHead::Csd, true) => "CSD+VA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Hard cap on optimizer steps, if any.
    pub max_steps: Option<u64>,
    /// Write a checkpoint every this many steps (and always at the end).
    pub checkpoint_every: Option<u64>,
    /// Stop once the moving average of the total loss falls below this.
    pub early_exit_loss: Option<f64>,
    /// Window of the moving average used for early exit.
    pub average_window: usize,
    /// Samples generated when training without a dataset on disk.
    pub n_train: usize,
    pub n_eval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 48,
            batch_size: 8,
            max_steps: None,
            checkpoint_every: None,
            early_exit_loss: None,
            average_window: 20,
            n_train: 500,
            n_eval: 100,
        }
    }
}

/// Generator settings for evaluation tables disjoint from the training set:
/// same distribution, different seed.
pub fn held_out(data: &GenConfig) -> GenConfig {
    GenConfig {
        seed: data.seed ^ 0x9e37_79b9_7f4a_7c15,
        ..data.clone()
    }
}

/// Everything that defines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: GenConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub ablation: Ablation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// CPU-scale run: 160 px tables and the small model.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            data: GenConfig::desk(),
            model: ModelConfig::desk(),
            loss: LossWeights::default(),
            optim: OptimConfig {
                lr: 5e-4,
                warmup_steps: 100,
                milestones: vec![40],
                ..OptimConfig::default()
            },
            train: TrainConfig::default(),
            ablation: Ablation::default(),
        }
    }

    /// Published hyper-parameters at full scale.
    pub fn full() -> Self {
        Self {
            seed: 0,
            data: GenConfig::default(),
            model: ModelConfig::full(),
            loss: LossWeights::default(),
            optim: OptimConfig {
                lr: 1e-4,
                milestones: vec![40],
                ..OptimConfig::default()
            },
            train: TrainConfig::default(),
            ablation: Ablation::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        if self.train.batch_size == 0 || self.train.average_window == 0 {
            return Err(Error::Config(
                "batch_size and average_window must be positive".into(),
            ));
        }
        if self.data.image_side != self.model.image_side {
            return Err(Error::Config(format!(
                "data.image_side {} differs from model.image_side {}",
                self.data.image_side, self.model.image_side
            )));
        }
        if self.data.max_span > self.model.max_span {
            return Err(Error::Config(format!(
                "data.max_span {} exceeds the vocabulary's {}",
                self.data.max_span, self.model.max_span
            )));
        }
        Ok(())
    }

    /// The model configuration with the ablation's coordinate head.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            coord_head: self.ablation.head,
            ..self.model.clone()
        }
    }
}

/// Teacher-forced forward pass and all loss components for one batch.
pub fn batch_losses(
    model: &TableModel,
    batch: &Batch,
    align: bool,
    tau: f64,
    ctx: &mut Ctx,
) -> Result<LossParts> {
    let m = model.encode(&batch.images)?;
    let memory = model.memory(&m)?;
    let html = model.html_forward(&model.html_memory(&memory)?, &batch.inputs, ctx)?;
    let structure = structure_loss(&html.logits, &batch.targets, &batch.mask)?;
    let (b, t, d) = html.hidden.dims3()?;
    let f_nc = html
        .hidden
        .reshape((b * t, d))?
        .index_select(&batch.trigger_rows, 0)?;
    let weights = per_image_weights(&batch.image_of_cell, batch.n_images);
    let coord = match model.config.coord_head {
        CoordHead::Csd => {
            let logits = model.coord_forward(
                &model.coord_memory(&memory)?,
                &batch.image_idx,
                &f_nc,
                &batch.coord_prev,
                ctx,
            )?;
            coordinate_loss(&logits, &batch.coord_targets, Some(&weights))?.value
        }
        CoordHead::Rd => {
            let pred = model.regression_head(&f_nc)?;
            regression_loss(&pred, &batch.norm_boxes, Some(&weights))?.value
        }
    };
    let align = if align {
        let g = model.roi_project(&m, &batch.image_idx, &batch.boxes)?;
        Some(
            batched_visual_alignment_loss(&f_nc, &g, tau, &batch.image_of_cell, batch.n_images)?
                .value,
        )
    } else {
        None
    };
    Ok(LossParts {
        structure,
        coord,
        align,
    })
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_s: f64,
    pub l_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_va: Option<f64>,
    pub grad_norm: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub early_exit: bool,
    pub last: Option<StepLog>,
}

pub struct Trainer {
    pub config: ExperimentConfig,
    pub model: TableModel,
    pub optimizer: AdamW,
    /// Optimizer steps taken so far.
    pub step: u64,
    examples: Vec<Example>,
    recent: VecDeque<f64>,
}

impl Trainer {
    pub fn new(config: ExperimentConfig, samples: &[Sample], device: &Device) -> Result<Self> {
        config.validate()?;
        let model = TableModel::new(config.model_config(), config.seed, DType::F32, device)?;
        Self::with_model(config, model, samples)
    }

    fn with_model(config: ExperimentConfig, model: TableModel, samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        let examples = samples
            .iter()
            .map(|s| prepare(s, &model.config, model.device()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            optimizer: AdamW::new(config.optim.clone()),
            config,
            model,
            step: 0,
            examples,
            recent: VecDeque::new(),
        })
    }

    /// Continues a run from `path`; the stored model configuration must
    /// match `config`.
    pub fn resume(
        config: ExperimentConfig,
        samples: &[Sample],
        path: &Path,
        device: &Device,
    ) -> Result<Self> {
        config.validate()?;
        let loaded = checkpoint::load(path, Some(&config.model_config()), device)?;
        let mut trainer = Self::with_model(config, loaded.model, samples)?;
        trainer.step = loaded.position.step;
        if let Some((t, state)) = loaded.optimizer {
            trainer.optimizer.load_state(t, state);
        }
        Ok(trainer)
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.examples.len().div_ceil(self.config.train.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let by_epochs = self.steps_per_epoch() * self.config.train.epochs as u64;
        self.config
            .train
            .max_steps
            .map_or(by_epochs, |m| m.min(by_epochs))
    }

    pub fn epoch(&self) -> usize {
        (self.step / self.steps_per_epoch()) as usize
    }

    /// Example indices of the batch for optimizer step `step`.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let epoch = step / spe;
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        let bs = self.config.train.batch_size;
        let start = (step % spe) as usize * bs;
        order[start..(start + bs).min(order.len())].to_vec()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let picked: Vec<&Example> = indices.iter().map(|&i| &self.examples[i]).collect();
        let pad = self.model.config.vocab().pad_id();
        collate(&picked, &self.model.config, pad, self.model.dtype())
    }

    /// Loss components on `indices` without updating anything (eval mode).
    pub fn evaluate_losses(&self, indices: &[usize]) -> Result<StepLog> {
        let batch = self.batch(indices)?;
        let parts = batch_losses(
            &self.model,
            &batch,
            self.config.ablation.va,
            self.config.loss.tau,
            &mut Ctx::eval(),
        )?;
        let total = total_loss(&parts, &self.config.loss, self.step)?;
        Ok(StepLog {
            step: self.step,
            epoch: self.epoch(),
            lr: 0.0,
            loss: scalar(&total)?,
            l_s: scalar(&parts.structure)?,
            l_c: scalar(&parts.coord)?,
            l_va: parts.align.as_ref().map(scalar).transpose()?,
            grad_norm: 0.0,
            n_cells: batch.n_cells(),
        })
    }

    /// One optimizer step on the scheduled batch.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let step = self.step;
        let epoch = self.epoch();
        let batch = self.batch(&self.batch_indices(step))?;
        let mut ctx = Ctx::train(self.config.seed, step);
        let parts = batch_losses(
            &self.model,
            &batch,
            self.config.ablation.va,
            self.config.loss.tau,
            &mut ctx,
        )?;
        let total = total_loss(&parts, &self.config.loss, step)?;
        let grads = total.backward()?;
        let lr = self.config.optim.lr_at(epoch, step);
        let grad_norm = self.optimizer.step(&self.model.params, &grads, lr)?;
        if !grad_norm.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("gradient norm is {grad_norm} at lr {lr}"),
            });
        }
        self.step += 1;
        Ok(StepLog {
            step,
            epoch,
            lr,
            loss: scalar(&total)?,
            l_s: scalar(&parts.structure)?,
            l_c: scalar(&parts.coord)?,
            l_va: parts.align.as_ref().map(scalar).transpose()?,
            grad_norm,
            n_cells: batch.n_cells(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let position = Position {
            step: self.step,
            epoch: self.epoch(),
        };
        let experiment = serde_json::to_string(&self.config)?;
        checkpoint::save(
            path,
            &self.model,
            Some(&self.optimizer),
            position,
            Some(&experiment),
        )
    }

    /// Trains until the step budget is spent or the early-exit target is
    /// reached, writing one JSON line per step to `log`. A divergence is
    /// logged before it is returned.
    pub fn run(
        &mut self,
        log: &mut dyn Write,
        checkpoint_path: Option<&Path>,
    ) -> Result<RunSummary> {
        let total = self.total_steps();
        let mut last = None;
        let mut early_exit = false;
        while self.step < total {
            let entry = match self.train_step() {
                Ok(e) => e,
                Err(e) => {
                    let diag = serde_json::json!({ "step": self.step, "error": e.to_string() });
                    writeln!(log, "{diag}")?;
                    return Err(e);
                }
            };
            writeln!(log, "{}", serde_json::to_string(&entry)?)?;
            self.recent.push_back(entry.loss);
            if self.recent.len() > self.config.train.average_window {
                self.recent.pop_front();
            }
            if let (Some(every), Some(path)) = (self.config.train.checkpoint_every, checkpoint_path)
            {
                if self.step % every == 0 {
                    self.save(path)?;
                }
            }
            last = Some(entry);
            if let Some(target) = self.config.train.early_exit_loss {
                let avg = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
                if self.recent.len() == self.config.train.average_window && avg < target {
                    early_exit = true;
                    break;
                }
            }
        }
        log.flush()?;
        if let Some(path) = checkpoint_path {
            self.save(path)?;
        }
        Ok(RunSummary {
            steps: self.step,
            early_exit,
            last,
        })
    }
}
