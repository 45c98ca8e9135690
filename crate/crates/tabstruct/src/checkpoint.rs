//! Safetensors checkpoints: weights, optimizer moments, and metadata holding
//! the model configuration, vocabulary and training position.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TableModel};
use crate::optim::AdamW;

pub const FORMAT: &str = "tabstruct-checkpoint";
pub const VERSION: u32 = 1;

const PARAM: &str = "param.";
const ADAM: &str = "adam.";

/// Where training stood when a checkpoint was written.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Position {
    pub step: u64,
    pub epoch: usize,
}

pub struct Loaded {
    pub model: TableModel,
    pub position: Position,
    /// Optimizer moments keyed as in [`AdamW::state`], with its step count.
    pub optimizer: Option<(u64, Vec<(String, Tensor)>)>,
    /// Free-form experiment description stored alongside, if any.
    pub experiment: Option<String>,
}

fn fail(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn vocab_strings(config: &ModelConfig) -> Vec<String> {
    config.vocab().tokens().map(|t| t.as_html()).collect()
}

pub fn save(
    path: &Path,
    model: &TableModel,
    optimizer: Option<&AdamW>,
    position: Position,
    experiment: Option<&str>,
) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = model
        .params
        .vars()
        .iter()
        .map(|(name, var)| (format!("{PARAM}{name}"), var.as_tensor().clone()))
        .collect();
    let mut meta = HashMap::from([
        ("format".to_string(), FORMAT.to_string()),
        ("version".to_string(), VERSION.to_string()),
        (
            "model_config".to_string(),
            serde_json::to_string(&model.config)?,
        ),
        (
            "vocab".to_string(),
            serde_json::to_string(&vocab_strings(&model.config))?,
        ),
        ("step".to_string(), position.step.to_string()),
        ("epoch".to_string(), position.epoch.to_string()),
    ]);
    if let Some(opt) = optimizer {
        meta.insert("optimizer_t".into(), opt.t.to_string());
        tensors.extend(
            opt.state()
                .into_iter()
                .map(|(k, t)| (format!("{ADAM}{k}"), t)),
        );
    }
    if let Some(e) = experiment {
        meta.insert("experiment".into(), e.to_string());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    safetensors::serialize_to_file(tensors, Some(meta), path)?;
    Ok(())
}

/// Loads a checkpoint. When `expected` is given, a checkpoint whose stored
/// configuration differs is refused.
pub fn load(path: &Path, expected: Option<&ModelConfig>, device: &Device) -> Result<Loaded> {
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes)?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| fail(path, "no metadata"))?;
    let field = |k: &str| {
        meta.get(k)
            .ok_or_else(|| fail(path, format!("missing metadata field {k}")))
    };
    if field("format")? != FORMAT {
        return Err(fail(path, "not a tabstruct checkpoint"));
    }
    let version: u32 = field("version")?
        .parse()
        .map_err(|_| fail(path, "bad version"))?;
    if version != VERSION {
        return Err(fail(path, format!("unsupported version {version}")));
    }
    let config: ModelConfig = serde_json::from_str(field("model_config")?)?;
    if let Some(want) = expected {
        if want != &config {
            return Err(fail(
                path,
                format!(
                    "configuration mismatch: checkpoint has {}, expected {}",
                    serde_json::to_string(&config)?,
                    serde_json::to_string(want)?
                ),
            ));
        }
    }
    let vocab: Vec<String> = serde_json::from_str(field("vocab")?)?;
    if vocab != vocab_strings(&config) {
        return Err(fail(
            path,
            "vocabulary does not match the stored configuration",
        ));
    }
    let parse = |k: &str| -> Result<u64> {
        field(k)?
            .parse()
            .map_err(|_| fail(path, format!("bad {k}")))
    };
    let position = Position {
        step: parse("step")?,
        epoch: parse("epoch")? as usize,
    };
    let mut tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
    let dtype = tensors
        .iter()
        .find(|(k, _)| k.starts_with(PARAM))
        .map(|(_, t)| t.dtype())
        .ok_or_else(|| fail(path, "no parameters"))?;
    let model = TableModel::new(config, 0, dtype, device)?;
    for (name, var) in model.params.vars() {
        let t = tensors
            .remove(&format!("{PARAM}{name}"))
            .ok_or_else(|| fail(path, format!("missing parameter {name}")))?;
        if t.dims() != var.dims() {
            return Err(fail(
                path,
                format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                ),
            ));
        }
        var.set(&t)?;
    }
    let optimizer = match meta.get("optimizer_t") {
        Some(t) => {
            let t = t.parse().map_err(|_| fail(path, "bad optimizer_t"))?;
            let state = tensors
                .into_iter()
                .filter_map(|(k, v)| k.strip_prefix(ADAM).map(|k| (k.to_string(), v)))
                .collect();
            Some((t, state))
        }
        None => None,
    };
    Ok(Loaded {
        model,
        position,
        optimizer,
        experiment: meta.get("experiment").cloned(),
    })
}
