//! Structure, coordinate, regression and visual-alignment objectives.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_structure: f64,
    pub lambda_coord: f64,
    pub lambda_align: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_structure: 1.0,
            lambda_coord: 1.0,
            lambda_align: 1.0,
            tau: 0.04,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        for (name, v) in [
            ("lambda_structure", self.lambda_structure),
            ("lambda_coord", self.lambda_coord),
            ("lambda_align", self.lambda_align),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A scalar loss plus whether it was skipped because there were no cells.
#[derive(Debug, Clone)]
pub struct CellLoss {
    pub value: Tensor,
    pub skipped: bool,
}

fn zero(like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::zeros((), like.dtype(), like.device())?)
}

/// Negative log-likelihood of `targets` `(B, T)` under `logits` `(B, T, V)`,
/// summed over the positions where `mask` `(B, T)` is 1 and averaged over
/// the batch.
pub fn structure_loss(logits: &Tensor, targets: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (b, t, _) = logits.dims3()?;
    if targets.dims() != [b, t] || mask.dims() != [b, t] {
        return Err(Error::Shape(format!(
            "logits {:?}, targets {:?}, mask {:?}",
            logits.dims(),
            targets.dims(),
            mask.dims()
        )));
    }
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&targets.unsqueeze(2)?, 2)?.squeeze(2)?;
    Ok((picked
        .mul(&mask.to_dtype(logits.dtype())?)?
        .sum_all()?
        .neg()?
        / b as f64)?)
}

/// Per-cell weights `1 / (K_img · n_images)` so that a batched coordinate
/// loss averages the per-image `(1/K) Σ` over the images that have cells.
pub fn per_image_weights(image_of_cell: &[usize], n_images: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_images];
    for &i in image_of_cell {
        counts[i] += 1;
    }
    let with_cells = counts.iter().filter(|&&c| c > 0).count().max(1);
    image_of_cell
        .iter()
        .map(|&i| 1.0 / (counts[i] * with_cells) as f64)
        .collect()
}

fn cell_weights(k: usize, weights: Option<&[f64]>, like: &Tensor) -> Result<Tensor> {
    let w = match weights {
        Some(w) if w.len() == k => w.to_vec(),
        Some(w) => return Err(Error::Shape(format!("{} weights for {k} cells", w.len()))),
        None => vec![1.0 / k as f64; k],
    };
    Ok(Tensor::from_vec(w, k, like.device())?.to_dtype(like.dtype())?)
}

/// `-Σ_i w_i Σ_t log p(c*_t)` over `logits` `(K, 4, n_bins + 1)` and
/// `targets` `(K, 4)`; `w_i = 1/K` unless weights are given. Zero, flagged
/// as skipped, when `K = 0`.
pub fn coordinate_loss(
    logits: &Tensor,
    targets: &Tensor,
    weights: Option<&[f64]>,
) -> Result<CellLoss> {
    let (k, steps, n) = logits.dims3()?;
    if targets.dims() != [k, steps] {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dims(),
            targets.dims()
        )));
    }
    if k == 0 {
        return Ok(CellLoss {
            value: zero(logits)?,
            skipped: true,
        });
    }
    let max = targets.flatten_all()?.max(0)?.to_scalar::<u32>()?;
    if max as usize >= n {
        return Err(Error::Vocabulary {
            token: max,
            size: n,
        });
    }
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let per_cell = logp.gather(&targets.unsqueeze(2)?, 2)?.squeeze(2)?.sum(1)?;
    let w = cell_weights(k, weights, logits)?;
    Ok(CellLoss {
        value: per_cell.mul(&w)?.sum_all()?.neg()?,
        skipped: false,
    })
}

/// L1 loss between normalized boxes `(K, 4)`, weighted per cell like
/// [`coordinate_loss`].
pub fn regression_loss(
    pred: &Tensor,
    target: &Tensor,
    weights: Option<&[f64]>,
) -> Result<CellLoss> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let k = pred.dim(0)?;
    if k == 0 {
        return Ok(CellLoss {
            value: zero(pred)?,
            skipped: true,
        });
    }
    let per_cell = (pred - target)?.abs()?.sum(1)?;
    let w = cell_weights(k, weights, pred)?;
    Ok(CellLoss {
        value: per_cell.mul(&w)?.sum_all()?,
        skipped: false,
    })
}

fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// InfoNCE between paired rows of `f` and `g` `(K, d)`, both L2-normalized:
/// `-Σ_i log softmax_j(f_i·g_j / τ)_i`.
pub fn visual_alignment_loss(f: &Tensor, g: &Tensor, tau: f64) -> Result<CellLoss> {
    let k = f.dim(0)?;
    batched_visual_alignment_loss(f, g, tau, &vec![0; k], 1)
}

/// [`visual_alignment_loss`] computed within each image and averaged over
/// the images that have cells. Negatives never cross images.
pub fn batched_visual_alignment_loss(
    f: &Tensor,
    g: &Tensor,
    tau: f64,
    image_of_cell: &[usize],
    n_images: usize,
) -> Result<CellLoss> {
    let (k, d) = f.dims2()?;
    if g.dims() != [k, d] || image_of_cell.len() != k {
        return Err(Error::Shape(format!(
            "f {:?}, g {:?}, {} image ids",
            f.dims(),
            g.dims(),
            image_of_cell.len()
        )));
    }
    if k == 0 {
        return Ok(CellLoss {
            value: zero(f)?,
            skipped: true,
        });
    }
    let logits = (l2_normalize(f)?.matmul(&l2_normalize(g)?.t()?)? / tau)?;
    let mask: Vec<f32> = (0..k * k)
        .map(|i| {
            if image_of_cell[i / k] == image_of_cell[i % k] {
                0.0
            } else {
                -1e9
            }
        })
        .collect();
    let mask = Tensor::from_vec(mask, (k, k), f.device())?.to_dtype(f.dtype())?;
    let logp = candle_nn::ops::log_softmax(&(logits + mask)?, D::Minus1)?;
    let eye = Tensor::eye(k, f.dtype(), f.device())?;
    let images = {
        let mut seen = vec![false; n_images];
        image_of_cell.iter().for_each(|&i| seen[i] = true);
        seen.iter().filter(|&&s| s).count()
    };
    Ok(CellLoss {
        value: (logp.mul(&eye)?.sum_all()?.neg()? / images as f64)?,
        skipped: false,
    })
}

/// Component values of one training step.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub structure: Tensor,
    pub coord: Tensor,
    /// Absent when visual alignment is switched off.
    pub align: Option<Tensor>,
}

/// `λ1·L_s + λ2·L_c + λ3·L_va`; a non-finite component is a divergence.
pub fn total_loss(parts: &LossParts, w: &LossWeights, step: u64) -> Result<Tensor> {
    let mut named = vec![("structure", &parts.structure), ("coord", &parts.coord)];
    if let Some(a) = &parts.align {
        named.push(("align", a));
    }
    for (name, t) in &named {
        let v = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !v.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("{name} loss is {v}"),
            });
        }
    }
    let mut total = ((&parts.structure * w.lambda_structure)? + (&parts.coord * w.lambda_coord)?)?;
    if let Some(a) = &parts.align {
        total = (total + (a * w.lambda_align)?)?;
    }
    Ok(total)
}
