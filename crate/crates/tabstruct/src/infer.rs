//! Greedy inference and cross-attention visualization.

use candle_core::{DType, Tensor};
use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use tabstruct_core::quant::{dequantize, QuantizedBox};
use tabstruct_core::tokens::{Token, TokenSeq};
use tabstruct_core::BBox;

use crate::data::image_tensor;
use crate::error::{Error, Result};
use crate::model::decoder::Kv;
use crate::model::{CoordHead, TableModel};
use crate::nn::Ctx;

/// Cross-attention of one decoding step, averaged over layers and heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStep {
    /// Index in the token sequence of the token this step emitted.
    pub position: usize,
    /// One weight per feature-map cell, row-major.
    pub weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tokens: TokenSeq,
    /// One box per trigger token, in order, in model image space.
    pub boxes: Vec<BBox>,
    /// Product of the four coordinate-token probabilities (1 for the
    /// regression head).
    pub scores: Vec<f64>,
    pub truncated: bool,
    /// Attention of each trigger step, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_maps: Option<Vec<AttentionStep>>,
}

impl Prediction {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    /// Longest token sequence including `<sos>`; capped by the model's limit.
    pub max_len: usize,
    pub record_attention: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            max_len: usize::MAX,
            record_attention: false,
        }
    }
}

fn argmax_with_prob(logits: &[f32]) -> (usize, f64) {
    let (best, &max) = logits
        .iter()
        .enumerate()
        .fold((0, &f32::NEG_INFINITY), |acc, (i, v)| {
            if *v > *acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    let z: f64 = logits.iter().map(|&v| ((v - max) as f64).exp()).sum();
    (best, 1.0 / z)
}

/// Four greedy coordinate steps for all `K` cells at once. Returns the
/// quantized boxes and the product of the chosen tokens' probabilities.
pub fn batch_coord_decode(
    model: &TableModel,
    coord_mem: &[Kv],
    image_idx: &Tensor,
    f_nc: &Tensor,
) -> Result<Vec<(QuantizedBox, f64)>> {
    let k = f_nc.dim(0)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut coords: Vec<[u32; 4]> = vec![[0; 4]; k];
    let mut scores = vec![1.0f64; k];
    let device = model.device();
    for t in 0..4 {
        let prev: Vec<u32> = coords.iter().flat_map(|c| c[..t].to_vec()).collect();
        let prev = Tensor::from_vec(prev, (k, t), device)?;
        let logits = model.coord_forward(coord_mem, image_idx, f_nc, &prev, &mut Ctx::eval())?;
        let last = logits
            .narrow(1, t, 1)?
            .squeeze(1)?
            .to_dtype(DType::F32)?
            .to_vec2::<f32>()?;
        for (i, row) in last.iter().enumerate() {
            let (c, p) = argmax_with_prob(row);
            coords[i][t] = c as u32;
            scores[i] *= p;
        }
    }
    Ok(coords.into_iter().map(QuantizedBox).zip(scores).collect())
}

/// Greedy HTML decoding from `<sos>` until `<eos>` or the length limit,
/// followed by parallel box decoding for every trigger token.
pub fn greedy_decode(
    model: &TableModel,
    image: &image::RgbImage,
    opts: DecodeOptions,
) -> Result<Prediction> {
    let side = model.config.image_side;
    let (x, _, _) = image_tensor(image, side, model.device())?;
    let m = model.encode(&x.unsqueeze(0)?.to_dtype(model.dtype())?)?;
    let memory = model.memory(&m)?;
    let html_mem = model.html_memory(&memory)?;
    let vocab = model.config.vocab();
    let max_len = opts.max_len.min(model.config.max_html_len).max(1);
    let mut ids = vec![vocab.id(Token::Sos)?];
    let mut f_rows = Vec::new();
    let mut attention = Vec::new();
    let mut finished = false;
    while ids.len() < max_len {
        let n = ids.len();
        let input = Tensor::from_vec(ids.clone(), (1, n), model.device())?;
        let out = model.html_forward(&html_mem, &input, &mut Ctx::eval())?;
        let logits = out
            .logits
            .get(0)?
            .get(n - 1)?
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?;
        let (id, _) = argmax_with_prob(&logits);
        let id = id as u32;
        ids.push(id);
        let token = vocab.token(id).unwrap_or(Token::Pad);
        if token.is_cell_trigger() {
            f_rows.push(out.hidden.get(0)?.get(n - 1)?);
            if opts.record_attention {
                attention.push(AttentionStep {
                    position: n,
                    weights: average_attention(&out.cross_attn, n - 1)?,
                });
            }
        }
        if token == Token::Eos {
            finished = true;
            break;
        }
    }
    let k = f_rows.len();
    let (boxes, scores) = if k == 0 {
        (Vec::new(), Vec::new())
    } else {
        let f_nc = Tensor::stack(&f_rows, 0)?;
        match model.config.coord_head {
            CoordHead::Csd => {
                let idx = Tensor::zeros(k, DType::U32, model.device())?;
                let decoded =
                    batch_coord_decode(model, &model.coord_memory(&memory)?, &idx, &f_nc)?;
                decoded
                    .into_iter()
                    .map(|(q, s)| (dequantize(&q, side as f32, model.config.n_bins), s))
                    .unzip()
            }
            CoordHead::Rd => {
                let pred = model
                    .regression_head(&f_nc)?
                    .to_dtype(DType::F32)?
                    .to_vec2::<f32>()?;
                let s = side as f32;
                pred.iter()
                    .map(|r| (BBox::new(r[0] * s, r[1] * s, r[2] * s, r[3] * s), 1.0))
                    .unzip()
            }
        }
    };
    Ok(Prediction {
        tokens: vocab.decode(&ids),
        boxes,
        scores,
        truncated: !finished,
        attention_maps: opts.record_attention.then_some(attention),
    })
}

/// Mean over layers and heads of the cross-attention row of query `t`.
/// Each layer's weights are `(1, h, T, L)`.
pub fn average_attention(per_layer: &[Tensor], t: usize) -> Result<Vec<f32>> {
    let rows = per_layer
        .iter()
        .map(|w| Ok(w.get(0)?.narrow(1, t, 1)?.squeeze(1)?.mean(0)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&rows, 0)?
        .mean(0)?
        .to_dtype(DType::F32)?
        .to_vec1::<f32>()?)
}

/// Square raster of attention weights, min-max normalized to `[0, 255]`. A
/// constant map becomes all zeros.
pub fn attention_raster(weights: &[f32]) -> Result<GrayImage> {
    let side = (weights.len() as f64).sqrt().round() as usize;
    if side * side != weights.len() || side == 0 {
        return Err(Error::Geometry(weights.len()));
    }
    let lo = weights.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = weights.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    Ok(GrayImage::from_fn(side as u32, side as u32, |x, y| {
        let v = weights[y as usize * side + x as usize];
        let n = if range > 0.0 { (v - lo) / range } else { 0.0 };
        Luma([(n * 255.0).round() as u8])
    }))
}

/// Opacity of the original image in attention overlays.
pub const OVERLAY_IMAGE_WEIGHT: f32 = 0.8;

/// Raster resized (nearest neighbour) to the image and blended over it: the
/// image keeps 80% weight, the heat colour 20%.
pub fn attention_overlay(image: &RgbImage, raster: &GrayImage) -> RgbImage {
    let (w, h) = image.dimensions();
    let heat = image::imageops::resize(raster, w, h, image::imageops::FilterType::Nearest);
    RgbImage::from_fn(w, h, |x, y| {
        let v = heat.get_pixel(x, y).0[0] as f32;
        let colour = [v, 0.0, 255.0 - v];
        let p = image.get_pixel(x, y).0;
        let mut out = [0u8; 3];
        for c in 0..3 {
            let mixed =
                OVERLAY_IMAGE_WEIGHT * p[c] as f32 + (1.0 - OVERLAY_IMAGE_WEIGHT) * colour[c];
            out[c] = mixed.round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// Share of attention that falls inside `cell` (pixels): each feature-map
/// cell contributes its weight times the fraction of its patch covered.
pub fn attention_mass_inside(weights: &[f32], image_side: f32, cell: &BBox) -> f64 {
    let side = (weights.len() as f64).sqrt().round() as usize;
    let patch = image_side / side as f32;
    let total: f64 = weights.iter().map(|&w| w as f64).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut inside = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        let (r, c) = ((i / side) as f32, (i % side) as f32);
        let p = BBox::new(c * patch, r * patch, (c + 1.0) * patch, (r + 1.0) * patch);
        inside += w as f64 * p.intersection_area(cell) / p.area();
    }
    inside / total
}

/// Box outlines drawn over a copy of `image`.
pub fn draw_boxes(image: &RgbImage, boxes: &[BBox], colour: [u8; 3]) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = out.dimensions();
    for b in boxes {
        let clamp = |v: f32, max: u32| (v.round().max(0.0) as u32).min(max.saturating_sub(1));
        let (x0, x1) = (clamp(b.x_left, w), clamp(b.x_right, w));
        let (y0, y1) = (clamp(b.y_top, h), clamp(b.y_bottom, h));
        for x in x0..=x1 {
            out.put_pixel(x, y0, Rgb(colour));
            out.put_pixel(x, y1, Rgb(colour));
        }
        for y in y0..=y1 {
            out.put_pixel(x0, y, Rgb(colour));
            out.put_pixel(x1, y, Rgb(colour));
        }
    }
    out
}
