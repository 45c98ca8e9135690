//! Turning samples into model inputs and teacher-forcing targets.

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use image::RgbImage;
use tabstruct_core::datagen::Sample;
use tabstruct_core::quant::quantize;
use tabstruct_core::tokens::tokenize;
use tabstruct_core::BBox;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// The image as the model sees it: resized to `side × side`.
pub fn model_view(img: &RgbImage, side: u32) -> RgbImage {
    if img.dimensions() == (side, side) {
        img.clone()
    } else {
        image::imageops::resize(img, side, side, FilterType::Triangle)
    }
}

/// Resizes to `side × side` if needed and maps pixels to `[-1, 1]`,
/// `(3, side, side)` f32. Also returns the x and y scale factors applied.
pub fn image_tensor(img: &RgbImage, side: u32, device: &Device) -> Result<(Tensor, f32, f32)> {
    let (w, h) = img.dimensions();
    let resized;
    let img = if (w, h) == (side, side) {
        img
    } else {
        resized = image::imageops::resize(img, side, side, FilterType::Triangle);
        &resized
    };
    let s = side as usize;
    let mut data = vec![0f32; 3 * s * s];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * s + y as usize) * s + x as usize] = p.0[c] as f32 / 127.5 - 1.0;
        }
    }
    Ok((
        Tensor::from_vec(data, (3, s, s), device)?,
        side as f32 / w as f32,
        side as f32 / h as f32,
    ))
}

/// One sample prepared for training.
#[derive(Debug, Clone)]
pub struct Example {
    /// `(3, S, S)` f32.
    pub image: Tensor,
    /// Token ids from `<sos>` to `<eos>`.
    pub tokens: Vec<u32>,
    /// Positions of trigger tokens in `tokens`.
    pub triggers: Vec<usize>,
    /// Content boxes of the non-empty cells, in model image space.
    pub boxes: Vec<BBox>,
    pub qboxes: Vec<[u32; 4]>,
}

pub fn prepare(sample: &Sample, config: &ModelConfig, device: &Device) -> Result<Example> {
    let (image, sx, sy) = image_tensor(&sample.image, config.image_side, device)?;
    let seq = tokenize(&sample.grid, config.max_span)?;
    if seq.len() > config.max_html_len {
        return Err(Error::Truncation {
            len: seq.len(),
            max: config.max_html_len,
        });
    }
    let tokens = config.vocab().encode(&seq)?;
    let side = config.image_side as f32;
    let mut boxes = Vec::new();
    let mut qboxes = Vec::new();
    for cell in sample.grid.non_empty_cells() {
        let b = cell.content_bbox.ok_or_else(|| {
            Error::Config("training needs a content box for every non-empty cell".into())
        })?;
        let b = BBox::new(b.x_left * sx, b.y_top * sy, b.x_right * sx, b.y_bottom * sy);
        qboxes.push(quantize(&b, side, config.n_bins).qbox.0);
        boxes.push(b);
    }
    Ok(Example {
        image,
        tokens,
        triggers: seq.trigger_positions(),
        boxes,
        qboxes,
    })
}

/// A padded teacher-forcing batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    /// `(B, T)`: tokens without the final one, padded.
    pub inputs: Tensor,
    /// `(B, T)`: tokens without `<sos>`, padded.
    pub targets: Tensor,
    /// `(B, T)`: 1 on real target positions.
    pub mask: Tensor,
    /// `(K,)` indices into the flattened `(B·T)` hidden states that emit a
    /// trigger token.
    pub trigger_rows: Tensor,
    /// `(K,)` image of each cell.
    pub image_idx: Tensor,
    pub image_of_cell: Vec<usize>,
    pub boxes: Vec<BBox>,
    /// `(K, 4)` quantized targets.
    pub coord_targets: Tensor,
    /// `(K, 3)` previous coordinates for teacher forcing.
    pub coord_prev: Tensor,
    /// `(K, 4)` boxes divided by the image side.
    pub norm_boxes: Tensor,
    pub n_images: usize,
}

impl Batch {
    pub fn n_cells(&self) -> usize {
        self.boxes.len()
    }
}

pub fn collate(
    examples: &[&Example],
    config: &ModelConfig,
    pad: u32,
    dtype: DType,
) -> Result<Batch> {
    let device = examples
        .first()
        .map(|e| e.image.device().clone())
        .ok_or_else(|| Error::Shape("empty batch".into()))?;
    let b = examples.len();
    let t = examples
        .iter()
        .map(|e| e.tokens.len() - 1)
        .max()
        .unwrap_or(0);
    let mut inputs = vec![pad; b * t];
    let mut targets = vec![pad; b * t];
    let mut mask = vec![0f32; b * t];
    let mut rows = Vec::new();
    let mut image_of_cell = Vec::new();
    let mut boxes = Vec::new();
    let mut q = Vec::new();
    let mut prev = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        let n = e.tokens.len() - 1;
        inputs[i * t..i * t + n].copy_from_slice(&e.tokens[..n]);
        targets[i * t..i * t + n].copy_from_slice(&e.tokens[1..]);
        mask[i * t..i * t + n].iter_mut().for_each(|m| *m = 1.0);
        for (&pos, qb) in e.triggers.iter().zip(&e.qboxes) {
            rows.push((i * t + pos - 1) as u32);
            image_of_cell.push(i);
            q.extend_from_slice(qb);
            prev.extend_from_slice(&qb[..3]);
        }
        boxes.extend_from_slice(&e.boxes);
    }
    let k = boxes.len();
    let side = config.image_side as f32;
    let norm: Vec<f32> = boxes
        .iter()
        .flat_map(|bx| bx.to_array().map(|v| v / side))
        .collect();
    let images = Tensor::stack(&examples.iter().map(|e| &e.image).collect::<Vec<_>>(), 0)?;
    Ok(Batch {
        images: images.to_dtype(dtype)?,
        inputs: Tensor::from_vec(inputs, (b, t), &device)?,
        targets: Tensor::from_vec(targets, (b, t), &device)?,
        mask: Tensor::from_vec(mask, (b, t), &device)?.to_dtype(dtype)?,
        trigger_rows: Tensor::from_vec(rows, k, &device)?,
        image_idx: Tensor::from_vec(
            image_of_cell.iter().map(|&i| i as u32).collect(),
            k,
            &device,
        )?,
        image_of_cell,
        boxes,
        coord_targets: Tensor::from_vec(q, (k, 4), &device)?,
        coord_prev: Tensor::from_vec(prev, (k, 3), &device)?,
        norm_boxes: Tensor::from_vec(norm, (k, 4), &device)?.to_dtype(dtype)?,
        n_images: b,
    })
}
