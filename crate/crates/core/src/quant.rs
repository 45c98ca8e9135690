//! Uniform coordinate quantization into `n_bins + 1` integer levels.

use serde::{Deserialize, Serialize};

use crate::grid::BBox;

/// Four coordinate tokens `(left, top, right, bottom)`, each in `[0, n_bins]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizedBox(pub [u32; 4]);

/// Quantized box plus whether any coordinate had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantized {
    pub qbox: QuantizedBox,
    pub clamped: bool,
}

/// `round(x / side * n_bins)` with ties rounded up, clamped to `[0, n_bins]`.
pub fn quantize_coord(x: f64, image_side: f64, n_bins: u32) -> (u32, bool) {
    let scaled = (x / image_side * n_bins as f64 + 0.5).floor();
    if scaled.is_nan() || scaled < 0.0 {
        (0, true)
    } else if scaled > n_bins as f64 {
        (n_bins, true)
    } else {
        (scaled as u32, !(0.0..=image_side).contains(&x))
    }
}

pub fn dequantize_coord(c: u32, image_side: f64, n_bins: u32) -> f64 {
    c as f64 / n_bins as f64 * image_side
}

pub fn quantize(b: &BBox, image_side: f32, n_bins: u32) -> Quantized {
    let mut clamped = false;
    let mut out = [0u32; 4];
    for (o, v) in out.iter_mut().zip(b.to_array()) {
        let (q, c) = quantize_coord(v as f64, image_side as f64, n_bins);
        *o = q;
        clamped |= c;
    }
    Quantized {
        qbox: QuantizedBox(out),
        clamped,
    }
}

pub fn dequantize(q: &QuantizedBox, image_side: f32, n_bins: u32) -> BBox {
    let v =
        q.0.map(|c| dequantize_coord(c, image_side as f64, n_bins) as f32);
    BBox::from_array(v)
}
