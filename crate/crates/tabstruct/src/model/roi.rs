//! 2×2 ROI alignment over the feature map, expressed as a constant sampling
//! matrix so that gradients reach the feature map through one matmul.

use candle_core::{Device, Tensor};
use tabstruct_core::BBox;

use crate::error::Result;

pub const STRIDE: f32 = 16.0;
pub const BINS: usize = 2;

/// Bilinear weights of one sample point at feature coordinates `(y, x)` on an
/// `h × w` grid, added into `row` (length `h·w`, row-major).
fn add_bilinear(row: &mut [f32], h: usize, w: usize, y: f32, x: f32) {
    if y < -1.0 || y > h as f32 || x < -1.0 || x > w as f32 {
        return;
    }
    let axis = |v: f32, n: usize| -> (usize, usize, f32) {
        let v = v.max(0.0);
        let lo = v.floor() as usize;
        if lo >= n - 1 {
            (n - 1, n - 1, 0.0)
        } else {
            (lo, lo + 1, v - lo as f32)
        }
    };
    let (y0, y1, ly) = axis(y, h);
    let (x0, x1, lx) = axis(x, w);
    row[y0 * w + x0] += (1.0 - ly) * (1.0 - lx);
    row[y0 * w + x1] += (1.0 - ly) * lx;
    row[y1 * w + x0] += ly * (1.0 - lx);
    row[y1 * w + x1] += ly * lx;
}

/// Sampling weights `(K, 4, h·w)`: one row per output bin, bins in row-major
/// order. A box maps to feature coordinates by `v / 16 - 0.5`, so feature
/// value `(i, j)` sits at the centre of its 16-pixel patch; each bin is
/// sampled once at its centre.
pub fn roi_weights(boxes: &[BBox], h: usize, w: usize, device: &Device) -> Result<Tensor> {
    let cells = h * w;
    let mut data = vec![0f32; boxes.len() * BINS * BINS * cells];
    for (k, b) in boxes.iter().enumerate() {
        let x0 = b.x_left / STRIDE - 0.5;
        let y0 = b.y_top / STRIDE - 0.5;
        let bw = (b.x_right - b.x_left) / STRIDE / BINS as f32;
        let bh = (b.y_bottom - b.y_top) / STRIDE / BINS as f32;
        for by in 0..BINS {
            for bx in 0..BINS {
                let start = ((k * BINS + by) * BINS + bx) * cells;
                let y = y0 + (by as f32 + 0.5) * bh;
                let x = x0 + (bx as f32 + 0.5) * bw;
                add_bilinear(&mut data[start..start + cells], h, w, y, x);
            }
        }
    }
    Ok(Tensor::from_vec(
        data,
        (boxes.len(), BINS * BINS, cells),
        device,
    )?)
}
