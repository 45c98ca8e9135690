//! Detection average precision over predicted non-empty-cell boxes.

use crate::grid::BBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub image: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Area under the monotone precision envelope at every recall change.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.01, …, 1.
    Coco101,
}

/// IoU thresholds 0.50:0.05:0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// AP at one IoU threshold. `gts[i]` holds the boxes of image `i`.
///
/// Detections are ranked by descending score (stable for ties) and each one
/// claims the unmatched ground truth of its image with the highest IoU, if
/// that IoU reaches the threshold. With no ground truth the result is 1 when
/// there are also no detections, else 0.
pub fn average_precision(
    dets: &[Detection],
    gts: &[Vec<BBox>],
    iou_threshold: f64,
    interp: Interpolation,
) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for (rank, &d) in order.iter().enumerate() {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        if let Some(image_gts) = gts.get(det.image) {
            for (g, gt) in image_gts.iter().enumerate() {
                if taken[det.image][g] {
                    continue;
                }
                let iou = det.bbox.iou(gt);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
        }
        if let Some((g, _)) = best {
            taken[det.image][g] = true;
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // Monotone envelope from the right.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match interp {
        Interpolation::AllPoints => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                ap += (r - prev_recall) * p;
                prev_recall = *r;
            }
            ap
        }
        Interpolation::Coco101 => {
            let mut sum = 0.0;
            for k in 0..=100 {
                let level = k as f64 / 100.0;
                let idx = recall.partition_point(|&r| r < level - 1e-12);
                sum += precision.get(idx).copied().unwrap_or(0.0);
            }
            sum / 101.0
        }
    }
}

/// Mean AP over IoU thresholds 0.50:0.05:0.95.
pub fn coco_ap(dets: &[Detection], gts: &[Vec<BBox>], interp: Interpolation) -> f64 {
    let t = coco_thresholds();
    t.iter()
        .map(|&thr| average_precision(dets, gts, thr, interp))
        .sum::<f64>()
        / t.len() as f64
}
