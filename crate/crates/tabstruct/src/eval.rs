//! End-to-end evaluation: predictions are repaired into grids, matched with
//! the ground-truth text lines, and scored with every table metric.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tabstruct_core::datagen::Sample;
use tabstruct_core::metrics::ap::average_precision;
use tabstruct_core::metrics::grits::content_exact_match;
use tabstruct_core::metrics::{
    car_score, car_sweep, coco_ap, grits, teds, CarMatch, Detection, GritsVariant, Interpolation,
    TableTree,
};
use tabstruct_core::postproc::{annotated_html, assemble_html, cell_texts};
use tabstruct_core::tokens::{detokenize, tokenize};
use tabstruct_core::{BBox, TableGrid};

use crate::error::Result;
use crate::infer::{greedy_decode, DecodeOptions, Prediction};
use crate::model::TableModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSelection {
    pub teds: bool,
    pub car: bool,
    pub ap: bool,
    pub grits: bool,
    /// IoU thresholds of the CAR sweep.
    pub car_sigmas: Vec<f64>,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self {
            teds: true,
            car: true,
            ap: true,
            grits: true,
            car_sigmas: vec![0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub index: usize,
    pub n_gt_cells: usize,
    pub n_pred_cells: usize,
    pub truncated: bool,
    pub repaired: bool,
    pub structure_match: bool,
    pub s_teds: Option<f64>,
    pub teds: Option<f64>,
    pub car_content_f1: Option<f64>,
    pub car_iou_wavg_f1: Option<f64>,
    pub grits_top: Option<f64>,
    pub grits_cont: Option<f64>,
    pub grits_loc: Option<f64>,
    pub content_exact: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_samples: usize,
    pub s_teds: Option<f64>,
    pub teds: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    /// Mean AP over IoU 0.50:0.05:0.95.
    pub ap: Option<f64>,
    /// Corpus-level CAR in content mode.
    pub car_precision: Option<f64>,
    pub car_recall: Option<f64>,
    pub car_f1: Option<f64>,
    /// Mean over samples of the σ-weighted CAR F1 in IoU mode.
    pub car_wavg_f1: Option<f64>,
    pub grits_top: Option<f64>,
    pub grits_cont: Option<f64>,
    pub grits_loc: Option<f64>,
    pub structure_accuracy: f64,
    pub content_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub aggregate: Aggregate,
    pub samples: Vec<SampleScores>,
}

/// A prediction turned into a grid with boxes and text on its non-empty
/// cells, ready for scoring.
pub struct PredictedTable {
    pub prediction: Prediction,
    pub grid: TableGrid,
    pub html: String,
    pub repaired: bool,
}

/// Repairs the predicted tokens into a grid, assigns boxes to non-empty
/// cells in order and fills their text from the sample's text lines.
pub fn predicted_table(pred: &Prediction, sample: &Sample) -> PredictedTable {
    let texts = cell_texts(&pred.boxes, &sample.text_lines);
    table_with_texts(pred.clone(), texts)
}

fn table_with_texts(prediction: Prediction, texts: Vec<String>) -> PredictedTable {
    let decoded = detokenize(&prediction.tokens);
    let mut grid = decoded.grid;
    let mut next = 0;
    for cell in grid.cells_mut().filter(|c| !c.is_empty) {
        let bbox = prediction
            .boxes
            .get(next)
            .copied()
            .unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0));
        cell.content_bbox = Some(bbox);
        cell.content = texts.get(next).cloned().unwrap_or_default();
        next += 1;
    }
    PredictedTable {
        html: assemble_html(&prediction.tokens, &texts),
        grid,
        repaired: !decoded.repairs.is_empty(),
        prediction,
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores `preds[i]` against `samples[i]`, extracting cell text from the
/// samples' text lines.
pub fn evaluate_predictions(
    preds: &[Prediction],
    samples: &[Sample],
    sel: &MetricSelection,
) -> Result<Report> {
    let tables: Vec<PredictedTable> = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| predicted_table(p, s))
        .collect();
    evaluate_tables(&tables, samples, sel)
}

/// Scores `tables[i]` against `samples[i]`.
pub fn evaluate_tables(
    tables: &[PredictedTable],
    samples: &[Sample],
    sel: &MetricSelection,
) -> Result<Report> {
    assert_eq!(tables.len(), samples.len(), "one prediction per sample");
    let mut scores = Vec::with_capacity(samples.len());
    let mut dets = Vec::new();
    let mut gt_boxes = Vec::new();
    let (mut tp_rel, mut n_pred_rel, mut n_gt_rel) = (0.0, 0.0, 0.0);
    for (i, (table, sample)) in tables.iter().zip(samples).enumerate() {
        let pred = &table.prediction;
        let gt = &sample.grid;
        let structure_match = tokenize(gt, u32::MAX).ok() == Some(pred.tokens.clone());
        let mut s = SampleScores {
            index: i,
            n_gt_cells: gt.non_empty_cells().count(),
            n_pred_cells: pred.boxes.len(),
            truncated: pred.truncated,
            repaired: table.repaired,
            structure_match,
            ..SampleScores::default()
        };
        if sel.teds {
            let pt = TableTree::from_html(&table.html)?;
            let gt_tree = TableTree::from_html(&annotated_html(gt))?;
            s.s_teds = Some(teds(&pt, &gt_tree, true));
            s.teds = Some(teds(&pt, &gt_tree, false));
        }
        if sel.car {
            let content = car_score(&table.grid, gt, CarMatch::Content)?;
            let n_p = tabstruct_core::metrics::car_relations(&table.grid).len() as f64;
            let n_g = tabstruct_core::metrics::car_relations(gt).len() as f64;
            tp_rel += content.precision * n_p;
            n_pred_rel += n_p;
            n_gt_rel += n_g;
            s.car_content_f1 = Some(content.f1);
            s.car_iou_wavg_f1 = Some(car_sweep(&table.grid, gt, &sel.car_sigmas)?.weighted_f1);
        }
        if sel.grits {
            s.grits_top = Some(grits(&table.grid, gt, GritsVariant::Top)?);
            s.grits_cont = Some(grits(&table.grid, gt, GritsVariant::Cont)?);
            s.grits_loc = Some(grits(&table.grid, gt, GritsVariant::Loc)?);
            s.content_exact = Some(content_exact_match(&table.grid, gt));
        }
        if sel.ap {
            dets.extend(
                pred.boxes
                    .iter()
                    .zip(&pred.scores)
                    .map(|(b, &score)| Detection {
                        image: i,
                        bbox: *b,
                        score,
                    }),
            );
            gt_boxes.push(
                gt.non_empty_cells()
                    .filter_map(|c| c.content_bbox)
                    .collect::<Vec<_>>(),
            );
        }
        scores.push(s);
    }
    let n = scores.len();
    let ap_at = |t: f64| {
        sel.ap
            .then(|| average_precision(&dets, &gt_boxes, t, Interpolation::AllPoints))
    };
    let car_p = (sel.car && n_pred_rel > 0.0).then(|| tp_rel / n_pred_rel);
    let car_r = (sel.car && n_gt_rel > 0.0).then(|| tp_rel / n_gt_rel);
    let aggregate = Aggregate {
        n_samples: n,
        s_teds: mean(scores.iter().map(|s| s.s_teds)),
        teds: mean(scores.iter().map(|s| s.teds)),
        ap50: ap_at(0.5),
        ap75: ap_at(0.75),
        ap: sel
            .ap
            .then(|| coco_ap(&dets, &gt_boxes, Interpolation::AllPoints)),
        car_precision: car_p,
        car_recall: car_r,
        car_f1: match (car_p, car_r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        },
        car_wavg_f1: mean(scores.iter().map(|s| s.car_iou_wavg_f1)),
        grits_top: mean(scores.iter().map(|s| s.grits_top)),
        grits_cont: mean(scores.iter().map(|s| s.grits_cont)),
        grits_loc: mean(scores.iter().map(|s| s.grits_loc)),
        structure_accuracy: if n == 0 {
            0.0
        } else {
            scores.iter().filter(|s| s.structure_match).count() as f64 / n as f64
        },
        content_accuracy: mean(
            scores
                .iter()
                .map(|s| s.content_exact.map(|b| b as u8 as f64)),
        ),
    };
    Ok(Report {
        aggregate,
        samples: scores,
    })
}

/// Greedy predictions for every sample.
pub fn predict_all(
    model: &TableModel,
    samples: &[Sample],
    opts: DecodeOptions,
) -> Result<Vec<Prediction>> {
    samples
        .iter()
        .map(|s| greedy_decode(model, &s.image, opts))
        .collect()
}

/// The ground truth expressed as a prediction.
pub fn ground_truth_prediction(sample: &Sample) -> Result<Prediction> {
    let tokens = tokenize(&sample.grid, u32::MAX)?;
    let boxes: Vec<BBox> = sample
        .grid
        .non_empty_cells()
        .map(|c| c.content_bbox.unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0)))
        .collect();
    Ok(Prediction {
        tokens,
        scores: vec![1.0; boxes.len()],
        boxes,
        truncated: false,
        attention_maps: None,
    })
}

/// The ground truth with its own cell text, bypassing both the model and
/// text extraction; scoring it checks the evaluation path itself.
pub fn ground_truth_table(sample: &Sample) -> Result<PredictedTable> {
    let texts = sample
        .grid
        .non_empty_cells()
        .map(|c| c.content.clone())
        .collect();
    Ok(table_with_texts(ground_truth_prediction(sample)?, texts))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "row,n_gt_cells,n_pred_cells,truncated,repaired,structure_match,s_teds,teds,car_content_f1,car_iou_wavg_f1,grits_top,grits_cont,grits_loc,ap50,ap\n",
        );
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},,",
                s.index,
                s.n_gt_cells,
                s.n_pred_cells,
                s.truncated,
                s.repaired,
                s.structure_match,
                opt(s.s_teds),
                opt(s.teds),
                opt(s.car_content_f1),
                opt(s.car_iou_wavg_f1),
                opt(s.grits_top),
                opt(s.grits_cont),
                opt(s.grits_loc),
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "all,,,,,{:.6},{},{},{},{},{},{},{},{},{}",
            a.structure_accuracy,
            opt(a.s_teds),
            opt(a.teds),
            opt(a.car_f1),
            opt(a.car_wavg_f1),
            opt(a.grits_top),
            opt(a.grits_cont),
            opt(a.grits_loc),
            opt(a.ap50),
            opt(a.ap),
        );
        out
    }

    /// Writes `report.json` and `report.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}
