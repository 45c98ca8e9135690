//! Cell adjacency relations (CAR).
//!
//! Relations link two distinct non-empty cells that touch in the expanded
//! cell matrix, horizontally or vertically. Each distinct cell pair counts
//! once per direction, however many slots a spanning cell shares with it.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::grid::TableGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// `a` is left of (horizontal) or above (vertical) `b`; cells are document
/// order indices of the grid the relation was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AdjacencyRelation {
    pub a: usize,
    pub b: usize,
    pub direction: Direction,
}

/// Adjacency relations between non-empty cells. Works on any grid; ragged
/// predictions use the lenient layout.
pub fn car_relations(grid: &TableGrid) -> BTreeSet<AdjacencyRelation> {
    let layout = grid.layout();
    let m = &layout.matrix;
    let cells: Vec<_> = grid.cells().collect();
    let mut out = BTreeSet::new();
    // Walk the boundary just right of and just below each cell's extent.
    for (idx, (&(r0, c0), cell)) in layout.anchors.iter().zip(&cells).enumerate() {
        if cell.is_empty {
            continue;
        }
        let r1 = (r0 + cell.rowspan as usize).min(m.n_rows);
        let c1 = (c0 + cell.colspan as usize).min(m.n_cols);
        let mut push = |other: Option<usize>, direction| {
            if let Some(o) = other {
                if o != idx && !cells[o].is_empty {
                    out.insert(AdjacencyRelation {
                        a: idx,
                        b: o,
                        direction,
                    });
                }
            }
        };
        for r in r0..r1 {
            if m.get(r, c1 - 1) == Some(idx) {
                push(m.get(r, c1), Direction::Horizontal);
            }
        }
        for c in c0..c1 {
            if m.get(r1 - 1, c) == Some(idx) {
                push(m.get(r1, c), Direction::Vertical);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CarMatch {
    /// Cells correspond when their whitespace-normalized contents are equal.
    Content,
    /// Cells correspond by highest content-box IoU, at least the threshold.
    Iou(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, n_pred: usize, n_gt: usize) -> Self {
        if n_pred == 0 && n_gt == 0 {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let precision = if n_pred == 0 {
            0.0
        } else {
            tp as f64 / n_pred as f64
        };
        let recall = if n_gt == 0 {
            0.0
        } else {
            tp as f64 / n_gt as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One-to-one correspondence from predicted to ground-truth cell indices.
fn correspond(pred: &TableGrid, gt: &TableGrid, mode: CarMatch) -> Result<Vec<Option<usize>>> {
    let pred_cells: Vec<_> = pred.cells().collect();
    let gt_cells: Vec<_> = gt.cells().collect();
    let mut map = vec![None; pred_cells.len()];
    match mode {
        CarMatch::Content => {
            if gt_cells
                .iter()
                .any(|c| !c.is_empty && c.content.trim().is_empty())
            {
                return Err(Error::MetricInput(
                    "content matching needs text for every non-empty ground-truth cell".into(),
                ));
            }
            let mut used = vec![false; gt_cells.len()];
            for (i, p) in pred_cells.iter().enumerate() {
                let key = normalize(&p.content);
                if p.is_empty || key.is_empty() {
                    continue;
                }
                let hit = gt_cells
                    .iter()
                    .enumerate()
                    .find(|(j, g)| !used[*j] && !g.is_empty && normalize(&g.content) == key);
                if let Some((j, _)) = hit {
                    used[j] = true;
                    map[i] = Some(j);
                }
            }
        }
        CarMatch::Iou(sigma) => {
            let missing = |cells: &[&crate::grid::Cell]| {
                cells
                    .iter()
                    .any(|c| !c.is_empty && c.content_bbox.is_none())
            };
            if missing(&pred_cells) || missing(&gt_cells) {
                return Err(Error::MetricInput(
                    "IoU matching needs a box for every non-empty cell".into(),
                ));
            }
            let mut pairs = Vec::new();
            for (i, p) in pred_cells.iter().enumerate() {
                for (j, g) in gt_cells.iter().enumerate() {
                    if let (Some(pb), Some(gb)) = (p.content_bbox, g.content_bbox) {
                        let iou = pb.iou(&gb);
                        if iou >= sigma && iou > 0.0 {
                            pairs.push((iou, i, j));
                        }
                    }
                }
            }
            pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
            let mut used = vec![false; gt_cells.len()];
            for (_, i, j) in pairs {
                if map[i].is_none() && !used[j] {
                    map[i] = Some(j);
                    used[j] = true;
                }
            }
        }
    }
    Ok(map)
}

/// Precision, recall and F1 of the predicted relations against the ground
/// truth under the given cell correspondence mode.
pub fn car_score(pred: &TableGrid, gt: &TableGrid, mode: CarMatch) -> Result<Prf> {
    let map = correspond(pred, gt, mode)?;
    let pred_rel = car_relations(pred);
    let gt_rel = car_relations(gt);
    let tp = pred_rel
        .iter()
        .filter(|r| match (map[r.a], map[r.b]) {
            (Some(a), Some(b)) => gt_rel.contains(&AdjacencyRelation {
                a,
                b,
                direction: r.direction,
            }),
            _ => false,
        })
        .count();
    Ok(Prf::from_counts(tp, pred_rel.len(), gt_rel.len()))
}

/// `Σ σ·F1(σ) / Σ σ`.
pub fn weighted_f1(per_sigma: &[(f64, f64)]) -> f64 {
    let wsum: f64 = per_sigma.iter().map(|(s, _)| s).sum();
    if wsum == 0.0 {
        return 0.0;
    }
    per_sigma.iter().map(|(s, f)| s * f).sum::<f64>() / wsum
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CarSweep {
    pub per_sigma: Vec<(f64, Prf)>,
    pub weighted_f1: f64,
}

/// IoU-mode CAR at every threshold plus the threshold-weighted F1.
pub fn car_sweep(pred: &TableGrid, gt: &TableGrid, sigmas: &[f64]) -> Result<CarSweep> {
    let per_sigma = sigmas
        .iter()
        .map(|&s| Ok((s, car_score(pred, gt, CarMatch::Iou(s))?)))
        .collect::<Result<Vec<_>>>()?;
    let f1s: Vec<(f64, f64)> = per_sigma.iter().map(|(s, p)| (*s, p.f1)).collect();
    Ok(CarSweep {
        weighted_f1: weighted_f1(&f1s),
        per_sigma,
    })
}
