//! Content extraction: assign text lines to predicted non-empty cells, merge
//! multi-line content in reading order and emit content-bearing HTML.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::grid::{BBox, TableGrid};
use crate::tokens::{detokenize, TokenSeq};

/// Minimum IoU between a text line and a cell box for the line to be assigned.
pub const MATCH_IOU: f64 = 0.1;

/// Lines whose vertical overlap ratio reaches this value share a reading band.
pub const BAND_OVERLAP: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLine {
    pub bbox: BBox,
    pub text: String,
}

/// For every text line, the index of the cell box with the highest IoU, if
/// that IoU is at least [`MATCH_IOU`]. Equal IoUs go to the cell that comes
/// first in `(y_top, x_left)` order.
pub fn match_lines(cell_boxes: &[BBox], lines: &[TextLine]) -> Vec<Option<usize>> {
    lines
        .iter()
        .map(|line| {
            let mut best: Option<(usize, f64)> = None;
            for (i, cell) in cell_boxes.iter().enumerate() {
                let iou = line.bbox.iou(cell);
                if iou < MATCH_IOU {
                    continue;
                }
                best = match best {
                    None => Some((i, iou)),
                    Some((_, b)) if iou > b => Some((i, iou)),
                    Some((j, b)) if iou == b && position_order(cell, &cell_boxes[j]).is_lt() => {
                        Some((i, iou))
                    }
                    keep => keep,
                };
            }
            best.map(|(i, _)| i)
        })
        .collect()
}

fn position_order(a: &BBox, b: &BBox) -> Ordering {
    a.y_top
        .total_cmp(&b.y_top)
        .then(a.x_left.total_cmp(&b.x_left))
}

fn vertical_overlap_ratio(top: f32, bottom: f32, b: &BBox) -> f32 {
    let overlap = bottom.min(b.y_bottom) - top.max(b.y_top);
    let min_h = (bottom - top).min(b.height());
    if min_h <= 0.0 {
        if overlap >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        overlap / min_h
    }
}

/// Orders lines top-to-bottom by reading band, left-to-right within a band,
/// and joins their texts with single spaces.
pub fn merge_cell_content(lines: &[&TextLine]) -> String {
    let mut sorted: Vec<&TextLine> = lines.to_vec();
    sorted.sort_by(|a, b| position_order(&a.bbox, &b.bbox).then_with(|| a.text.cmp(&b.text)));
    let mut bands: Vec<(f32, f32, Vec<&TextLine>)> = Vec::new();
    for line in sorted {
        match bands.last_mut() {
            Some((top, bottom, members))
                if vertical_overlap_ratio(*top, *bottom, &line.bbox) >= BAND_OVERLAP =>
            {
                *top = top.min(line.bbox.y_top);
                *bottom = bottom.max(line.bbox.y_bottom);
                members.push(line);
            }
            _ => bands.push((line.bbox.y_top, line.bbox.y_bottom, vec![line])),
        }
    }
    bands
        .into_iter()
        .flat_map(|(_, _, mut members)| {
            members.sort_by(|a, b| a.bbox.x_left.total_cmp(&b.bbox.x_left));
            members
        })
        .map(|l| l.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Text for each predicted cell box, built from the lines assigned to it.
pub fn cell_texts(cell_boxes: &[BBox], lines: &[TextLine]) -> Vec<String> {
    let assignment = match_lines(cell_boxes, lines);
    (0..cell_boxes.len())
        .map(|cell| {
            let mine: Vec<&TextLine> = lines
                .iter()
                .zip(&assignment)
                .filter(|(_, a)| **a == Some(cell))
                .map(|(l, _)| l)
                .collect();
            merge_cell_content(&mine)
        })
        .collect()
}

pub fn escape_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

/// HTML for `grid`; `texts` supplies content for non-empty cells in document
/// order (missing entries leave the cell blank).
pub fn grid_to_html(grid: &TableGrid, texts: &[String]) -> String {
    let mut html = String::from("<table>");
    let mut next = 0;
    for row in grid.rows() {
        html.push_str("<tr>");
        for cell in row {
            html.push_str("<td");
            if cell.colspan > 1 {
                html.push_str(&format!(" colspan=\"{}\"", cell.colspan));
            }
            if cell.rowspan > 1 {
                html.push_str(&format!(" rowspan=\"{}\"", cell.rowspan));
            }
            html.push('>');
            if !cell.is_empty {
                if let Some(t) = texts.get(next) {
                    html.push_str(&escape_html(t));
                }
                next += 1;
            }
            html.push_str("</td>");
        }
        html.push_str("</tr>");
    }
    html.push_str("</table>");
    html
}

/// Expands predicted structure tokens into HTML with `texts` inserted into
/// the non-empty cells. The structure is used exactly as decoded.
pub fn assemble_html(tokens: &TokenSeq, texts: &[String]) -> String {
    grid_to_html(&detokenize(tokens).grid, texts)
}

/// Ground-truth HTML with the annotated cell contents.
pub fn annotated_html(grid: &TableGrid) -> String {
    let texts: Vec<String> = grid.non_empty_cells().map(|c| c.content.clone()).collect();
    grid_to_html(grid, &texts)
}
