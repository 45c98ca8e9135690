//! Canonical table model.
//!
//! A [`TableGrid`] stores cells row by row in HTML order: each row lists the
//! cells whose top-left slot lies in that row. Expanding every cell by its
//! spans yields the [`CellMatrix`], which is what adjacency- and grid-based
//! metrics operate on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in resized-image pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_left: f32,
    pub y_top: f32,
    pub x_right: f32,
    pub y_bottom: f32,
}

impl BBox {
    pub const fn new(x_left: f32, y_top: f32, x_right: f32, y_bottom: f32) -> Self {
        Self {
            x_left,
            y_top,
            x_right,
            y_bottom,
        }
    }

    pub fn from_array([l, t, r, b]: [f32; 4]) -> Self {
        Self::new(l, t, r, b)
    }

    pub fn to_array(self) -> [f32; 4] {
        [self.x_left, self.y_top, self.x_right, self.y_bottom]
    }

    pub fn width(&self) -> f32 {
        (self.x_right - self.x_left).max(0.0)
    }

    pub fn height(&self) -> f32 {
        (self.y_bottom - self.y_top).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() as f64 * self.height() as f64
    }

    pub fn center(&self) -> (f32, f32) {
        (
            0.5 * (self.x_left + self.x_right),
            0.5 * (self.y_top + self.y_bottom),
        )
    }

    /// Well ordered and inside `[0, side]²`.
    pub fn is_within(&self, side: f32) -> bool {
        self.x_left <= self.x_right
            && self.y_top <= self.y_bottom
            && self.to_array().iter().all(|v| (0.0..=side).contains(v))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_right.min(other.x_right) - self.x_left.max(other.x_left);
        let h = self.y_bottom.min(other.y_bottom) - self.y_top.max(other.y_top);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w as f64 * h as f64
        }
    }

    /// Intersection over union; two degenerate boxes have IoU 0.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x_left.min(other.x_left),
            self.y_top.min(other.y_top),
            self.x_right.max(other.x_right),
            self.y_bottom.max(other.y_bottom),
        )
    }

    pub fn translate(&self, dx: f32, dy: f32) -> BBox {
        BBox::new(
            self.x_left + dx,
            self.y_top + dy,
            self.x_right + dx,
            self.y_bottom + dy,
        )
    }
}

/// One table cell. Spanning cells cover `rowspan × colspan` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub rowspan: u32,
    pub colspan: u32,
    pub is_empty: bool,
    /// Cell text; empty for structure-only grids (e.g. decoded predictions).
    pub content: String,
    pub content_bbox: Option<BBox>,
}

impl Cell {
    pub fn filled() -> Self {
        Self::spanning(1, 1)
    }

    pub fn empty() -> Self {
        Self {
            rowspan: 1,
            colspan: 1,
            is_empty: true,
            content: String::new(),
            content_bbox: None,
        }
    }

    /// A non-empty cell with the given spans and no annotation.
    pub fn spanning(rowspan: u32, colspan: u32) -> Self {
        Self {
            rowspan,
            colspan,
            is_empty: false,
            content: String::new(),
            content_bbox: None,
        }
    }

    pub fn with_content(mut self, text: impl Into<String>, bbox: BBox) -> Self {
        self.content = text.into();
        self.content_bbox = Some(bbox);
        self.is_empty = false;
        self
    }

    pub fn is_spanning(&self) -> bool {
        self.rowspan > 1 || self.colspan > 1
    }

    /// Structural equality: spans and emptiness only.
    pub fn same_structure(&self, other: &Cell) -> bool {
        self.rowspan == other.rowspan
            && self.colspan == other.colspan
            && self.is_empty == other.is_empty
    }
}

/// Logical table structure: rows of cells in HTML order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TableGrid {
    rows: Vec<Vec<Cell>>,
    n_rows: usize,
    n_cols: usize,
}

impl TableGrid {
    /// Builds a grid without checking the tiling invariant; dimensions are
    /// those of the lenient layout. Use [`TableGrid::validate`] or
    /// [`TableGrid::from_rows`] when the input must tile exactly.
    pub fn new(rows: Vec<Vec<Cell>>) -> Self {
        let mut grid = Self {
            rows,
            n_rows: 0,
            n_cols: 0,
        };
        let layout = grid.layout();
        grid.n_rows = layout.matrix.n_rows;
        grid.n_cols = layout.matrix.n_cols;
        grid
    }

    /// Builds a grid and checks that spans tile the matrix exactly.
    pub fn from_rows(rows: Vec<Vec<Cell>>) -> Result<Self> {
        let grid = Self::new(rows);
        grid.validate()?;
        Ok(grid)
    }

    /// `n_rows × n_cols` grid of simple non-empty cells.
    pub fn simple(n_rows: usize, n_cols: usize) -> Self {
        Self::new(vec![vec![Cell::filled(); n_cols]; n_rows])
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.is_empty())
    }

    /// Cells in document order.
    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.rows.iter().flatten()
    }

    pub fn cells_mut(&mut self) -> impl Iterator<Item = &mut Cell> {
        self.rows.iter_mut().flatten()
    }

    pub fn n_cells(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Non-empty cells in document order. These are the cells that trigger
    /// box decoding; spanning cells always count as non-empty.
    pub fn non_empty_cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells().filter(|c| !c.is_empty)
    }

    /// Structural equality ignoring content and boxes.
    pub fn same_structure(&self, other: &TableGrid) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_structure(y))
            })
    }

    /// Copy with content and boxes stripped.
    pub fn structure_only(&self) -> TableGrid {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| Cell {
                        content: String::new(),
                        content_bbox: None,
                        ..c.clone()
                    })
                    .collect()
            })
            .collect();
        TableGrid {
            rows,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
        }
    }

    /// Checks the span and tiling invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.cells().find(|c| c.rowspan == 0 || c.colspan == 0) {
            return Err(Error::Structure(format!(
                "span must be at least 1, got rowspan={} colspan={}",
                c.rowspan, c.colspan
            )));
        }
        let layout = self.layout();
        if layout.overlaps > 0 {
            return Err(Error::Structure(format!(
                "{} slot(s) claimed by more than one cell",
                layout.overlaps
            )));
        }
        if layout.matrix.n_rows != self.rows.len() {
            return Err(Error::Structure(format!(
                "row spans extend to {} rows but the table has {}",
                layout.matrix.n_rows,
                self.rows.len()
            )));
        }
        if let Some(idx) = layout.matrix.slots.iter().position(Option::is_none) {
            let n_cols = layout.matrix.n_cols;
            return Err(Error::Structure(format!(
                "slot ({}, {}) is not covered by any cell",
                idx / n_cols,
                idx % n_cols
            )));
        }
        Ok(())
    }

    /// Checks the annotation invariant of every cell: emptiness, text and box
    /// presence agree.
    pub fn validate_annotations(&self) -> Result<()> {
        for (i, c) in self.cells().enumerate() {
            let consistent = if c.is_empty {
                c.content.is_empty() && c.content_bbox.is_none()
            } else {
                !c.content.is_empty() && c.content_bbox.is_some()
            };
            if !consistent {
                return Err(Error::Structure(format!(
                    "cell {i}: emptiness, content and content box disagree"
                )));
            }
        }
        Ok(())
    }

    /// Expanded `n_rows × n_cols` matrix of cell indices for a valid grid.
    pub fn cell_matrix(&self) -> Result<CellMatrix> {
        self.validate()?;
        Ok(self.layout().matrix)
    }

    /// HTML-style placement that never fails: each cell takes the first free
    /// slot of its row, slots already claimed are left to their first owner
    /// and uncovered slots stay `None`.
    pub fn layout(&self) -> Layout {
        let mut occupied: Vec<Vec<Option<usize>>> = Vec::new();
        let mut anchors = Vec::with_capacity(self.n_cells());
        let mut overlaps = 0;
        let mut idx = 0;
        for (r, row) in self.rows.iter().enumerate() {
            let mut col = 0;
            for cell in row {
                ensure_rows(&mut occupied, r + 1);
                while occupied[r].get(col).copied().flatten().is_some() {
                    col += 1;
                }
                anchors.push((r, col));
                let rs = cell.rowspan.max(1) as usize;
                let cs = cell.colspan.max(1) as usize;
                ensure_rows(&mut occupied, r + rs);
                for occ_row in &mut occupied[r..r + rs] {
                    if occ_row.len() < col + cs {
                        occ_row.resize(col + cs, None);
                    }
                    for slot in &mut occ_row[col..col + cs] {
                        if slot.is_some() {
                            overlaps += 1;
                        } else {
                            *slot = Some(idx);
                        }
                    }
                }
                col += cs;
                idx += 1;
            }
        }
        let n_rows = occupied.len().max(self.rows.len());
        let n_cols = occupied.iter().map(Vec::len).max().unwrap_or(0);
        let mut slots = Vec::with_capacity(n_rows * n_cols);
        for r in 0..n_rows {
            for c in 0..n_cols {
                slots.push(
                    occupied
                        .get(r)
                        .and_then(|row| row.get(c))
                        .copied()
                        .flatten(),
                );
            }
        }
        Layout {
            matrix: CellMatrix {
                n_rows,
                n_cols,
                slots,
            },
            anchors,
            overlaps,
        }
    }
}

fn ensure_rows(occupied: &mut Vec<Vec<Option<usize>>>, n: usize) {
    if occupied.len() < n {
        occupied.resize(n, Vec::new());
    }
}

/// Result of placing cells on the slot matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub matrix: CellMatrix,
    /// Top-left slot of each cell, in document order.
    pub anchors: Vec<(usize, usize)>,
    /// Number of slots that more than one cell tried to claim.
    pub overlaps: usize,
}

/// Expanded slot matrix; each slot references a cell by its document-order
/// index. Spanning cells occupy every slot they cover.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    slots: Vec<Option<usize>>,
}

impl CellMatrix {
    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        if row < self.n_rows && col < self.n_cols {
            self.slots[row * self.n_cols + col]
        } else {
            None
        }
    }

    pub fn slots(&self) -> &[Option<usize>] {
        &self.slots
    }

    pub fn row(&self, row: usize) -> &[Option<usize>] {
        &self.slots[row * self.n_cols..(row + 1) * self.n_cols]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_simple_grid_has_distinct_slots() {
        let m = TableGrid::simple(2, 2).cell_matrix().unwrap();
        let ids: Vec<_> = m.slots().iter().map(|s| s.unwrap()).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn colspan_covers_both_slots() {
        let g = TableGrid::from_rows(vec![vec![Cell::spanning(1, 2)]]).unwrap();
        let m = g.cell_matrix().unwrap();
        assert_eq!((m.n_rows, m.n_cols), (1, 2));
        assert_eq!(m.get(0, 0), m.get(0, 1));
    }

    #[test]
    fn rowspan_covers_column_below() {
        let g = TableGrid::from_rows(vec![
            vec![Cell::spanning(2, 1), Cell::filled()],
            vec![Cell::filled()],
        ])
        .unwrap();
        let m = g.cell_matrix().unwrap();
        assert_eq!(m.get(0, 0), m.get(1, 0));
        assert_eq!(m.get(1, 1), Some(2));
        assert_eq!(g.layout().anchors, vec![(0, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = TableGrid::from_rows(vec![
            vec![Cell::filled(), Cell::filled()],
            vec![Cell::filled()],
        ]);
        assert!(matches!(err, Err(Error::Structure(_))));
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let g = TableGrid::new(vec![
            vec![Cell::spanning(2, 1), Cell::filled()],
            vec![Cell::spanning(1, 2)],
        ]);
        assert!(g.validate().is_err());
        assert_eq!(g.layout().overlaps, 0);
        let g = TableGrid::new(vec![
            vec![Cell::filled(), Cell::spanning(2, 1)],
            vec![Cell::spanning(1, 2)],
        ]);
        assert_eq!(g.layout().overlaps, 1);
        assert!(g.validate().is_err());
    }

    #[test]
    fn rowspan_past_last_row_is_rejected() {
        let g = TableGrid::new(vec![vec![Cell::spanning(2, 1)]]);
        assert!(g.validate().is_err());
        assert_eq!(g.n_rows(), 2);
    }

    #[test]
    fn zero_span_is_rejected() {
        let g = TableGrid::new(vec![vec![Cell::spanning(0, 1)]]);
        assert!(g.validate().is_err());
    }

    #[test]
    fn annotation_invariant() {
        let b = BBox::new(1.0, 1.0, 2.0, 2.0);
        let ok = TableGrid::simple(1, 1);
        assert!(ok.validate_annotations().is_err());
        let ok = TableGrid::new(vec![vec![
            Cell::filled().with_content("a", b),
            Cell::empty(),
        ]]);
        ok.validate_annotations().unwrap();
    }

    #[test]
    fn iou_basics() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 0.0, 3.0, 2.0);
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(
            BBox::new(1.0, 1.0, 1.0, 1.0).iou(&BBox::new(1.0, 1.0, 1.0, 1.0)),
            0.0
        );
    }
}
