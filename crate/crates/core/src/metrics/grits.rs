//! Grid table similarity (GriTS).
//!
//! Both tables are expanded to slot matrices. The score aligns a subsequence
//! of rows and of columns in each matrix (the most similar substructure) and
//! returns `2·Σ sim / (|A| + |B|)` over the aligned entries, where `|A|` is
//! the number of slots of a matrix.
//!
//! Given a column alignment, the best row alignment is a one-dimensional
//! dynamic program, so the alignment is exact whenever one axis has few
//! enough monotone matchings to enumerate (`C(n + m, n)` of them for `n` and
//! `m` lines). Larger tables use the factored heuristic: rows aligned by the
//! sum of their best column alignments, columns likewise, then alternating
//! exact one-dimensional programs over rows and columns until the score stops
//! improving.

use crate::error::{Error, Result};
use crate::grid::{BBox, TableGrid};

use super::strsim::lcs_similarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GritsVariant {
    /// Cell topology: IoU of each slot's span box relative to the slot.
    Top,
    /// Cell text: `2·LCS / (|a| + |b|)`.
    Cont,
    /// Cell location: IoU of content boxes.
    Loc,
}

#[derive(Debug, Clone, PartialEq)]
enum Entry {
    Hole,
    Top([f64; 4]),
    Cont(String),
    Loc(Option<BBox>),
}

fn rel_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    let inter = if w > 0.0 && h > 0.0 { w * h } else { 0.0 };
    let area = |x: &[f64; 4]| (x[2] - x[0]) * (x[3] - x[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn entry_similarity(a: &Entry, b: &Entry) -> f64 {
    match (a, b) {
        (Entry::Hole, Entry::Hole) => 1.0,
        (Entry::Top(x), Entry::Top(y)) => rel_iou(x, y),
        (Entry::Cont(x), Entry::Cont(y)) => lcs_similarity(x, y),
        (Entry::Loc(None), Entry::Loc(None)) => 1.0,
        (Entry::Loc(Some(x)), Entry::Loc(Some(y))) => x.iou(y),
        _ => 0.0,
    }
}

struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<Entry>,
}

fn matrix(grid: &TableGrid, variant: GritsVariant) -> Matrix {
    let layout = grid.layout();
    let m = &layout.matrix;
    let cells: Vec<_> = grid.cells().collect();
    let mut entries = Vec::with_capacity(m.n_rows * m.n_cols);
    for r in 0..m.n_rows {
        for c in 0..m.n_cols {
            let entry = match m.get(r, c) {
                None => Entry::Hole,
                Some(idx) => {
                    let cell = cells[idx];
                    let (ar, ac) = layout.anchors[idx];
                    match variant {
                        GritsVariant::Top => {
                            let x0 = ac as f64 - c as f64;
                            let y0 = ar as f64 - r as f64;
                            Entry::Top([x0, y0, x0 + cell.colspan as f64, y0 + cell.rowspan as f64])
                        }
                        GritsVariant::Cont => Entry::Cont(cell.content.clone()),
                        GritsVariant::Loc => Entry::Loc(cell.content_bbox),
                    }
                }
            };
            entries.push(entry);
        }
    }
    Matrix {
        rows: m.n_rows,
        cols: m.n_cols,
        entries,
    }
}

/// Row and column pairs of an alignment plus its summed similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub rows: Vec<(usize, usize)>,
    pub cols: Vec<(usize, usize)>,
    pub score: f64,
}

/// Maximum-weight monotone matching of `0..n` with `0..m`.
fn align_1d(
    n: usize,
    m: usize,
    weight: impl Fn(usize, usize) -> f64,
) -> (Vec<(usize, usize)>, f64) {
    let mut d = vec![vec![0.0f64; m + 1]; n + 1];
    for i in 1..=n {
        for k in 1..=m {
            d[i][k] = d[i - 1][k]
                .max(d[i][k - 1])
                .max(d[i - 1][k - 1] + weight(i - 1, k - 1));
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut k) = (n, m);
    while i > 0 && k > 0 {
        if d[i][k] == d[i - 1][k] {
            i -= 1;
        } else if d[i][k] == d[i][k - 1] {
            k -= 1;
        } else {
            pairs.push((i - 1, k - 1));
            i -= 1;
            k -= 1;
        }
    }
    pairs.reverse();
    (pairs, d[n][m])
}

/// Largest number of monotone matchings enumerated for an exact alignment.
pub const EXACT_MATCHING_BUDGET: u128 = 20_000;

fn n_matchings(n: usize, m: usize) -> u128 {
    // C(n + m, n)
    let mut c: u128 = 1;
    for i in 0..n.min(m) as u128 {
        c = c.saturating_mul(n.max(m) as u128 + 1 + i) / (i + 1);
    }
    c
}

/// Calls `visit` with every monotone matching of `0..n` with `0..m`.
fn for_each_matching(n: usize, m: usize, visit: &mut impl FnMut(&[(usize, usize)])) {
    fn rec(
        n: usize,
        m: usize,
        from: (usize, usize),
        cur: &mut Vec<(usize, usize)>,
        visit: &mut impl FnMut(&[(usize, usize)]),
    ) {
        visit(cur);
        for i in from.0..n {
            for k in from.1..m {
                cur.push((i, k));
                rec(n, m, (i + 1, k + 1), cur, visit);
                cur.pop();
            }
        }
    }
    rec(n, m, (0, 0), &mut Vec::new(), visit);
}

/// Two-dimensional most-similar-substructure alignment between an
/// `a_rows × a_cols` and a `b_rows × b_cols` matrix with entry similarity
/// `sim(i, j, k, l)` between `A[i][j]` and `B[k][l]` (values in `[0, 1]`).
/// Exact when either axis has at most [`EXACT_MATCHING_BUDGET`] matchings.
pub fn align_2d(
    a: (usize, usize),
    b: (usize, usize),
    sim: impl Fn(usize, usize, usize, usize) -> f64,
) -> Alignment {
    let by_cols = n_matchings(a.1, b.1);
    let by_rows = n_matchings(a.0, b.0);
    if by_cols.min(by_rows) > EXACT_MATCHING_BUDGET {
        return align_2d_heuristic(a, b, sim);
    }
    let sim = &sim;
    let mut best = Alignment {
        rows: Vec::new(),
        cols: Vec::new(),
        score: f64::NEG_INFINITY,
    };
    if by_cols <= by_rows {
        for_each_matching(a.1, b.1, &mut |cols| {
            let (rows, score) = align_1d(a.0, b.0, |i, k| {
                cols.iter().map(|&(j, l)| sim(i, j, k, l)).sum()
            });
            if score > best.score + 1e-12 {
                best = Alignment {
                    rows,
                    cols: cols.to_vec(),
                    score,
                };
            }
        });
    } else {
        for_each_matching(a.0, b.0, &mut |rows| {
            let (cols, score) = align_1d(a.1, b.1, |j, l| {
                rows.iter().map(|&(i, k)| sim(i, j, k, l)).sum()
            });
            if score > best.score + 1e-12 {
                best = Alignment {
                    rows: rows.to_vec(),
                    cols,
                    score,
                };
            }
        });
    }
    best
}

/// Factored start refined by alternating row and column programs. Never
/// exceeds the exact optimum; may fall short of it.
pub fn align_2d_heuristic(
    (a_rows, a_cols): (usize, usize),
    (b_rows, b_cols): (usize, usize),
    sim: impl Fn(usize, usize, usize, usize) -> f64,
) -> Alignment {
    let sim = &sim;
    let eval = |rows: &[(usize, usize)], cols: &[(usize, usize)]| -> f64 {
        rows.iter()
            .flat_map(|&(i, k)| cols.iter().map(move |&(j, l)| sim(i, j, k, l)))
            .sum()
    };
    // Factored start: each row pair weighs its best column alignment.
    let (mut rows, _) = align_1d(a_rows, b_rows, |i, k| {
        align_1d(a_cols, b_cols, |j, l| sim(i, j, k, l)).1
    });
    let (mut cols, _) = align_1d(a_cols, b_cols, |j, l| {
        align_1d(a_rows, b_rows, |i, k| sim(i, j, k, l)).1
    });
    let mut score = eval(&rows, &cols);
    loop {
        let (new_rows, _) = align_1d(a_rows, b_rows, |i, k| {
            cols.iter().map(|&(j, l)| sim(i, j, k, l)).sum()
        });
        let (new_cols, new_score) = align_1d(a_cols, b_cols, |j, l| {
            new_rows.iter().map(|&(i, k)| sim(i, j, k, l)).sum()
        });
        if new_score <= score + 1e-12 {
            break;
        }
        rows = new_rows;
        cols = new_cols;
        score = new_score;
    }
    Alignment { rows, cols, score }
}

/// GriTS of `pred` against `gt`. Two empty tables score 1, exactly one empty
/// table scores 0.
pub fn grits(pred: &TableGrid, gt: &TableGrid, variant: GritsVariant) -> Result<f64> {
    match variant {
        GritsVariant::Loc => {
            let missing = |g: &TableGrid| g.non_empty_cells().any(|c| c.content_bbox.is_none());
            if missing(pred) || missing(gt) {
                return Err(Error::MetricInput(
                    "GriTS-Loc needs a box for every non-empty cell".into(),
                ));
            }
        }
        GritsVariant::Cont => {
            if gt.non_empty_cells().any(|c| c.content.is_empty()) {
                return Err(Error::MetricInput(
                    "GriTS-Cont needs text for every non-empty ground-truth cell".into(),
                ));
            }
        }
        GritsVariant::Top => {}
    }
    let a = matrix(pred, variant);
    let b = matrix(gt, variant);
    let (na, nb) = (a.rows * a.cols, b.rows * b.cols);
    if na == 0 && nb == 0 {
        return Ok(1.0);
    }
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    let sims: Vec<f64> = a
        .entries
        .iter()
        .flat_map(|ea| b.entries.iter().map(move |eb| entry_similarity(ea, eb)))
        .collect();
    let alignment = align_2d((a.rows, a.cols), (b.rows, b.cols), |i, j, k, l| {
        sims[(i * a.cols + j) * nb + k * b.cols + l]
    });
    Ok(2.0 * alignment.score / (na + nb) as f64)
}

/// Exact content-matrix match: same slot layout, same spans and the same
/// whitespace-normalized text everywhere.
pub fn content_exact_match(pred: &TableGrid, gt: &TableGrid) -> bool {
    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    pred.same_structure(gt)
        && pred
            .cells()
            .zip(gt.cells())
            .all(|(p, g)| norm(&p.content) == norm(&g.content))
}
