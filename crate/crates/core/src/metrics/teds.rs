//! Tree-edit-distance similarity (TEDS) with Zhang–Shasha ordered tree edit
//! distance.
//!
//! Insertions and deletions cost 1. Relabelling costs 1 when tags or spans
//! differ; two `td` nodes with equal spans cost the normalized character
//! edit distance of their contents, or 0 in structure-only mode (S-TEDS).

use super::strsim::normalized_levenshtein;
use super::tree::{Node, TableTree, Tag};

pub fn rename_cost(a: &Node, b: &Node, structure_only: bool) -> f64 {
    if a.tag != b.tag || a.colspan != b.colspan || a.rowspan != b.rowspan {
        1.0
    } else if a.tag == Tag::Td && !structure_only {
        normalized_levenshtein(&a.content, &b.content)
    } else {
        0.0
    }
}

struct Indexed<'a> {
    nodes: Vec<&'a Node>,
    /// Post-order index of each node's leftmost leaf descendant.
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Indexed<'a> {
    fn new(tree: &'a TableTree) -> Self {
        let order = tree.postorder();
        let mut pos = vec![0; tree.len()];
        for (i, &id) in order.iter().enumerate() {
            pos[id] = i;
        }
        let mut leftmost = vec![0; order.len()];
        for (i, &id) in order.iter().enumerate() {
            let mut n = id;
            while let Some(&first) = tree.nodes[n].children.first() {
                n = first;
            }
            leftmost[i] = pos[n];
        }
        let keyroots = (0..order.len())
            .filter(|&i| !(i + 1..order.len()).any(|j| leftmost[j] == leftmost[i]))
            .collect();
        Self {
            nodes: order.iter().map(|&id| &tree.nodes[id]).collect(),
            leftmost,
            keyroots,
        }
    }
}

/// Ordered tree edit distance between `a` and `b`.
pub fn tree_edit_distance(a: &TableTree, b: &TableTree, structure_only: bool) -> f64 {
    let a = Indexed::new(a);
    let b = Indexed::new(b);
    let (na, nb) = (a.nodes.len(), b.nodes.len());
    if na == 0 || nb == 0 {
        return (na + nb) as f64;
    }
    let mut tree_dist = vec![vec![0.0f64; nb]; na];
    let mut forest = vec![vec![0.0f64; nb + 1]; na + 1];
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.leftmost[i], b.leftmost[j]);
            let (m, n) = (i - li + 2, j - lj + 2);
            forest[0][0] = 0.0;
            for x in 1..m {
                forest[x][0] = forest[x - 1][0] + 1.0;
            }
            for y in 1..n {
                forest[0][y] = forest[0][y - 1] + 1.0;
            }
            for x in 1..m {
                for y in 1..n {
                    let (di, dj) = (li + x - 1, lj + y - 1);
                    let edit = (forest[x - 1][y] + 1.0).min(forest[x][y - 1] + 1.0);
                    if a.leftmost[di] == li && b.leftmost[dj] == lj {
                        let d = edit.min(
                            forest[x - 1][y - 1]
                                + rename_cost(a.nodes[di], b.nodes[dj], structure_only),
                        );
                        forest[x][y] = d;
                        tree_dist[di][dj] = d;
                    } else {
                        let (p, q) = (a.leftmost[di] - li, b.leftmost[dj] - lj);
                        forest[x][y] = edit.min(forest[p][q] + tree_dist[di][dj]);
                    }
                }
            }
        }
    }
    tree_dist[na - 1][nb - 1]
}

/// `1 - distance / max(|pred|, |gt|)`; two empty trees score 1.
pub fn teds(pred: &TableTree, gt: &TableTree, structure_only: bool) -> f64 {
    let n = pred.len().max(gt.len());
    if n == 0 {
        return 1.0;
    }
    (1.0 - tree_edit_distance(pred, gt, structure_only) / n as f64).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Cell, TableGrid};

    fn tree(html: &str) -> TableTree {
        TableTree::from_html(html).unwrap()
    }

    #[test]
    fn identical_trees_score_one() {
        let t = tree("<table><tr><td>a</td><td colspan=\"2\">b</td></tr></table>");
        assert_eq!(teds(&t, &t, false), 1.0);
        assert_eq!(teds(&t, &t, true), 1.0);
    }

    #[test]
    fn missing_row_costs_two_of_three() {
        let gt = tree("<table><tr><td></td></tr></table>");
        let pred = tree("<table></table>");
        assert_eq!(tree_edit_distance(&pred, &gt, true), 2.0);
        assert!((teds(&pred, &gt, true) - (1.0 - 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn structure_only_ignores_content() {
        let gt = tree("<table><tr><td>abc</td><td>x</td></tr></table>");
        let pred = tree("<table><tr><td>abd</td><td>x</td></tr></table>");
        assert_eq!(teds(&pred, &gt, true), 1.0);
        // One of three characters differs in one td: distance 1/3 over 4 nodes.
        assert!((teds(&pred, &gt, false) - (1.0 - (1.0 / 3.0) / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn span_mismatch_is_a_full_relabel() {
        let gt = tree("<table><tr><td colspan=\"2\"></td></tr></table>");
        let pred = tree("<table><tr><td></td></tr></table>");
        assert!((teds(&pred, &gt, true) - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn extra_cell_is_one_insert() {
        let gt = TableTree::from_grid(&TableGrid::simple(2, 2), false);
        let pred = TableTree::from_grid(
            &TableGrid::new(vec![vec![Cell::filled(); 3], vec![Cell::filled(); 2]]),
            false,
        );
        assert_eq!(tree_edit_distance(&pred, &gt, true), 1.0);
        assert!((teds(&pred, &gt, true) - (1.0 - 1.0 / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_trees() {
        let empty = TableTree::default();
        assert_eq!(teds(&empty, &empty, false), 1.0);
        let one = TableTree::from_grid(&TableGrid::simple(1, 1), false);
        assert_eq!(teds(&empty, &one, false), 0.0);
    }
}
