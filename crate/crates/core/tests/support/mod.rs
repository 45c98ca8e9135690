//! Independent reference implementations shared by the integration tests and
//! the acceptance suite. Nothing here calls into the code under test beyond
//! plain data accessors.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use tabstruct_core::datagen::{sample_structure, GenConfig, IntRange};
use tabstruct_core::metrics::car::{AdjacencyRelation, Direction};
use tabstruct_core::metrics::teds::rename_cost;
use tabstruct_core::metrics::tree::TableTree;
use tabstruct_core::TableGrid;

/// Valid random grid with random emptiness and spans.
pub fn random_grid(rng: &mut impl Rng, max_rows: usize, max_cols: usize) -> TableGrid {
    let config = GenConfig {
        rows: IntRange::new(1, max_rows),
        cols: IntRange::new(1, max_cols),
        p_empty: rng.random_range(0.0..0.6),
        p_span: rng.random_range(0.0..0.4),
        max_span: max_cols.min(3) as u32,
        ..GenConfig::default()
    };
    sample_structure(&config, rng).expect("valid config")
}

/// Neighbour scan over every slot of the expanded matrix.
pub fn brute_force_relations(grid: &TableGrid) -> BTreeSet<AdjacencyRelation> {
    let m = grid.cell_matrix().expect("valid grid");
    let cells: Vec<_> = grid.cells().collect();
    let mut out = BTreeSet::new();
    for r in 0..m.n_rows {
        for c in 0..m.n_cols {
            let here = m.get(r, c).unwrap();
            for (other, direction) in [
                (m.get(r, c + 1), Direction::Horizontal),
                (m.get(r + 1, c), Direction::Vertical),
            ] {
                let Some(other) = other else { continue };
                if other != here && !cells[here].is_empty && !cells[other].is_empty {
                    out.insert(AdjacencyRelation {
                        a: here,
                        b: other,
                        direction,
                    });
                }
            }
        }
    }
    out
}

/// Recursive forest edit distance (rightmost-root decomposition, memoized).
pub fn forest_distance(a: &TableTree, b: &TableTree, structure_only: bool) -> f64 {
    fn size(t: &TableTree, forest: &[usize]) -> usize {
        forest
            .iter()
            .map(|&n| 1 + size(t, &t.nodes[n].children))
            .sum()
    }
    fn rec(
        a: &TableTree,
        b: &TableTree,
        fa: Vec<usize>,
        fb: Vec<usize>,
        so: bool,
        memo: &mut HashMap<(Vec<usize>, Vec<usize>), f64>,
    ) -> f64 {
        if fa.is_empty() {
            return size(b, &fb) as f64;
        }
        if fb.is_empty() {
            return size(a, &fa) as f64;
        }
        if let Some(&d) = memo.get(&(fa.clone(), fb.clone())) {
            return d;
        }
        let v = *fa.last().unwrap();
        let w = *fb.last().unwrap();
        let mut fa_minus_v = fa[..fa.len() - 1].to_vec();
        fa_minus_v.extend(&a.nodes[v].children);
        let mut fb_minus_w = fb[..fb.len() - 1].to_vec();
        fb_minus_w.extend(&b.nodes[w].children);
        let del = rec(a, b, fa_minus_v, fb.clone(), so, memo) + 1.0;
        let ins = rec(a, b, fa.clone(), fb_minus_w, so, memo) + 1.0;
        let matched = rec(
            a,
            b,
            fa[..fa.len() - 1].to_vec(),
            fb[..fb.len() - 1].to_vec(),
            so,
            memo,
        ) + rec(
            a,
            b,
            a.nodes[v].children.clone(),
            b.nodes[w].children.clone(),
            so,
            memo,
        ) + rename_cost(&a.nodes[v], &b.nodes[w], so);
        let d = del.min(ins).min(matched);
        memo.insert((fa, fb), d);
        d
    }
    let roots = |t: &TableTree| t.root().into_iter().collect::<Vec<_>>();
    rec(
        a,
        b,
        roots(a),
        roots(b),
        structure_only,
        &mut HashMap::new(),
    )
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    (0..1u32 << n)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

/// Best total similarity over every pair of equal-size row subsets and
/// equal-size column subsets, paired in order.
pub fn exhaustive_alignment(
    a: (usize, usize),
    b: (usize, usize),
    sim: &dyn Fn(usize, usize, usize, usize) -> f64,
) -> f64 {
    let (ra, rb, ca, cb) = (subsets(a.0), subsets(b.0), subsets(a.1), subsets(b.1));
    let mut best = 0.0f64;
    for x in &ra {
        for y in rb.iter().filter(|y| y.len() == x.len()) {
            for p in &ca {
                for q in cb.iter().filter(|q| q.len() == p.len()) {
                    let mut s = 0.0;
                    for (i, k) in x.iter().zip(y) {
                        for (j, l) in p.iter().zip(q) {
                            s += sim(*i, *j, *k, *l);
                        }
                    }
                    best = best.max(s);
                }
            }
        }
    }
    best
}
