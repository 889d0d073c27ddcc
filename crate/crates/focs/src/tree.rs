//! Decision-tree CPT baseline: recursive variable splitting that maximizes
//! smoothed training CLL gain, bounded by depth. Columns use the same
//! add-one smoothing as the FoCS estimator.

use serde::{Deserialize, Serialize};

use crate::data::FamilyView;
use crate::focs::CptColumn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        var: usize,
        lo: Box<TreeNode>,
        hi: Box<TreeNode>,
    },
    Leaf {
        p1: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TreeCpt {
    pub root: TreeNode,
}

fn smoothed_p1(x1: u64, total: u64) -> f64 {
    (x1 as f64 + 1.0) / (total as f64 + 2.0)
}

fn leaf_cll(x1: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = smoothed_p1(x1, total);
    let x0 = total - x1;
    let mut cll = 0.0;
    if x1 > 0 {
        cll += x1 as f64 * p.ln();
    }
    if x0 > 0 {
        cll += x0 as f64 * (1.0 - p).ln();
    }
    cll
}

fn counts(view: &FamilyView, rows: &[usize]) -> (u64, u64) {
    let mut total = 0;
    let mut x1 = 0;
    for &i in rows {
        total += view.weight(i);
        x1 += view.weight(i) * u64::from(view.child_bit(i));
    }
    (x1, total)
}

fn grow(view: &FamilyView, rows: &[usize], used: &mut Vec<bool>, depth_left: usize) -> TreeNode {
    let (x1, total) = counts(view, rows);
    let leaf = TreeNode::Leaf {
        p1: smoothed_p1(x1, total),
    };
    if depth_left == 0 || total == 0 || x1 == 0 || x1 == total {
        return leaf;
    }
    let base = leaf_cll(x1, total);
    let mut best: Option<(usize, f64)> = None;
    for pi in 0..view.num_parents() {
        if used[pi] {
            continue;
        }
        let lo_rows: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| view.parent_bits(i)[pi] == 0)
            .collect();
        let hi_rows: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| view.parent_bits(i)[pi] == 1)
            .collect();
        let (lx1, lt) = counts(view, &lo_rows);
        let (hx1, ht) = counts(view, &hi_rows);
        let gain = leaf_cll(lx1, lt) + leaf_cll(hx1, ht) - base;
        // Lowest parent index wins ties, so strict improvement only.
        if gain > 1e-9 && best.map_or(true, |(_, g)| gain > g) {
            best = Some((pi, gain));
        }
    }
    let Some((pi, _)) = best else {
        return leaf;
    };
    let lo_rows: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| view.parent_bits(i)[pi] == 0)
        .collect();
    let hi_rows: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| view.parent_bits(i)[pi] == 1)
        .collect();
    used[pi] = true;
    let lo = grow(view, &lo_rows, used, depth_left - 1);
    let hi = grow(view, &hi_rows, used, depth_left - 1);
    used[pi] = false;
    TreeNode::Split {
        var: pi,
        lo: Box::new(lo),
        hi: Box::new(hi),
    }
}

/// Learns a depth-bounded tree CPT. Splitting stops at the depth bound, on
/// a pure leaf, or when no variable yields a positive CLL gain.
pub fn learn_tree(view: &FamilyView, max_depth: usize) -> TreeCpt {
    let rows: Vec<usize> = (0..view.num_records()).collect();
    let mut used = vec![false; view.num_parents()];
    TreeCpt {
        root: grow(view, &rows, &mut used, max_depth),
    }
}

impl TreeCpt {
    /// Walks the tree on a parent assignment (indexed in parent order).
    pub fn predict(&self, u: &[u8]) -> CptColumn {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { p1 } => return CptColumn { p1: *p1 },
                TreeNode::Split { var, lo, hi } => {
                    node = if u[*var] == 1 { hi } else { lo };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        fn walk(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { .. } => 1,
                TreeNode::Split { lo, hi, .. } => walk(lo) + walk(hi),
            }
        }
        walk(&self.root)
    }

    pub fn depth(&self) -> usize {
        fn walk(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { lo, hi, .. } => 1 + walk(lo).max(walk(hi)),
            }
        }
        walk(&self.root)
    }
}

/// Conditional log likelihood of the data under the tree; same semantics as
/// [`crate::focs::cll`].
pub fn tree_cll(view: &FamilyView, tree: &TreeCpt) -> f64 {
    (0..view.num_records())
        .map(|i| {
            let col = tree.predict(&view.parent_bits(i));
            view.weight(i) as f64 * col.prob(view.child_bit(i)).ln()
        })
        .sum()
}

pub fn tree_ncll_per_record(view: &FamilyView, tree: &TreeCpt) -> f64 {
    -tree_cll(view, tree) / view.total_weight() as f64
}
