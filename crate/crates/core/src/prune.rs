//! Cost-complexity pruning.
//!
//! The objective for a subtree `T` of a fitted tree is
//! `‖Y − μ̂(T)‖²_n + (α · ln(n p) / n) · #leaves(T)`, minimized over all
//! subtrees reachable by collapsing internal nodes. Ties collapse.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tree::{Node, NodeKind, StopReason, Tree};

/// Relative slack under which a collapse is treated as a tie.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub alpha: f64,
}

impl PruneConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::config(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(PruneConfig { alpha })
    }

    /// Per-leaf penalty `α ln(n p) / n`.
    pub fn penalty_rate(&self, n: usize, p: usize) -> f64 {
        self.alpha * penalty_log(n, p) / n as f64
    }
}

fn penalty_log(n: usize, p: usize) -> f64 {
    ((n as f64) * (p as f64)).ln()
}

/// Per-node contribution `(1/n) Σ_{i ∈ t} (Y_i − Ȳ_t)²` when `t` is a leaf.
fn node_risks(tree: &Tree, data: &Dataset) -> Result<Vec<f64>> {
    let rows = tree.node_rows(data)?;
    let y = data.response();
    let n = data.n() as f64;
    Ok(tree
        .nodes()
        .iter()
        .zip(&rows)
        .map(|(node, rs)| rs.iter().map(|&i| (y[i] - node.mean).powi(2)).sum::<f64>() / n)
        .collect())
}

/// Training error plus leaf penalty of `tree` on `data`.
pub fn objective(tree: &Tree, data: &Dataset, config: &PruneConfig) -> Result<f64> {
    let rate = config.penalty_rate(data.n(), data.p());
    Ok(tree.training_error(data)? + rate * tree.n_leaves() as f64)
}

/// Returns the subtree minimizing the penalized training error.
pub fn prune(tree: &Tree, data: &Dataset, config: &PruneConfig) -> Result<Tree> {
    let risks = node_risks(tree, data)?;
    let rate = config.penalty_rate(data.n(), data.p());
    let collapse = optimal_collapses(tree, &risks, rate);
    Ok(rebuild(tree, &collapse))
}

/// Bottom-up pass: `collapse[t]` is set when turning `t` into a leaf is at
/// least as good as its best subtree. Children always have larger ids.
fn optimal_collapses(tree: &Tree, risks: &[f64], rate: f64) -> Vec<bool> {
    let nodes = tree.nodes();
    let mut best = vec![0.0; nodes.len()];
    let mut collapse = vec![false; nodes.len()];
    for id in (0..nodes.len()).rev() {
        let leaf_cost = risks[id] + rate;
        match nodes[id].children() {
            None => best[id] = leaf_cost,
            Some((l, r)) => {
                let split_cost = best[l] + best[r];
                if leaf_cost <= split_cost + TIE_EPS * (1.0 + split_cost.abs()) {
                    collapse[id] = true;
                    best[id] = leaf_cost;
                } else {
                    best[id] = split_cost;
                }
            }
        }
    }
    collapse
}

/// Copies the part of `tree` above the collapsed nodes, renumbering in level order.
fn rebuild(tree: &Tree, collapse: &[bool]) -> Tree {
    let old = tree.nodes();
    let mut nodes: Vec<Node> = Vec::new();
    let mut queue = std::collections::VecDeque::from([(0usize, 0usize)]);
    nodes.push(Node { id: 0, ..old[0].clone() });
    while let Some((old_id, new_id)) = queue.pop_front() {
        let src = &old[old_id];
        match src.kind {
            NodeKind::Internal {
                feature,
                threshold,
                gain,
                left,
                right,
            } if !collapse[old_id] => {
                let (nl, nr) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node { id: nl, ..old[left].clone() });
                nodes.push(Node { id: nr, ..old[right].clone() });
                nodes[new_id].kind = NodeKind::Internal {
                    feature,
                    threshold,
                    gain,
                    left: nl,
                    right: nr,
                };
                queue.push_back((left, nl));
                queue.push_back((right, nr));
            }
            NodeKind::Internal { .. } => {
                nodes[new_id].kind = NodeKind::Leaf {
                    stop_reason: StopReason::Pruned,
                };
            }
            NodeKind::Leaf { .. } => {}
        }
    }
    Tree::from_parts(nodes, tree.max_depth(), tree.mtry(), tree.seed(), tree.n(), tree.p())
}

/// One step of the weakest-link sequence: for `alpha` in
/// `[alpha, next entry's alpha)` the optimal subtree has `leaves` leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunePathEntry {
    pub alpha: f64,
    pub leaves: usize,
    pub train_mse: f64,
}

/// Weakest-link solution path, with breakpoints expressed in `alpha` units.
pub fn prune_path(tree: &Tree, data: &Dataset) -> Result<Vec<PrunePathEntry>> {
    let risks = node_risks(tree, data)?;
    let nodes = tree.nodes();
    let scale = data.n() as f64 / penalty_log(data.n(), data.p());
    let mut collapsed = optimal_collapses(tree, &risks, 0.0);
    let mut path = Vec::new();

    loop {
        // Subtree leaf risk and leaf count of every active node.
        let mut sub_risk = vec![0.0; nodes.len()];
        let mut sub_leaves = vec![0usize; nodes.len()];
        let mut active = vec![false; nodes.len()];
        active[0] = true;
        for id in 0..nodes.len() {
            if !active[id] || collapsed[id] {
                continue;
            }
            if let Some((l, r)) = nodes[id].children() {
                active[l] = true;
                active[r] = true;
            }
        }
        for id in (0..nodes.len()).rev() {
            if !active[id] {
                continue;
            }
            match nodes[id].children() {
                Some((l, r)) if !collapsed[id] => {
                    sub_risk[id] = sub_risk[l] + sub_risk[r];
                    sub_leaves[id] = sub_leaves[l] + sub_leaves[r];
                }
                _ => {
                    sub_risk[id] = risks[id];
                    sub_leaves[id] = 1;
                }
            }
        }
        let prev_alpha = path.last().map_or(0.0, |e: &PrunePathEntry| e.alpha);
        let links: Vec<(usize, f64)> = (0..nodes.len())
            .filter(|&id| active[id] && !collapsed[id] && nodes[id].children().is_some())
            .map(|id| {
                let g = (risks[id] - sub_risk[id]) / (sub_leaves[id] - 1) as f64;
                (id, g.max(0.0))
            })
            .collect();

        if path.is_empty() {
            path.push(PrunePathEntry {
                alpha: 0.0,
                leaves: sub_leaves[0],
                train_mse: sub_risk[0],
            });
        }
        let Some(weakest) = links.iter().map(|&(_, g)| g).reduce(f64::min) else {
            break;
        };
        for &(id, g) in &links {
            if g <= weakest + TIE_EPS * (1.0 + weakest.abs()) {
                collapsed[id] = true;
            }
        }
        // Leaf count and risk after this round of collapses.
        let (risk, leaves) = subtree_totals(tree, &risks, &collapsed);
        path.push(PrunePathEntry {
            alpha: (weakest * scale).max(prev_alpha),
            leaves,
            train_mse: risk,
        });
    }
    Ok(path)
}

fn subtree_totals(tree: &Tree, risks: &[f64], collapsed: &[bool]) -> (f64, usize) {
    let nodes = tree.nodes();
    let mut stack = vec![0usize];
    let (mut risk, mut leaves) = (0.0, 0);
    while let Some(id) = stack.pop() {
        match nodes[id].children() {
            Some((l, r)) if !collapsed[id] => {
                stack.push(r);
                stack.push(l);
            }
            _ => {
                risk += risks[id];
                leaves += 1;
            }
        }
    }
    (risk, leaves)
}
