//! Greedy CART regression trees.
//!
//! Trees are grown breadth-first: every node of depth `k` is split before any
//! node of depth `k + 1`, so truncating a fitted tree at depth `k` yields the
//! tree that would have been fitted with `max_depth = k` (for `Mtry::All`).
//! Node ids are arena positions and follow that level order.
//!
//! Split search walks one presorted row buffer per feature. A node owns the
//! same `[start, end)` range in every buffer; splitting a node stably
//! partitions each buffer's range so that children inherit sorted order.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Number of candidate features drawn at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mtry {
    #[default]
    All,
    Count(usize),
}

impl Mtry {
    pub fn resolve(self, p: usize) -> Result<usize> {
        match self {
            Mtry::All => Ok(p),
            Mtry::Count(q) if q >= 1 && q <= p => Ok(q),
            Mtry::Count(q) => Err(Error::config(format!("mtry must lie in [1, {p}], got {q}"))),
        }
    }
}

impl fmt::Display for Mtry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mtry::All => write!(f, "all"),
            Mtry::Count(q) => write!(f, "{q}"),
        }
    }
}

impl FromStr for Mtry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Mtry::All);
        }
        s.parse::<usize>()
            .map(Mtry::Count)
            .map_err(|_| format!("expected \"all\" or a positive integer, got {s:?}"))
    }
}

impl Serialize for Mtry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Mtry::All => s.serialize_str("all"),
            Mtry::Count(q) => s.serialize_u64(*q as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Mtry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(q) => Ok(Mtry::Count(q)),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub mtry: Mtry,
    pub seed: u64,
}

impl TreeConfig {
    pub fn new(max_depth: usize) -> Self {
        TreeConfig {
            max_depth,
            ..Default::default()
        }
    }

    pub fn with_mtry(mut self, mtry: Mtry) -> Self {
        self.mtry = mtry;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Why a leaf was not split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Depth,
    SinglePoint,
    ConstantResponse,
    /// Every candidate feature is constant on the node.
    NoValidSplit,
    /// Collapsed by cost-complexity pruning.
    Pruned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Leaf {
        stop_reason: StopReason,
    },
    Internal {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub depth: usize,
    /// Mean response of the training rows in the node.
    pub mean: f64,
    pub count: usize,
    /// `count / n`.
    pub weight: f64,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn children(&self) -> Option<(usize, usize)> {
        match self.kind {
            NodeKind::Internal { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }
}

/// A best split on one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub left_count: usize,
}

/// A fitted regression tree. Node `0` is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    max_depth: usize,
    mtry: Mtry,
    seed: u64,
    n: usize,
    p: usize,
}

/// Within-node sample variance `(1/N) Σ (Y_i - Ȳ)²`.
pub fn impurity(data: &Dataset, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    Ok(welford(data.response(), rows).1)
}

/// Mean and population variance in one centered pass.
fn welford(y: &[f64], rows: &[usize]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &r) in rows.iter().enumerate() {
        let delta = y[r] - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (y[r] - mean);
    }
    (mean, m2 / rows.len() as f64)
}

fn mean_of(y: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64
}

/// `Δ = (N_L N_R / N²)(Ȳ_L − Ȳ_R)²` from centered daughter sums.
#[inline]
fn gain_from_sums(left_sum: f64, right_sum: f64, nl: usize, nr: usize) -> f64 {
    let (nl, nr) = (nl as f64, nr as f64);
    let n = nl + nr;
    let diff = left_sum / nl - right_sum / nr;
    nl * nr / (n * n) * diff * diff
}

/// Midpoint of two consecutive distinct values, nudged so that `a <= s < b`.
#[inline]
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let s = a + (b - a) / 2.0;
    if s >= b {
        a
    } else {
        s
    }
}

/// Scans `sorted` (node rows ordered by `col`) and returns the best boundary:
/// `(threshold, gain, left_count)`. Ties keep the smallest threshold.
fn scan_sorted(col: &[f64], y: &[f64], sorted: &[usize], mean: f64) -> Option<(f64, f64, usize)> {
    let m = sorted.len();
    if m < 2 {
        return None;
    }
    let total: f64 = sorted.iter().map(|&r| y[r] - mean).sum();
    let mut left = 0.0;
    let mut best: Option<(f64, f64, usize)> = None;
    for k in 0..m - 1 {
        let r = sorted[k];
        left += y[r] - mean;
        let (a, b) = (col[r], col[sorted[k + 1]]);
        if a == b {
            continue;
        }
        let gain = gain_from_sums(left, total - left, k + 1, m - k - 1);
        if best.is_none_or(|(_, g, _)| gain > g) {
            best = Some((midpoint(a, b), gain, k + 1));
        }
    }
    best
}

/// Best threshold for `feature` over an arbitrary row set, or `None` when the
/// feature is constant on those rows.
pub fn best_split(data: &Dataset, rows: &[usize], feature: usize) -> Result<Option<Split>> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    if feature >= data.p() {
        return Err(Error::config(format!(
            "feature {feature} out of range for {} features",
            data.p()
        )));
    }
    let col = data.column(feature);
    let mut sorted = rows.to_vec();
    sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mean = mean_of(data.response(), rows);
    Ok(scan_sorted(col, data.response(), &sorted, mean).map(|(threshold, gain, left_count)| {
        Split {
            feature,
            threshold,
            gain,
            left_count,
        }
    }))
}

/// Both sides of the gain identity for one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainIdentity {
    /// Impurity decrease: parent variance minus weighted daughter variances.
    pub lhs: f64,
    /// Squared node inner product of the residual with the standardized stump.
    pub rhs: f64,
    pub gap: f64,
}

/// Evaluates the impurity gain of splitting `rows` on `x_feature <= threshold`
/// two ways: as a decrease in weighted variance, and as
/// `|<Y - Ȳ_t, Ŷ_t>_t|²` with the standardized stump `Ŷ_t`.
pub fn gain_identity_check(
    data: &Dataset,
    rows: &[usize],
    feature: usize,
    threshold: f64,
) -> Result<GainIdentity> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let col = data.column(feature);
    let y = data.response();
    let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| col[r] <= threshold);
    if left.is_empty() || right.is_empty() {
        return Err(Error::InadmissibleSplit { feature, threshold });
    }
    let n = rows.len() as f64;
    let p_left = left.len() as f64 / n;
    let p_right = right.len() as f64 / n;

    let variance = |rs: &[usize]| {
        let m = mean_of(y, rs);
        rs.iter().map(|&r| (y[r] - m) * (y[r] - m)).sum::<f64>() / rs.len() as f64
    };
    let lhs = variance(rows) - (p_left * variance(&left) + p_right * variance(&right));

    let mean = mean_of(y, rows);
    let scale = (p_left * p_right).sqrt();
    let inner = rows
        .iter()
        .map(|&r| {
            let stump = if col[r] <= threshold {
                p_right / scale
            } else {
                -p_left / scale
            };
            (y[r] - mean) * stump
        })
        .sum::<f64>()
        / n;
    let rhs = inner * inner;
    Ok(GainIdentity {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

impl Tree {
    /// Grows a tree breadth-first up to `config.max_depth`.
    ///
    /// A node becomes a leaf when it holds a single row, when all its responses
    /// are equal, when it sits at the maximum depth, or when every candidate
    /// feature is constant on it. Otherwise it is split on the candidate with
    /// the largest gain (ties: lowest feature index, then smallest threshold).
    /// With `Mtry::Count(q)`, `q < p`, a fresh uniform subset of features is
    /// drawn at every node.
    pub fn fit(data: &Dataset, config: &TreeConfig) -> Result<Tree> {
        let n = data.n();
        let p = data.p();
        let q = config.mtry.resolve(p)?;
        let y = data.response();
        let mut rng = rng::generator(config.seed);

        let mut order: Vec<Vec<usize>> = (0..p).map(|j| data.sort_index(j).to_vec()).collect();
        let mut goes_left = vec![false; n];
        let mut scratch: Vec<usize> = Vec::with_capacity(n);

        let mut nodes = vec![Node {
            id: 0,
            depth: 0,
            mean: mean_of(y, &order[0]),
            count: n,
            weight: 1.0,
            kind: NodeKind::Leaf {
                stop_reason: StopReason::Depth,
            },
        }];
        let mut queue = VecDeque::from([(0usize, 0usize, n)]);

        while let Some((id, start, end)) = queue.pop_front() {
            let depth = nodes[id].depth;
            let mean = nodes[id].mean;
            let rows = &order[0][start..end];

            let stop = if rows.len() == 1 {
                Some(StopReason::SinglePoint)
            } else if rows.iter().all(|&r| y[r] == y[rows[0]]) {
                Some(StopReason::ConstantResponse)
            } else if depth >= config.max_depth {
                Some(StopReason::Depth)
            } else {
                None
            };
            if let Some(stop_reason) = stop {
                nodes[id].kind = NodeKind::Leaf { stop_reason };
                continue;
            }

            let candidates: Vec<usize> = if q == p {
                (0..p).collect()
            } else {
                let mut c = index::sample(&mut rng, p, q).into_vec();
                c.sort_unstable();
                c
            };

            let mut best: Option<Split> = None;
            for &j in &candidates {
                if let Some((threshold, gain, left_count)) =
                    scan_sorted(data.column(j), y, &order[j][start..end], mean)
                {
                    if best.is_none_or(|b| gain > b.gain) {
                        best = Some(Split {
                            feature: j,
                            threshold,
                            gain,
                            left_count,
                        });
                    }
                }
            }
            let Some(split) = best else {
                nodes[id].kind = NodeKind::Leaf {
                    stop_reason: StopReason::NoValidSplit,
                };
                continue;
            };

            let col = data.column(split.feature);
            for &r in &order[split.feature][start..end] {
                goes_left[r] = col[r] <= split.threshold;
            }
            for buf in order.iter_mut() {
                stable_partition(&mut buf[start..end], &goes_left, &mut scratch);
            }
            let mid = start + split.left_count;
            debug_assert!(order[0][start..mid].iter().all(|&r| goes_left[r]));

            let left_id = nodes.len();
            let right_id = left_id + 1;
            for (cid, lo, hi) in [(left_id, start, mid), (right_id, mid, end)] {
                let count = hi - lo;
                nodes.push(Node {
                    id: cid,
                    depth: depth + 1,
                    mean: mean_of(y, &order[0][lo..hi]),
                    count,
                    weight: count as f64 / n as f64,
                    kind: NodeKind::Leaf {
                        stop_reason: StopReason::Depth,
                    },
                });
                queue.push_back((cid, lo, hi));
            }
            nodes[id].kind = NodeKind::Internal {
                feature: split.feature,
                threshold: split.threshold,
                gain: split.gain,
                left: left_id,
                right: right_id,
            };
        }

        Ok(Tree {
            nodes,
            max_depth: config.max_depth,
            mtry: config.mtry,
            seed: config.seed,
            n,
            p,
        })
    }

    pub(crate) fn from_parts(
        nodes: Vec<Node>,
        max_depth: usize,
        mtry: Mtry,
        seed: u64,
        n: usize,
        p: usize,
    ) -> Tree {
        Tree {
            nodes,
            max_depth,
            mtry,
            seed,
            n,
            p,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Configured maximum depth `K`.
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Length of the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn mtry(&self) -> Mtry {
        self.mtry
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of training rows.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| !n.is_leaf())
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Id of the node reached by `x` after at most `depth` splits.
    fn route(&self, x: &[f64], depth: usize) -> usize {
        let mut id = 0;
        while let NodeKind::Internal {
            feature,
            threshold,
            left,
            right,
            ..
        } = self.nodes[id].kind
        {
            if self.nodes[id].depth >= depth {
                break;
            }
            id = if x[feature] <= threshold { left } else { right };
        }
        id
    }

    pub fn leaf_of(&self, x: &[f64]) -> Result<usize> {
        self.check_dims(x)?;
        Ok(self.route(x, usize::MAX))
    }

    /// Mean response of the leaf containing `x` (`x_j <= s` goes left).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_dims(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.nodes[self.route(x, usize::MAX)].mean
    }

    /// Prediction of the tree truncated at `depth`.
    pub fn predict_at_depth(&self, x: &[f64], depth: usize) -> Result<f64> {
        self.check_dims(x)?;
        Ok(self.nodes[self.route(x, depth)].mean)
    }

    pub fn predict_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.p() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: data.p(),
            });
        }
        Ok(data.rows().map(|x| self.predict_unchecked(&x)).collect())
    }

    /// `‖Y − μ̂(T)‖²_n` on `data`.
    pub fn training_error(&self, data: &Dataset) -> Result<f64> {
        self.training_error_at_depth(data, usize::MAX)
    }

    pub fn training_error_at_depth(&self, data: &Dataset, depth: usize) -> Result<f64> {
        if data.p() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: data.p(),
            });
        }
        let y = data.response();
        let sse: f64 = data
            .rows()
            .zip(y)
            .map(|(x, &yi)| {
                let r = yi - self.nodes[self.route(&x, depth)].mean;
                r * r
            })
            .sum();
        Ok(sse / data.n() as f64)
    }

    /// Training error of the truncations `T_0, …, T_K` for `K = max_depth`.
    pub fn training_errors_by_depth(&self, data: &Dataset) -> Result<Vec<f64>> {
        (0..=self.max_depth)
            .map(|k| self.training_error_at_depth(data, k))
            .collect()
    }

    /// Training rows falling in each node, routed through the fitted splits.
    pub fn node_rows(&self, data: &Dataset) -> Result<Vec<Vec<usize>>> {
        if data.p() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: data.p(),
            });
        }
        let mut out = vec![Vec::new(); self.nodes.len()];
        for i in 0..data.n() {
            let mut id = 0;
            loop {
                out[id].push(i);
                match self.nodes[id].kind {
                    NodeKind::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                        ..
                    } => id = if data.value(i, feature) <= threshold { left } else { right },
                    NodeKind::Leaf { .. } => break,
                }
            }
        }
        Ok(out)
    }

    /// Split constraints on the path from the root to each node.
    fn regions(&self) -> Vec<Vec<Constraint>> {
        let mut regions: Vec<Vec<Constraint>> = vec![Vec::new(); self.nodes.len()];
        for node in &self.nodes {
            if let NodeKind::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } = node.kind
            {
                let base = regions[node.id].clone();
                for (child, goes_left) in [(left, true), (right, false)] {
                    let mut r = base.clone();
                    r.push(Constraint {
                        feature,
                        threshold,
                        left: goes_left,
                    });
                    regions[child] = r;
                }
            }
        }
        regions
    }

    /// Orthonormal stump representation of the fitted tree on its training data.
    pub fn stump_expansion(&self, data: &Dataset) -> Result<StumpExpansion> {
        let rows = self.node_rows(data)?;
        let regions = self.regions();
        let n = data.n() as f64;
        let y = data.response();
        let mut terms = Vec::with_capacity(self.n_internal());
        for node in self.internal_nodes() {
            let NodeKind::Internal {
                feature,
                threshold,
                left,
                right,
                ..
            } = node.kind
            else {
                unreachable!()
            };
            let count = rows[node.id].len() as f64;
            let mut term = StumpTerm {
                node_id: node.id,
                depth: node.depth,
                feature,
                threshold,
                region: regions[node.id].clone(),
                p_left: rows[left].len() as f64 / count,
                p_right: rows[right].len() as f64 / count,
                weight: count / n,
                coefficient: 0.0,
            };
            let inner: f64 = rows[node.id]
                .iter()
                .map(|&i| y[i] * term.split_value(data.value(i, feature)))
                .sum();
            term.coefficient = inner / n;
            terms.push(term);
        }
        Ok(StumpExpansion {
            root_mean: self.nodes[0].mean,
            p: self.p,
            terms,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TreeJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Tree> {
        let raw: TreeJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

fn stable_partition(buf: &mut [usize], goes_left: &[bool], scratch: &mut Vec<usize>) {
    scratch.clear();
    let mut w = 0;
    for k in 0..buf.len() {
        let r = buf[k];
        if goes_left[r] {
            buf[w] = r;
            w += 1;
        } else {
            scratch.push(r);
        }
    }
    buf[w..].copy_from_slice(scratch);
}

/// One side of an axis-aligned split: `x_feature <= threshold` when `left`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub feature: usize,
    pub threshold: f64,
    pub left: bool,
}

impl Constraint {
    pub fn holds(&self, x: &[f64]) -> bool {
        (x[self.feature] <= self.threshold) == self.left
    }
}

/// Normalized stump `Ỹ_t` of an internal node with its coefficient `<Y, Ỹ_t>_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpTerm {
    pub node_id: usize,
    pub depth: usize,
    pub feature: usize,
    pub threshold: f64,
    /// Constraints defining the node's cell.
    pub region: Vec<Constraint>,
    pub p_left: f64,
    pub p_right: f64,
    /// `N(t) / n`.
    pub weight: f64,
    pub coefficient: f64,
}

impl StumpTerm {
    /// Stump value for a point already known to be in the node's cell.
    fn split_value(&self, xj: f64) -> f64 {
        let scale = (self.weight * self.p_left * self.p_right).sqrt();
        if xj <= self.threshold {
            self.p_right / scale
        } else {
            -self.p_left / scale
        }
    }

    /// `Ỹ_t(x)`: zero outside the node's cell.
    pub fn value(&self, x: &[f64]) -> f64 {
        if self.region.iter().all(|c| c.holds(x)) {
            self.split_value(x[self.feature])
        } else {
            0.0
        }
    }
}

/// `μ̂(T)(x) = Ȳ + Σ_t <Y, Ỹ_t>_n Ỹ_t(x)` over internal nodes `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpExpansion {
    pub root_mean: f64,
    pub p: usize,
    pub terms: Vec<StumpTerm>,
}

impl StumpExpansion {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        Ok(self.root_mean + self.terms.iter().map(|t| t.coefficient * t.value(x)).sum::<f64>())
    }

    /// Columns `Ỹ_t(X_i)`, one vector per term.
    pub fn design(&self, data: &Dataset) -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = data.rows().collect();
        self.terms
            .iter()
            .map(|t| rows.iter().map(|x| t.value(x)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum NodeKindJson {
    Leaf,
    Internal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeJson {
    id: usize,
    kind: NodeKindJson,
    feature: Option<usize>,
    threshold: Option<f64>,
    mean: f64,
    count: usize,
    gain: Option<f64>,
    left: Option<usize>,
    right: Option<usize>,
    stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TreeJson {
    nodes: Vec<NodeJson>,
    depth: usize,
    seed: u64,
    n: usize,
    p: usize,
    #[serde(default)]
    mtry: Mtry,
}

impl From<&Tree> for TreeJson {
    fn from(t: &Tree) -> Self {
        let nodes = t
            .nodes
            .iter()
            .map(|node| match node.kind {
                NodeKind::Leaf { stop_reason } => NodeJson {
                    id: node.id,
                    kind: NodeKindJson::Leaf,
                    feature: None,
                    threshold: None,
                    mean: node.mean,
                    count: node.count,
                    gain: None,
                    left: None,
                    right: None,
                    stop_reason: Some(stop_reason),
                },
                NodeKind::Internal {
                    feature,
                    threshold,
                    gain,
                    left,
                    right,
                } => NodeJson {
                    id: node.id,
                    kind: NodeKindJson::Internal,
                    feature: Some(feature),
                    threshold: Some(threshold),
                    mean: node.mean,
                    count: node.count,
                    gain: Some(gain),
                    left: Some(left),
                    right: Some(right),
                    stop_reason: None,
                },
            })
            .collect();
        TreeJson {
            nodes,
            depth: t.max_depth,
            seed: t.seed,
            n: t.n,
            p: t.p,
            mtry: t.mtry,
        }
    }
}

impl TryFrom<TreeJson> for Tree {
    type Error = Error;

    fn try_from(raw: TreeJson) -> Result<Tree> {
        let bad = |msg: String| Error::InvalidModel(format!("tree json: {msg}"));
        let len = raw.nodes.len();
        if len == 0 {
            return Err(bad("no nodes".into()));
        }
        if raw.n == 0 || raw.p == 0 {
            return Err(bad("n and p must be positive".into()));
        }
        let mut nodes = Vec::with_capacity(len);
        for (pos, nj) in raw.nodes.iter().enumerate() {
            if nj.id != pos {
                return Err(bad(format!("node at position {pos} has id {}", nj.id)));
            }
            if !nj.mean.is_finite() {
                return Err(bad(format!("node {pos} has a non-finite mean")));
            }
            let kind = match nj.kind {
                NodeKindJson::Leaf => NodeKind::Leaf {
                    stop_reason: nj.stop_reason.unwrap_or(StopReason::Depth),
                },
                NodeKindJson::Internal => {
                    let (Some(feature), Some(threshold), Some(left), Some(right)) =
                        (nj.feature, nj.threshold, nj.left, nj.right)
                    else {
                        return Err(bad(format!("internal node {pos} is missing split fields")));
                    };
                    if feature >= raw.p || left >= len || right >= len || left <= pos || right <= pos
                    {
                        return Err(bad(format!("internal node {pos} has invalid links")));
                    }
                    NodeKind::Internal {
                        feature,
                        threshold,
                        gain: nj.gain.unwrap_or(0.0),
                        left,
                        right,
                    }
                }
            };
            nodes.push(Node {
                id: pos,
                depth: 0,
                mean: nj.mean,
                count: nj.count,
                weight: nj.count as f64 / raw.n as f64,
                kind,
            });
        }
        let mut seen = vec![false; len];
        seen[0] = true;
        for id in 0..len {
            if !seen[id] {
                return Err(bad(format!("node {id} is unreachable or out of order")));
            }
            if let Some((l, r)) = nodes[id].children() {
                if seen[l] || seen[r] {
                    return Err(bad(format!("node {id} shares a child")));
                }
                seen[l] = true;
                seen[r] = true;
                let d = nodes[id].depth + 1;
                nodes[l].depth = d;
                nodes[r].depth = d;
            }
        }
        Ok(Tree {
            nodes,
            max_depth: raw.depth,
            mtry: raw.mtry,
            seed: raw.seed,
            n: raw.n,
            p: raw.p,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_additive, AdditiveModel, ComponentFn, FeatureLaw};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        Dataset::from_columns(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![0.0, 0.0, 1.0, 1.0]).unwrap()
    }

    fn random_data(n: usize, p: usize, seed: u64) -> Dataset {
        let comps = (0..p)
            .map(|j| {
                if j % 2 == 0 {
                    ComponentFn::linear(1.0 + j as f64, 0.0)
                } else {
                    ComponentFn::step(vec![0.4], vec![0.0, 2.0]).unwrap()
                }
            })
            .collect();
        let m = AdditiveModel::new(comps).unwrap();
        generate_additive(&m, n, 0.5, FeatureLaw::Uniform01, seed).unwrap()
    }

    /// Exhaustive oracle: every boundary between distinct sorted values.
    fn brute_best(data: &Dataset, rows: &[usize], j: usize) -> Option<(f64, f64)> {
        let col = data.column(j);
        let mut vals: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let mut best: Option<(f64, f64)> = None;
        for w in vals.windows(2) {
            let s = (w[0] + w[1]) / 2.0;
            let g = gain_identity_check(data, rows, j, s).unwrap().lhs;
            if best.is_none_or(|(_, bg)| g > bg + 1e-12) {
                best = Some((s, g));
            }
        }
        best
    }

    #[test]
    fn impurity_examples() {
        let d = toy();
        assert_eq!(impurity(&d, &[0, 1, 2, 3]).unwrap(), 0.25);
        assert_eq!(impurity(&d, &[0, 1]).unwrap(), 0.0);
        assert!(matches!(impurity(&d, &[]), Err(Error::EmptyRows)));
    }

    #[test]
    fn impurity_matches_two_pass() {
        let d = random_data(50, 2, 9);
        let rows: Vec<usize> = (0..50).collect();
        let y = d.response();
        let mean = y.iter().sum::<f64>() / 50.0;
        let naive = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 50.0;
        assert_abs_diff_eq!(impurity(&d, &rows).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn best_split_toy() {
        let s = best_split(&toy(), &[0, 1, 2, 3], 0).unwrap().unwrap();
        assert_eq!(s.threshold, 2.5);
        assert_abs_diff_eq!(s.gain, 0.25, epsilon = 1e-15);
        assert_eq!(s.left_count, 2);
    }

    #[test]
    fn best_split_constant_feature_and_response() {
        let d = Dataset::from_columns(vec![vec![1.0; 4], vec![1.0, 2.0, 3.0, 4.0]], vec![3.0; 4])
            .unwrap();
        assert_eq!(best_split(&d, &[0, 1, 2, 3], 0).unwrap(), None);
        let s = best_split(&d, &[0, 1, 2, 3], 1).unwrap().unwrap();
        assert_eq!(s.gain, 0.0);
        assert_eq!(s.threshold, 1.5);
    }

    #[test]
    fn gain_identity_toy() {
        let g = gain_identity_check(&toy(), &[0, 1, 2, 3], 0, 2.5).unwrap();
        assert_abs_diff_eq!(g.lhs, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(g.rhs, 0.25, epsilon = 1e-15);
        assert!(matches!(
            gain_identity_check(&toy(), &[0, 1, 2, 3], 0, 9.0),
            Err(Error::InadmissibleSplit { .. })
        ));
        let flat = Dataset::from_columns(vec![vec![1.0, 2.0, 3.0]], vec![2.0; 3]).unwrap();
        let g = gain_identity_check(&flat, &[0, 1, 2], 0, 1.5).unwrap();
        assert_eq!((g.lhs, g.rhs), (0.0, 0.0));
    }

    #[test]
    fn fit_depth_zero_is_root_only() {
        let t = Tree::fit(&toy(), &TreeConfig::new(0)).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[100.0]).unwrap(), 0.5);
        assert_eq!(
            t.root().kind,
            NodeKind::Leaf {
                stop_reason: StopReason::Depth
            }
        );
    }

    #[test]
    fn fit_depth_one_toy() {
        let d = toy();
        let t = Tree::fit(&d, &TreeConfig::new(1)).unwrap();
        assert_eq!(t.nodes().len(), 3);
        match t.root().kind {
            NodeKind::Internal { threshold, gain, .. } => {
                assert_eq!(threshold, 2.5);
                assert_abs_diff_eq!(gain, 0.25, epsilon = 1e-15);
            }
            _ => panic!("root should be split"),
        }
        assert_eq!(t.predict(&[2.4]).unwrap(), 0.0);
        assert_eq!(t.predict(&[2.6]).unwrap(), 1.0);
        assert_eq!(t.training_error(&d).unwrap(), 0.0);
        assert_eq!(t.training_errors_by_depth(&d).unwrap(), vec![0.25, 0.0]);
        for n in &t.nodes()[1..] {
            assert_eq!(
                n.kind,
                NodeKind::Leaf {
                    stop_reason: StopReason::ConstantResponse
                }
            );
        }
    }

    #[test]
    fn fit_single_point() {
        let d = Dataset::from_columns(vec![vec![0.3]], vec![7.0]).unwrap();
        let t = Tree::fit(&d, &TreeConfig::new(4)).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(
            t.root().kind,
            NodeKind::Leaf {
                stop_reason: StopReason::SinglePoint
            }
        );
    }

    #[test]
    fn fit_no_valid_split() {
        let d = Dataset::from_columns(vec![vec![1.0; 3]], vec![0.0, 1.0, 2.0]).unwrap();
        let t = Tree::fit(&d, &TreeConfig::new(3)).unwrap();
        assert_eq!(
            t.root().kind,
            NodeKind::Leaf {
                stop_reason: StopReason::NoValidSplit
            }
        );
    }

    #[test]
    fn fit_rejects_bad_mtry() {
        let d = random_data(20, 3, 1);
        for q in [0, 4] {
            let cfg = TreeConfig::new(2).with_mtry(Mtry::Count(q));
            assert!(matches!(Tree::fit(&d, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn tie_breaking_prefers_lowest_feature() {
        let d = Dataset::from_columns(
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]],
            vec![0.0, 0.0, 1.0, 1.0],
        )
        .unwrap();
        let t = Tree::fit(&d, &TreeConfig::new(1)).unwrap();
        assert!(matches!(t.root().kind, NodeKind::Internal { feature: 0, .. }));
    }

    #[test]
    fn stump_expansion_toy() {
        let d = toy();
        let t = Tree::fit(&d, &TreeConfig::new(1)).unwrap();
        let e = t.stump_expansion(&d).unwrap();
        assert_eq!(e.terms.len(), 1);
        let design = e.design(&d);
        for (v, want) in design[0].iter().zip([1.0, 1.0, -1.0, -1.0]) {
            assert_abs_diff_eq!(*v, want, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(e.terms[0].coefficient, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.eval(&[1.0]).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.eval(&[4.0]).unwrap(), 1.0, epsilon = 1e-15);

        let root_only = Tree::fit(&d, &TreeConfig::new(0)).unwrap();
        let e0 = root_only.stump_expansion(&d).unwrap();
        assert!(e0.terms.is_empty());
        assert_eq!(e0.eval(&[3.0]).unwrap(), 0.5);
    }

    #[test]
    fn stump_expansion_reproduces_predictions() {
        let d = random_data(120, 4, 3);
        let t = Tree::fit(&d, &TreeConfig::new(4)).unwrap();
        let e = t.stump_expansion(&d).unwrap();
        for x in d.rows() {
            assert_abs_diff_eq!(e.eval(&x).unwrap(), t.predict(&x).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn predict_checks_dimension() {
        let t = Tree::fit(&toy(), &TreeConfig::new(1)).unwrap();
        assert!(matches!(
            t.predict(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn json_round_trip() {
        let d = random_data(80, 3, 5);
        let t = Tree::fit(&d, &TreeConfig::new(3).with_mtry(Mtry::Count(2)).with_seed(4)).unwrap();
        let back = Tree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(Tree::from_json("{\"nodes\": [").is_err());
        assert!(Tree::from_json(r#"{"nodes":[],"depth":0,"seed":0,"n":1,"p":1}"#).is_err());
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let d = random_data(100, 6, 2);
        let cfg = TreeConfig::new(5).with_mtry(Mtry::Count(2)).with_seed(99);
        assert_eq!(Tree::fit(&d, &cfg).unwrap(), Tree::fit(&d, &cfg).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn best_split_matches_exhaustive_oracle(seed in 0u64..10_000, n in 2usize..40) {
            let d = random_data(n, 2, seed);
            let rows: Vec<usize> = (0..n).collect();
            for j in 0..2 {
                let fast = best_split(&d, &rows, j).unwrap();
                let brute = brute_best(&d, &rows, j);
                match (fast, brute) {
                    (Some(s), Some((_, g))) => prop_assert!((s.gain - g).abs() <= 1e-10),
                    (None, None) => {}
                    other => prop_assert!(false, "mismatch {:?}", other),
                }
            }
        }

        #[test]
        fn structural_invariants(seed in 0u64..10_000, n in 1usize..120, k in 0usize..7) {
            let d = random_data(n, 3, seed);
            let t = Tree::fit(&d, &TreeConfig::new(k)).unwrap();
            let rows = t.node_rows(&d).unwrap();
            let mut leaf_rows = 0;
            for node in t.nodes() {
                prop_assert!(node.depth <= k);
                prop_assert_eq!(rows[node.id].len(), node.count);
                let mean = rows[node.id].iter().map(|&i| d.response()[i]).sum::<f64>()
                    / node.count as f64;
                prop_assert!((mean - node.mean).abs() <= 1e-12);
                match node.kind {
                    NodeKind::Internal { left, right, gain, .. } => {
                        let (l, r) = (t.node(left), t.node(right));
                        prop_assert!(l.count > 0 && r.count > 0);
                        prop_assert_eq!(l.count + r.count, node.count);
                        prop_assert!((l.weight + r.weight - node.weight).abs() <= 1e-15);
                        prop_assert!(gain >= 0.0);
                    }
                    NodeKind::Leaf { .. } => leaf_rows += node.count,
                }
            }
            prop_assert_eq!(leaf_rows, n);
        }

        #[test]
        fn gain_formulas_agree(seed in 0u64..10_000, n in 2usize..80) {
            let d = random_data(n, 1, seed);
            let rows: Vec<usize> = (0..n).collect();
            if let Some(s) = best_split(&d, &rows, 0).unwrap() {
                let g = gain_identity_check(&d, &rows, 0, s.threshold).unwrap();
                prop_assert!((g.lhs - s.gain).abs() <= 1e-10);
                prop_assert!(g.gap <= 1e-10);
            }
        }

        #[test]
        fn training_error_nonincreasing_in_depth(seed in 0u64..10_000, n in 2usize..150) {
            let d = random_data(n, 3, seed);
            let t = Tree::fit(&d, &TreeConfig::new(8)).unwrap();
            let errs = t.training_errors_by_depth(&d).unwrap();
            for w in errs.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            let preds = t.predict_rows(&d).unwrap();
            let brute = preds.iter().zip(d.response()).map(|(p, y)| (y - p) * (y - p)).sum::<f64>()
                / n as f64;
            prop_assert!((errs[8] - brute).abs() <= 1e-12);
        }

        #[test]
        fn predictions_invariant_to_row_permutation(seed in 0u64..10_000, n in 2usize..60) {
            use rand::seq::SliceRandom;
            let d = random_data(n, 3, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng::generator(seed ^ 0x5eed));
            let shuffled = d.select_rows(&perm).unwrap();
            let a = Tree::fit(&d, &TreeConfig::new(4)).unwrap();
            let b = Tree::fit(&shuffled, &TreeConfig::new(4)).unwrap();
            for x in d.rows() {
                prop_assert!((a.predict(&x).unwrap() - b.predict(&x).unwrap()).abs() <= 1e-9);
            }
        }
    }
}
