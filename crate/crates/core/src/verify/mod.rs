//! Computable certificates for the greedy-growth guarantees, the growth
//! schedules, a randomized verification corpus and the consistency experiment.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{AdditiveModel, Dataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{best_split, Mtry, NodeKind, Tree, TreeConfig};

mod corpus;
mod experiment;

pub use corpus::{
    corpus_instance, run_suite, CorpusConfig, CorpusInstance, Suite, SuiteConfig, SuiteReport,
    SuiteSummary,
};
pub use experiment::{
    consistency_experiment, Engine, ExperimentConfig, ExperimentReport, ExperimentRow,
    ModelFamily, QRule,
};

/// Absolute slack allowed on the training-error and node-gain bounds.
pub const BOUND_TOL: f64 = 1e-12;

/// Which total-variation value a certificate uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvMode {
    /// Closed-form variation of each component over its domain.
    Analytic,
    /// Sample-path variation along each sorted column.
    Empirical,
}

impl TvMode {
    pub const ALL: [TvMode; 2] = [TvMode::Analytic, TvMode::Empirical];

    pub fn tv(self, g: &AdditiveModel, data: &Dataset) -> Result<f64> {
        match self {
            TvMode::Analytic => Ok(g.tv_norm_analytic()),
            TvMode::Empirical => g.tv_norm_empirical(data),
        }
    }
}

impl fmt::Display for TvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TvMode::Analytic => "analytic",
            TvMode::Empirical => "empirical",
        })
    }
}

impl FromStr for TvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(TvMode::Analytic),
            "empirical" => Ok(TvMode::Empirical),
            _ => Err(Error::config(format!("unknown tv mode {s:?}"))),
        }
    }
}

/// One depth of a training-error certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub k: usize,
    pub train_error: f64,
    /// `R_K = ‖Y − μ̂(T_K)‖²_n − ‖Y − g‖²_n`.
    pub excess_risk: f64,
    /// `‖g‖²_TV / (K + 3)`; absent at `K = 0`.
    pub bound: Option<f64>,
    pub satisfied: bool,
    pub slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tv_mode: TvMode,
    pub tv: f64,
    pub reference_error: f64,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.satisfied).count()
    }

    pub fn worst_slack(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.slack)
            .fold(f64::INFINITY, f64::min)
    }
}

/// `‖Y − g‖²` averaged over `rows`.
fn reference_error(data: &Dataset, g_values: &[f64], rows: impl Iterator<Item = usize>) -> f64 {
    let y = data.response();
    let (mut sum, mut count) = (0.0, 0usize);
    for i in rows {
        sum += (y[i] - g_values[i]).powi(2);
        count += 1;
    }
    sum / count as f64
}

/// Fits one depth-`k_max` tree with all features as candidates and compares
/// the excess training risk of each truncation `T_K` against `‖g‖²_TV/(K+3)`.
pub fn check_training_bound(
    data: &Dataset,
    g: &AdditiveModel,
    k_max: usize,
    tv_mode: TvMode,
) -> Result<BoundReport> {
    let g_values = g.eval_rows(data)?;
    let tree = Tree::fit(data, &TreeConfig::new(k_max))?;
    training_bound_for(&tree, data, g, &g_values, tv_mode)
}

fn training_bound_for(
    tree: &Tree,
    data: &Dataset,
    g: &AdditiveModel,
    g_values: &[f64],
    tv_mode: TvMode,
) -> Result<BoundReport> {
    let tv = tv_mode.tv(g, data)?;
    let reference = reference_error(data, g_values, 0..data.n());
    let rows = tree
        .training_errors_by_depth(data)?
        .into_iter()
        .enumerate()
        .map(|(k, train_error)| {
            let excess_risk = train_error - reference;
            let bound = (k >= 1).then(|| tv * tv / (k + 3) as f64);
            let slack = bound.map(|b| b - excess_risk);
            BoundRow {
                k,
                train_error,
                excess_risk,
                bound,
                satisfied: slack.is_none_or(|s| s >= -BOUND_TOL),
                slack,
            }
        })
        .collect();
    Ok(BoundReport {
        tv_mode,
        tv,
        reference_error: reference,
        rows,
    })
}

/// Certificate for one executed split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeGainRow {
    pub node_id: usize,
    pub depth: usize,
    /// `R(t) = ‖Y − Ȳ_t‖²_t − ‖Y − g‖²_t`.
    pub excess: f64,
    pub gain: f64,
    /// `R(t)² / ‖g‖²_TV`, or 0 when the variation is 0.
    pub lower_bound: f64,
    pub satisfied: bool,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGainReport {
    pub tv_mode: TvMode,
    pub tv: f64,
    /// Only internal nodes with `R(t) >= 0`.
    pub rows: Vec<NodeGainRow>,
}

impl NodeGainReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.satisfied).count()
    }

    pub fn worst_slack(&self) -> f64 {
        self.rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min)
    }
}

/// Checks `gain(t) >= R(t)² / ‖g‖²_TV` at every split of `tree` whose node has
/// `R(t) >= 0`. The tree must have been grown with every feature as a candidate.
pub fn check_node_gain_bound(
    tree: &Tree,
    data: &Dataset,
    g: &AdditiveModel,
    tv_mode: TvMode,
) -> Result<NodeGainReport> {
    if tree.mtry().resolve(tree.p())? != tree.p() {
        return Err(Error::config(
            "node gain certificate needs a tree grown with mtry = all",
        ));
    }
    let g_values = g.eval_rows(data)?;
    node_gain_for(tree, data, g, &g_values, tv_mode)
}

fn node_gain_for(
    tree: &Tree,
    data: &Dataset,
    g: &AdditiveModel,
    g_values: &[f64],
    tv_mode: TvMode,
) -> Result<NodeGainReport> {
    let tv = tv_mode.tv(g, data)?;
    let node_rows = tree.node_rows(data)?;
    let y = data.response();
    let mut rows = Vec::new();
    for node in tree.internal_nodes() {
        let NodeKind::Internal { gain, .. } = node.kind else {
            continue;
        };
        let members = &node_rows[node.id];
        let impurity = members.iter().map(|&i| (y[i] - node.mean).powi(2)).sum::<f64>()
            / members.len() as f64;
        let excess = impurity - reference_error(data, g_values, members.iter().copied());
        if excess < 0.0 {
            continue;
        }
        let lower_bound = if tv > 0.0 { excess * excess / (tv * tv) } else { 0.0 };
        let slack = gain - lower_bound;
        rows.push(NodeGainRow {
            node_id: node.id,
            depth: node.depth,
            excess,
            gain,
            lower_bound,
            satisfied: slack >= -BOUND_TOL,
            slack,
        });
    }
    Ok(NodeGainReport { tv_mode, tv, rows })
}

/// Best impurity gain of each feature on `rows`; 0 for features constant there.
pub fn feature_gains(data: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
    (0..data.p())
        .map(|j| Ok(best_split(data, rows, j)?.map_or(0.0, |s| s.gain)))
        .collect()
}

/// Exact `E[max_{j ∈ S} gains_j]` for `S` uniform over `q`-subsets, split as
/// `(q/p)·max + rest` with `rest >= 0`.
///
/// With gains sorted ascending, the `k`-th smallest is the subset maximum
/// for `C(k−1, q−1)` of the `C(p, q)` subsets.
fn subset_max_expectation_parts(gains: &[f64], q: usize) -> (f64, f64) {
    let p = gains.len();
    let mut sorted = gains.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut weight = q as f64 / p as f64;
    let lead = weight * sorted[p - 1];
    let mut rest = 0.0;
    for k in (q..p).rev() {
        // C(k−1, q−1)/C(p, q) from C(k, q−1)/C(p, q).
        weight *= (k + 1 - q) as f64 / k as f64;
        rest += weight * sorted[k - 1];
    }
    (lead, rest)
}

/// Exact expectation of the best-in-subset gain under uniform `q`-subsets.
pub fn subset_max_expectation(gains: &[f64], q: usize) -> Result<f64> {
    Mtry::Count(q).resolve(gains.len())?;
    let (lead, rest) = subset_max_expectation_parts(gains, q);
    Ok(lead + rest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtryReport {
    pub p: usize,
    pub q: usize,
    pub draws: usize,
    pub gains: Vec<f64>,
    pub full_max: f64,
    /// `(q/p) · full_max`.
    pub lower_bound: f64,
    pub exact_mean: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    /// `mc_mean >= lower_bound − 3·mc_se`.
    pub satisfied: bool,
    /// `exact_mean >= lower_bound`, no tolerance.
    pub exact_satisfied: bool,
}

/// Monte-Carlo estimate of the expected best-in-subset gain at a node,
/// against the `(q/p)·max` lower bound.
pub fn check_mtry_bound(
    data: &Dataset,
    rows: &[usize],
    q: usize,
    draws: usize,
    seed: u64,
) -> Result<MtryReport> {
    if draws < 100 {
        return Err(Error::config(format!("draws must be at least 100, got {draws}")));
    }
    let p = data.p();
    Mtry::Count(q).resolve(p)?;
    let gains = feature_gains(data, rows)?;
    let full_max = gains.iter().copied().fold(0.0, f64::max);
    let (lower_bound, rest) = subset_max_expectation_parts(&gains, q);

    let mut rng = rng::generator(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..draws {
        let best = index::sample(&mut rng, p, q)
            .iter()
            .map(|j| gains[j])
            .fold(0.0, f64::max);
        let delta = best - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (best - mean);
    }
    let mc_se = (m2 / (draws - 1) as f64 / draws as f64).sqrt();

    Ok(MtryReport {
        p,
        q,
        draws,
        gains,
        full_max,
        lower_bound,
        exact_mean: lower_bound + rest,
        mc_mean: mean,
        mc_se,
        satisfied: mean >= lower_bound - 3.0 * mc_se,
        exact_satisfied: lower_bound + rest >= lower_bound,
    })
}

/// `K_n = ⌊½ log₂ n⌋`, computed on integers. `n = 0` gives 0.
pub fn depth_schedule(n: usize) -> usize {
    match n {
        0 => 0,
        _ => n.ilog2() as usize / 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionSchedule {
    pub p: usize,
    /// `exp(c · n^(1−ξ))` before flooring and capping.
    pub raw: f64,
    pub capped: bool,
}

/// `p_n = ⌊exp(c · n^(1−ξ))⌋`, capped at `p_max`.
pub fn dimension_schedule(n: usize, c: f64, xi: f64, p_max: usize) -> Result<DimensionSchedule> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::config(format!("c must be positive, got {c}")));
    }
    if !(xi > 0.5 && xi <= 1.0) {
        return Err(Error::config(format!("xi must lie in (1/2, 1], got {xi}")));
    }
    if p_max == 0 {
        return Err(Error::config("p_max must be at least 1"));
    }
    let raw = (c * (n as f64).powf(1.0 - xi)).exp();
    let capped = raw.is_nan() || raw >= p_max as f64 + 1.0;
    let p = if capped { p_max } else { (raw.floor() as usize).max(1) };
    Ok(DimensionSchedule { p, raw, capped })
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    let s = format!("{x:?}");
    s.strip_suffix(".0").map(str::to_owned).unwrap_or(s)
}
