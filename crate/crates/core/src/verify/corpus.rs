//! Randomized (dataset, reference model) corpus and the verification suites run over it.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    check_mtry_bound, format_float, node_gain_for, training_bound_for, TvMode,
};
use crate::data::{sample_features, AdditiveModel, ComponentFn, Dataset, FeatureLaw};
use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{gain_identity_check, midpoint, Tree, TreeConfig};

pub const GAIN_IDENTITY_TOL: f64 = 1e-10;
pub const EXPANSION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub instances: usize,
    pub seed: u64,
    /// Inclusive range for the number of rows.
    pub n_range: (usize, usize),
    /// Inclusive range for the number of features.
    pub p_range: (usize, usize),
}

impl CorpusConfig {
    pub fn new(instances: usize, seed: u64) -> Self {
        CorpusConfig {
            instances,
            seed,
            n_range: (10, 300),
            p_range: (1, 20),
        }
    }

    pub fn with_n_range(mut self, lo: usize, hi: usize) -> Self {
        self.n_range = (lo, hi);
        self
    }

    pub fn with_p_range(mut self, lo: usize, hi: usize) -> Self {
        self.p_range = (lo, hi);
        self
    }

    fn validate(&self) -> Result<()> {
        let (nl, nh) = self.n_range;
        let (pl, ph) = self.p_range;
        if self.instances == 0 {
            return Err(Error::config("corpus needs at least one instance"));
        }
        if nl < 2 || nl > nh || pl < 1 || pl > ph {
            return Err(Error::config(format!(
                "bad corpus ranges n {nl}..={nh}, p {pl}..={ph}"
            )));
        }
        Ok(())
    }
}

/// A dataset together with an additive reference model `g` on its features.
/// The response is `g(X)` plus a non-additive perturbation plus noise, so `g`
/// is generally not the regression function.
#[derive(Debug, Clone)]
pub struct CorpusInstance {
    pub index: usize,
    pub data: Dataset,
    pub g: AdditiveModel,
    pub law: FeatureLaw,
}

fn random_component(rng: &mut impl Rng) -> ComponentFn {
    let level = |rng: &mut dyn RngCore| rng.random_range(-2.0..2.0);
    let grid = |rng: &mut dyn RngCore, k: usize| {
        let mut g: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    };
    match rng.random_range(0..5) {
        0 => ComponentFn::constant(level(rng)),
        1 => ComponentFn::linear(rng.random_range(-3.0..3.0), level(rng)),
        2 => {
            let k = rng.random_range(1..=4);
            let breaks = grid(rng, k);
            let levels = (0..=breaks.len()).map(|_| level(rng)).collect();
            ComponentFn::step(breaks, levels).expect("sorted distinct breakpoints")
        }
        _ => {
            let k = rng.random_range(2..=5);
            let knots = grid(rng, k);
            let values = knots.iter().map(|_| level(rng)).collect();
            ComponentFn::piecewise_linear(knots, values).expect("sorted distinct knots")
        }
    }
}

/// Builds instance `index` of the corpus; each instance has its own RNG stream.
pub fn corpus_instance(config: &CorpusConfig, index: usize) -> Result<CorpusInstance> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, index as u64);
    let n = rng.random_range(config.n_range.0..=config.n_range.1);
    let p = rng.random_range(config.p_range.0..=config.p_range.1);
    let law = if index.is_multiple_of(2) {
        FeatureLaw::Uniform01
    } else {
        FeatureLaw::CorrelatedGaussian {
            rho: rng.random_range(0.0..0.9),
        }
    };
    let mut columns = sample_features(law, n, p, &mut rng);
    // Coarse grids put ties in the columns.
    if rng.random_bool(0.25) {
        let levels = rng.random_range(2..=10) as f64;
        for col in columns.iter_mut() {
            col.iter_mut().for_each(|x| *x = (*x * levels).floor() / levels);
        }
    }
    let g = AdditiveModel::new(
        (0..p)
            .map(|_| {
                if rng.random_bool(0.6) {
                    random_component(&mut rng)
                } else {
                    ComponentFn::constant(0.0)
                }
            })
            .collect(),
    )?;
    let interaction = rng.random_range(0.0..2.0);
    let noise_sd = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) };
    let response = (0..n)
        .map(|i| {
            let x: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            let misfit = match p {
                1 => (6.0 * x[0]).sin(),
                _ => x[0] * x[1],
            };
            let e: f64 = StandardNormal.sample(&mut rng);
            g.eval_unchecked(&x) + interaction * misfit + noise_sd * e
        })
        .collect();
    Ok(CorpusInstance {
        index,
        data: Dataset::from_columns(columns, response)?,
        g,
        law,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Gain identity, stump orthonormality, expansion and training recursion.
    Identity,
    /// Excess training risk against `‖g‖²_TV/(K+3)`.
    Lemma2,
    /// Per-split gain against `R(t)²/‖g‖²_TV`.
    NodeGain,
    /// Expected best-in-subset gain against `(q/p)·max`.
    Mtry,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Identity, Suite::Lemma2, Suite::NodeGain, Suite::Mtry];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Identity => "identity",
            Suite::Lemma2 => "lemma2",
            Suite::NodeGain => "node-gain",
            Suite::Mtry => "mtry",
        })
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown suite {s:?} (expected identity, lemma2, node-gain or mtry)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub suite: Suite,
    pub corpus: CorpusConfig,
    /// Tree depth; `None` picks 5 for the identity suite and 10 otherwise.
    pub depth: Option<usize>,
    /// Monte-Carlo draws per node for the mtry suite.
    pub draws: usize,
}

impl SuiteConfig {
    pub fn new(suite: Suite, corpus: CorpusConfig) -> Self {
        SuiteConfig {
            suite,
            corpus,
            depth: None,
            draws: 100_000,
        }
    }

    fn depth(&self) -> usize {
        self.depth.unwrap_or(match self.suite {
            Suite::Identity => 5,
            _ => 10,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub suite: String,
    pub instances: usize,
    pub violations: usize,
    /// Smallest margin to the pass threshold across all checks (negative on failure).
    pub worst_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub summary: SuiteSummary,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl SuiteReport {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

struct InstanceOutcome {
    rows: Vec<Vec<String>>,
    violations: usize,
    worst_slack: f64,
}

/// Runs one suite over the corpus. Instances are independent and may run in
/// parallel; results are merged in instance order.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    config.corpus.validate()?;
    if config.suite == Suite::Mtry && config.draws < 100 {
        return Err(Error::config(format!("draws must be at least 100, got {}", config.draws)));
    }
    let outcomes = crate::par_map((0..config.corpus.instances).collect(), |index| {
        let inst = corpus_instance(&config.corpus, index)?;
        match config.suite {
            Suite::Identity => identity_instance(&inst, config.depth()),
            Suite::Lemma2 => lemma2_instance(&inst, config.depth()),
            Suite::NodeGain => node_gain_instance(&inst, config.depth()),
            Suite::Mtry => mtry_instance(&inst, config.depth(), config.draws, config.corpus.seed),
        }
    });
    let mut rows = Vec::new();
    let mut violations = 0;
    let mut worst_slack = f64::INFINITY;
    for outcome in outcomes {
        let outcome = outcome?;
        rows.extend(outcome.rows);
        violations += outcome.violations;
        worst_slack = worst_slack.min(outcome.worst_slack);
    }
    let header = match config.suite {
        Suite::Identity => vec![
            "instance",
            "n",
            "p",
            "splits_checked",
            "max_gain_gap",
            "max_gram_dev",
            "max_expansion_dev",
            "max_recursion_gap",
            "monotone",
        ],
        Suite::Lemma2 => vec![
            "instance", "n", "p", "tv_mode", "tv", "k", "excess_risk", "bound", "satisfied", "slack",
        ],
        Suite::NodeGain => vec![
            "instance",
            "tv_mode",
            "tv",
            "node_id",
            "depth",
            "excess",
            "gain",
            "lower_bound",
            "satisfied",
            "slack",
        ],
        Suite::Mtry => vec![
            "instance",
            "node_id",
            "p",
            "q",
            "full_max",
            "lower_bound",
            "exact_mean",
            "mc_mean",
            "mc_se",
            "satisfied",
        ],
    };
    Ok(SuiteReport {
        summary: SuiteSummary {
            suite: config.suite.to_string(),
            instances: config.corpus.instances,
            violations,
            worst_slack,
        },
        header,
        rows,
    })
}

/// Diagnostics of the exact tree identities on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub splits_checked: usize,
    /// Largest `|Δ̂ − |<Y − Ȳ_t, Ŷ_t>_t|²|` over every admissible split of every node.
    pub max_gain_gap: f64,
    /// Largest entrywise deviation of the Gram matrix of `{1, Ỹ_t}` from the identity.
    pub max_gram_dev: f64,
    /// Largest gap between the stump expansion and the tree's predictions.
    pub max_expansion_dev: f64,
    /// Largest gap in `‖Y − μ̂(T_K)‖² = ‖Y − μ̂(T_{K−1})‖² − Σ <Y, Ỹ_t>²`.
    pub max_recursion_gap: f64,
    pub monotone: bool,
}

impl IdentityCheck {
    pub fn passes(&self) -> bool {
        self.max_gain_gap <= GAIN_IDENTITY_TOL
            && self.max_gram_dev <= EXPANSION_TOL
            && self.max_expansion_dev <= EXPANSION_TOL
            && self.max_recursion_gap <= EXPANSION_TOL
            && self.monotone
    }

    fn worst_slack(&self) -> f64 {
        (GAIN_IDENTITY_TOL - self.max_gain_gap)
            .min(EXPANSION_TOL - self.max_gram_dev)
            .min(EXPANSION_TOL - self.max_expansion_dev)
            .min(EXPANSION_TOL - self.max_recursion_gap)
    }
}

/// Evaluates every exact identity of `tree` on its training data.
pub fn identity_check(tree: &Tree, data: &Dataset) -> Result<IdentityCheck> {
    let node_rows = tree.node_rows(data)?;

    let mut splits_checked = 0;
    let mut max_gain_gap: f64 = 0.0;
    let mut sorted = Vec::new();
    for rows in &node_rows {
        for j in 0..data.p() {
            let col = data.column(j);
            sorted.clear();
            sorted.extend_from_slice(rows);
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            for w in sorted.windows(2) {
                let (a, b) = (col[w[0]], col[w[1]]);
                if a == b {
                    continue;
                }
                let check = gain_identity_check(data, rows, j, midpoint(a, b))?;
                max_gain_gap = max_gain_gap.max(check.gap);
                splits_checked += 1;
            }
        }
    }

    let expansion = tree.stump_expansion(data)?;
    let design = expansion.design(data);
    let n = data.n() as f64;
    let mut max_gram_dev: f64 = 0.0;
    for (a, col_a) in design.iter().enumerate() {
        let with_one = col_a.iter().sum::<f64>() / n;
        max_gram_dev = max_gram_dev.max(with_one.abs());
        for (b, col_b) in design.iter().enumerate().skip(a) {
            let dot = col_a.iter().zip(col_b).map(|(u, v)| u * v).sum::<f64>() / n;
            let target = if a == b { 1.0 } else { 0.0 };
            max_gram_dev = max_gram_dev.max((dot - target).abs());
        }
    }

    let predictions = tree.predict_rows(data)?;
    let max_expansion_dev = data
        .rows()
        .zip(&predictions)
        .map(|(x, &pred)| Ok((expansion.eval(&x)? - pred).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let errors = tree.training_errors_by_depth(data)?;
    let mut max_recursion_gap: f64 = 0.0;
    for k in 1..errors.len() {
        let explained: f64 = expansion
            .terms
            .iter()
            .filter(|t| t.depth == k - 1)
            .map(|t| t.coefficient * t.coefficient)
            .sum();
        max_recursion_gap = max_recursion_gap.max((errors[k] - (errors[k - 1] - explained)).abs());
    }
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);

    Ok(IdentityCheck {
        splits_checked,
        max_gain_gap,
        max_gram_dev,
        max_expansion_dev,
        max_recursion_gap,
        monotone,
    })
}

fn identity_instance(inst: &CorpusInstance, depth: usize) -> Result<InstanceOutcome> {
    let tree = Tree::fit(&inst.data, &TreeConfig::new(depth))?;
    let c = identity_check(&tree, &inst.data)?;
    Ok(InstanceOutcome {
        rows: vec![vec![
            inst.index.to_string(),
            inst.data.n().to_string(),
            inst.data.p().to_string(),
            c.splits_checked.to_string(),
            format_float(c.max_gain_gap),
            format_float(c.max_gram_dev),
            format_float(c.max_expansion_dev),
            format_float(c.max_recursion_gap),
            c.monotone.to_string(),
        ]],
        violations: usize::from(!c.passes()),
        worst_slack: c.worst_slack(),
    })
}

fn opt_float(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn lemma2_instance(inst: &CorpusInstance, depth: usize) -> Result<InstanceOutcome> {
    let tree = Tree::fit(&inst.data, &TreeConfig::new(depth))?;
    let g_values = inst.g.eval_rows(&inst.data)?;
    let mut out = InstanceOutcome {
        rows: Vec::new(),
        violations: 0,
        worst_slack: f64::INFINITY,
    };
    for mode in TvMode::ALL {
        let report = training_bound_for(&tree, &inst.data, &inst.g, &g_values, mode)?;
        out.violations += report.violations();
        out.worst_slack = out.worst_slack.min(report.worst_slack());
        for r in &report.rows {
            out.rows.push(vec![
                inst.index.to_string(),
                inst.data.n().to_string(),
                inst.data.p().to_string(),
                mode.to_string(),
                format_float(report.tv),
                r.k.to_string(),
                format_float(r.excess_risk),
                opt_float(r.bound),
                r.satisfied.to_string(),
                opt_float(r.slack),
            ]);
        }
    }
    Ok(out)
}

fn node_gain_instance(inst: &CorpusInstance, depth: usize) -> Result<InstanceOutcome> {
    let tree = Tree::fit(&inst.data, &TreeConfig::new(depth))?;
    let g_values = inst.g.eval_rows(&inst.data)?;
    let mut out = InstanceOutcome {
        rows: Vec::new(),
        violations: 0,
        worst_slack: f64::INFINITY,
    };
    for mode in TvMode::ALL {
        let report = node_gain_for(&tree, &inst.data, &inst.g, &g_values, mode)?;
        out.violations += report.violations();
        out.worst_slack = out.worst_slack.min(report.worst_slack());
        for r in &report.rows {
            out.rows.push(vec![
                inst.index.to_string(),
                mode.to_string(),
                format_float(report.tv),
                r.node_id.to_string(),
                r.depth.to_string(),
                format_float(r.excess),
                format_float(r.gain),
                format_float(r.lower_bound),
                r.satisfied.to_string(),
                format_float(r.slack),
            ]);
        }
    }
    Ok(out)
}

/// Checks the root and one randomly chosen internal node of a fitted tree.
fn mtry_instance(inst: &CorpusInstance, depth: usize, draws: usize, seed: u64) -> Result<InstanceOutcome> {
    let data = &inst.data;
    let tree = Tree::fit(data, &TreeConfig::new(depth.min(4)))?;
    let node_rows = tree.node_rows(data)?;
    let mut pick = rng::stream(seed ^ 0x6d74_7279, inst.index as u64);
    let internal: Vec<usize> = tree.internal_nodes().map(|n| n.id).collect();
    let mut nodes = vec![0];
    if internal.len() > 1 {
        nodes.push(internal[pick.random_range(1..internal.len())]);
    }
    let mut out = InstanceOutcome {
        rows: Vec::new(),
        violations: 0,
        worst_slack: f64::INFINITY,
    };
    for node_id in nodes {
        let q = pick.random_range(1..=data.p());
        let r = check_mtry_bound(data, &node_rows[node_id], q, draws, pick.next_u64())?;
        let ok = r.satisfied && r.exact_satisfied;
        out.violations += usize::from(!ok);
        let slack = (r.mc_mean - (r.lower_bound - 3.0 * r.mc_se)).min(r.exact_mean - r.lower_bound);
        out.worst_slack = out.worst_slack.min(slack);
        out.rows.push(vec![
            inst.index.to_string(),
            node_id.to_string(),
            r.p.to_string(),
            r.q.to_string(),
            format_float(r.full_max),
            format_float(r.lower_bound),
            format_float(r.exact_mean),
            format_float(r.mc_mean),
            format_float(r.mc_se),
            ok.to_string(),
        ]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::BOUND_TOL;

    #[test]
    fn corpus_is_deterministic_and_varied() {
        let cfg = CorpusConfig::new(20, 3);
        let a = corpus_instance(&cfg, 5).unwrap();
        let b = corpus_instance(&cfg, 5).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.g, b.g);
        let sizes: Vec<(usize, usize)> = (0..20)
            .map(|i| {
                let d = corpus_instance(&cfg, i).unwrap().data;
                (d.n(), d.p())
            })
            .collect();
        assert!(sizes.iter().all(|&(n, p)| (10..=300).contains(&n) && (1..=20).contains(&p)));
        assert!(sizes.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("lemma3".parse::<Suite>().is_err());
    }

    #[test]
    fn small_suites_pass() {
        let corpus = CorpusConfig::new(6, 11).with_n_range(10, 80).with_p_range(1, 6);
        for suite in Suite::ALL {
            let mut cfg = SuiteConfig::new(suite, corpus);
            cfg.draws = 2_000;
            let report = run_suite(&cfg).unwrap();
            assert_eq!(report.summary.violations, 0, "{suite}");
            assert!(report.summary.worst_slack >= -BOUND_TOL, "{suite}");
            assert!(report.rows.iter().all(|r| r.len() == report.header.len()));
        }
    }
}
