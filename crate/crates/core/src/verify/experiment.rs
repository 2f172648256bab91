//! Held-out error of trees and forests along a growing-`n` schedule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{depth_schedule, dimension_schedule};
use crate::data::{generate_additive, sample_features, AdditiveModel, ComponentFn, FeatureLaw};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig, ResampleMode};
use crate::rng;
use crate::tree::{Mtry, Tree, TreeConfig};

/// Sparse additive regression functions on `[0,1]^p`. Only the first few
/// components are nonconstant; the remaining features are pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFamily {
    /// `1(x₁ > 0.5) + x₂ + tent(x₃)`, total variation 4.
    SparseMixed,
    /// `Σ_j β_j x_j` over the given coefficients.
    SparseLinear { beta: Vec<f64> },
    Constant { value: f64 },
}

impl ModelFamily {
    /// The regression function on `p` features, truncated when `p` is smaller
    /// than the number of active components.
    pub fn build(&self, p: usize) -> Result<AdditiveModel> {
        if p == 0 {
            return Err(Error::config("model needs at least one feature"));
        }
        let mut comps = match self {
            ModelFamily::SparseMixed => vec![
                ComponentFn::step(vec![0.5], vec![0.0, 1.0])?,
                ComponentFn::linear(1.0, 0.0),
                ComponentFn::piecewise_linear(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0])?,
            ],
            ModelFamily::SparseLinear { beta } => {
                beta.iter().map(|&b| ComponentFn::linear(b, 0.0)).collect()
            }
            ModelFamily::Constant { value } => vec![ComponentFn::constant(*value)],
        };
        comps.resize(p, ComponentFn::constant(0.0));
        AdditiveModel::new(comps)
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFamily::SparseMixed => f.write_str("sparse-mixed"),
            ModelFamily::SparseLinear { .. } => f.write_str("sparse-linear"),
            ModelFamily::Constant { .. } => f.write_str("constant"),
        }
    }
}

/// How many candidate features a forest draws at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QRule {
    /// `max(1, ⌊p/3⌋)`.
    Third,
    All,
    Fixed(usize),
}

impl QRule {
    pub fn resolve(self, p: usize) -> usize {
        match self {
            QRule::Third => (p / 3).max(1),
            QRule::All => p,
            QRule::Fixed(q) => q.min(p),
        }
    }
}

impl fmt::Display for QRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QRule::Third => f.write_str("third"),
            QRule::All => f.write_str("all"),
            QRule::Fixed(q) => write!(f, "{q}"),
        }
    }
}

impl FromStr for QRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "third" => Ok(QRule::Third),
            "all" => Ok(QRule::All),
            _ => match s.parse::<usize>() {
                Ok(q) if q >= 1 => Ok(QRule::Fixed(q)),
                _ => Err(Error::config(format!(
                    "mtry rule must be third, all or a positive integer, got {s:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    Tree,
    Forest {
        q_rule: QRule,
        n_trees: usize,
        resample: ResampleMode,
    },
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Engine::Tree => f.write_str("tree"),
            Engine::Forest {
                q_rule,
                n_trees,
                resample,
            } => write!(f, "forest(q={q_rule}, M={n_trees}, {resample})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: ModelFamily,
    pub n_grid: Vec<usize>,
    pub engine: Engine,
    pub noise_sd: f64,
    pub test_size: usize,
    pub seed: u64,
    pub replicates: usize,
    pub c: f64,
    pub xi: f64,
    pub p_max: usize,
    pub law: FeatureLaw,
}

impl ExperimentConfig {
    pub fn new(family: ModelFamily, n_grid: Vec<usize>, engine: Engine) -> Self {
        ExperimentConfig {
            family,
            n_grid,
            engine,
            noise_sd: 0.5,
            test_size: 2000,
            seed: 0,
            replicates: 1,
            c: 1.0,
            xi: 0.9,
            p_max: 200,
            law: FeatureLaw::Uniform01,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::config("n grid is empty"));
        }
        if self.n_grid[0] < 2 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "n grid must be strictly increasing with n >= 2, got {:?}",
                self.n_grid
            )));
        }
        if self.test_size < 1 {
            return Err(Error::config("test size must be at least 1"));
        }
        if self.replicates < 1 {
            return Err(Error::config("replicates must be at least 1"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if let Engine::Forest { n_trees: 0, .. } = self.engine {
            return Err(Error::config("forest needs at least one tree"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub q: usize,
    pub m: usize,
    pub replicate: usize,
    pub seed: u64,
    pub train_mse: f64,
    /// `‖μ − μ̂‖²` averaged over held-out points.
    pub test_mse: f64,
    /// `4‖μ‖_TV / (log₂ n + 6)`.
    pub bound_rate: f64,
    pub p_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Sorted by `n`, then replicate.
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    /// Mean held-out error per grid point, in grid order.
    pub fn mean_test_mse(&self) -> Vec<(usize, f64)> {
        self.config
            .n_grid
            .iter()
            .map(|&n| {
                let vals: Vec<f64> = self.rows.iter().filter(|r| r.n == n).map(|r| r.test_mse).collect();
                (n, vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    pub const CSV_HEADER: &'static str =
        "n,p,K,q,M,replicate,seed,train_mse,test_mse,bound_rate,p_capped";

    pub fn to_csv(&self) -> String {
        use super::format_float as f;
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.n,
                r.p,
                r.k,
                r.q,
                r.m,
                r.replicate,
                r.seed,
                f(r.train_mse),
                f(r.test_mse),
                f(r.bound_rate),
                r.p_capped
            ));
        }
        out
    }
}

/// Runs every `(n, replicate)` pair of the grid. Each pair derives its seed
/// from the master seed, `n` and the replicate index only.
pub fn consistency_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replicates).map(move |r| (n, r)))
        .collect();
    let rows = crate::par_map(jobs, |(n, replicate)| run_point(config, n, replicate))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: config.clone(),
        rows,
    })
}

type Predictor = Box<dyn Fn(&[f64]) -> Result<f64>>;

fn run_point(config: &ExperimentConfig, n: usize, replicate: usize) -> Result<ExperimentRow> {
    let seed = rng::derive_seed(rng::derive_seed(config.seed, n as u64), replicate as u64);
    let schedule = dimension_schedule(n, config.c, config.xi, config.p_max)?;
    let p = schedule.p;
    let k = depth_schedule(n);
    let mu = config.family.build(p)?;
    let train = generate_additive(&mu, n, config.noise_sd, config.law, rng::derive_seed(seed, 0))?;

    let mut test_rng = rng::stream(seed, 1);
    let columns = sample_features(config.law, config.test_size, p, &mut test_rng);
    let test_points: Vec<Vec<f64>> = (0..config.test_size)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();

    let (predict, train_mse, q, m): (Predictor, f64, usize, usize) =
        match config.engine {
            Engine::Tree => {
                let tree = Tree::fit(&train, &TreeConfig::new(k).with_seed(seed))?;
                let err = tree.training_error(&train)?;
                (Box::new(move |x| tree.predict(x)), err, p, 1)
            }
            Engine::Forest {
                q_rule,
                n_trees,
                resample,
            } => {
                let q = q_rule.resolve(p);
                let cfg = ForestConfig::new(k, n_trees)
                    .with_mtry(Mtry::Count(q))
                    .with_resample(resample)
                    .with_seed(seed);
                let forest = Forest::fit(&train, &cfg)?;
                let err = forest.training_error(&train)?;
                (Box::new(move |x| forest.predict(x)), err, q, n_trees)
            }
        };

    let mut sse = 0.0;
    for x in &test_points {
        sse += (mu.eval(x)? - predict(x)?).powi(2);
    }
    Ok(ExperimentRow {
        n,
        p,
        k,
        q,
        m,
        replicate,
        seed,
        train_mse,
        test_mse: sse / config.test_size as f64,
        bound_rate: 4.0 * mu.tv_norm_analytic() / ((n as f64).log2() + 6.0),
        p_capped: schedule.capped,
    })
}
