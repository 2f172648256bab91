//! Breiman forests: per-tree resampling and a fresh `mtry` subset at every node.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{Mtry, Tree, TreeConfig, TreeJson};

/// How each tree's training sample is drawn from the `n` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// `n` draws with replacement.
    Bootstrap,
    /// `size` distinct rows drawn without replacement.
    Subsample { size: usize },
    /// Every tree sees the full sample.
    None,
}

impl ResampleMode {
    /// Subsampling with the conventional `⌊0.632 n⌋` rows.
    pub fn default_subsample(n: usize) -> Self {
        ResampleMode::Subsample {
            size: ((0.632 * n as f64).floor() as usize).max(1),
        }
    }

    fn validate(self, n: usize) -> Result<()> {
        match self {
            ResampleMode::Subsample { size } if size == 0 || size > n => Err(Error::config(
                format!("subsample size must be in 1..={n}, got {size}"),
            )),
            _ => Ok(()),
        }
    }

    fn draw(self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        match self {
            ResampleMode::Bootstrap => (0..n).map(|_| rng.random_range(0..n)).collect(),
            ResampleMode::Subsample { size } => {
                let mut rows = index::sample(rng, n, size).into_vec();
                rows.sort_unstable();
                rows
            }
            ResampleMode::None => (0..n).collect(),
        }
    }
}

impl fmt::Display for ResampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResampleMode::Bootstrap => f.write_str("bootstrap"),
            ResampleMode::Subsample { size } => write!(f, "subsample:{size}"),
            ResampleMode::None => f.write_str("none"),
        }
    }
}

/// Parses `bootstrap`, `none`, `subsample` or `subsample:<size>`.
/// A bare `subsample` resolves its size once `n` is known, so it parses to
/// size 0 and is fixed up by [`ForestConfig::resolve_resample`].
impl FromStr for ResampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bootstrap" => Ok(ResampleMode::Bootstrap),
            "none" => Ok(ResampleMode::None),
            "subsample" => Ok(ResampleMode::Subsample { size: 0 }),
            _ => match s.strip_prefix("subsample:") {
                Some(k) => k
                    .parse()
                    .map(|size| ResampleMode::Subsample { size })
                    .map_err(|_| Error::config(format!("bad subsample size {k:?}"))),
                None => Err(Error::config(format!(
                    "unknown resample mode {s:?} (expected bootstrap, subsample[:k] or none)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub max_depth: usize,
    /// `None` means `max(1, ⌊p/3⌋)`.
    pub mtry: Option<Mtry>,
    pub n_trees: usize,
    pub resample: ResampleMode,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(max_depth: usize, n_trees: usize) -> Self {
        ForestConfig {
            max_depth,
            mtry: None,
            n_trees,
            resample: ResampleMode::Bootstrap,
            seed: 0,
        }
    }

    pub fn with_mtry(mut self, mtry: Mtry) -> Self {
        self.mtry = Some(mtry);
        self
    }

    pub fn with_resample(mut self, resample: ResampleMode) -> Self {
        self.resample = resample;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of candidate features per node for a `p`-column dataset.
    pub fn resolve_mtry(&self, p: usize) -> Result<usize> {
        match self.mtry {
            Some(m) => m.resolve(p),
            None => Ok(default_mtry(p)),
        }
    }

    /// Fills in the default subsample size for `n` rows.
    pub fn resolve_resample(&self, n: usize) -> ResampleMode {
        match self.resample {
            ResampleMode::Subsample { size: 0 } => ResampleMode::default_subsample(n),
            r => r,
        }
    }
}

/// `max(1, ⌊p/3⌋)`.
pub fn default_mtry(p: usize) -> usize {
    (p / 3).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    samples: Vec<Vec<usize>>,
    q: usize,
    resample: ResampleMode,
    master_seed: u64,
    p: usize,
}

impl Forest {
    /// Grows `n_trees` trees. Tree `m` draws its rows and its own tree seed
    /// from stream `m` of the master seed, so results do not depend on the
    /// number of worker threads.
    pub fn fit(data: &Dataset, config: &ForestConfig) -> Result<Forest> {
        if config.n_trees == 0 {
            return Err(Error::config("n_trees must be at least 1"));
        }
        let q = config.resolve_mtry(data.p())?;
        let resample = config.resolve_resample(data.n());
        resample.validate(data.n())?;
        let mtry = if q == data.p() { Mtry::All } else { Mtry::Count(q) };

        let grown = crate::par_map((0..config.n_trees).collect(), |rank| {
            let mut stream = rng::stream(config.seed, rank as u64);
            let rows = resample.draw(data.n(), &mut stream);
            let tree_config = TreeConfig::new(config.max_depth)
                .with_mtry(mtry)
                .with_seed(stream.next_u64());
            let tree = match resample {
                ResampleMode::None => Tree::fit(data, &tree_config),
                _ => Tree::fit(&data.select_rows(&rows)?, &tree_config),
            }?;
            Ok::<_, Error>((tree, rows))
        });

        let mut trees = Vec::with_capacity(config.n_trees);
        let mut samples = Vec::with_capacity(config.n_trees);
        for item in grown {
            let (tree, rows) = item?;
            trees.push(tree);
            samples.push(rows);
        }
        Ok(Forest {
            trees,
            samples,
            q,
            resample,
            master_seed: config.seed,
            p: data.p(),
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Row indices each tree was trained on. Empty after a JSON round trip.
    pub fn samples(&self) -> &[Vec<usize>] {
        &self.samples
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn resample(&self) -> ResampleMode {
        self.resample
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Average of the tree predictions, summed in tree order.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_unchecked(x)).sum();
        sum / self.trees.len() as f64
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

    pub fn training_error(&self, data: &Dataset) -> Result<f64> {
        let pred = self.predict_rows(data)?;
        let y = data.response();
        Ok(pred.iter().zip(y).map(|(a, b)| (b - a).powi(2)).sum::<f64>() / y.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Forest> {
        let raw: ForestJson = serde_json::from_str(s)?;
        Forest::try_from(raw)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ForestJson {
    q: usize,
    #[serde(rename = "M")]
    m: usize,
    resample_mode: ResampleMode,
    master_seed: u64,
    trees: Vec<TreeJson>,
}

impl From<&Forest> for ForestJson {
    fn from(f: &Forest) -> Self {
        ForestJson {
            q: f.q,
            m: f.trees.len(),
            resample_mode: f.resample,
            master_seed: f.master_seed,
            trees: f.trees.iter().map(TreeJson::from).collect(),
        }
    }
}

impl TryFrom<ForestJson> for Forest {
    type Error = Error;

    fn try_from(raw: ForestJson) -> Result<Forest> {
        if raw.trees.is_empty() || raw.trees.len() != raw.m {
            return Err(Error::InvalidModel(format!(
                "forest json: M = {} but {} trees present",
                raw.m,
                raw.trees.len()
            )));
        }
        let trees = raw
            .trees
            .into_iter()
            .map(Tree::try_from)
            .collect::<Result<Vec<_>>>()?;
        let p = trees[0].p();
        if trees.iter().any(|t| t.p() != p) {
            return Err(Error::InvalidModel("forest json: trees disagree on p".into()));
        }
        if raw.q == 0 || raw.q > p {
            return Err(Error::InvalidModel(format!("forest json: q = {} with p = {p}", raw.q)));
        }
        Ok(Forest {
            trees,
            samples: Vec::new(),
            q: raw.q,
            resample: raw.resample_mode,
            master_seed: raw.master_seed,
            p,
        })
    }
}

/// A fitted tree or forest, as stored in a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Tree(Tree),
    Forest(Forest),
}

impl Model {
    pub fn from_json(s: &str) -> Result<Model> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        if value.get("trees").is_some() {
            let raw: ForestJson = serde_json::from_value(value)?;
            Ok(Model::Forest(Forest::try_from(raw)?))
        } else {
            let raw: TreeJson = serde_json::from_value(value)?;
            Ok(Model::Tree(Tree::try_from(raw)?))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Model::Tree(t) => t.to_json(),
            Model::Forest(f) => f.to_json(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Model::Tree(t) => t.p(),
            Model::Forest(f) => f.p(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model::Tree(t) => t.predict(x),
            Model::Forest(f) => f.predict(x),
        }
    }

    pub fn predict_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        match self {
            Model::Tree(t) => t.predict_rows(data),
            Model::Forest(f) => f.predict_rows(data),
        }
    }
}

/// Probability that a given feature is among `q` drawn uniformly from `p`.
pub fn mtry_inclusion_probability(p: usize, q: usize) -> Result<f64> {
    Mtry::Count(q).resolve(p)?;
    Ok(q as f64 / p as f64)
}

/// Fraction of `draws` uniform `q`-subsets of `0..p` that contain feature `feature`.
pub fn mtry_inclusion_frequency(p: usize, q: usize, feature: usize, draws: usize, seed: u64) -> Result<f64> {
    Mtry::Count(q).resolve(p)?;
    if feature >= p {
        return Err(Error::config(format!("feature {feature} out of range for p = {p}")));
    }
    if draws == 0 {
        return Err(Error::config("draws must be positive"));
    }
    let mut rng = rng::generator(seed);
    let hits = (0..draws)
        .filter(|_| index::sample(&mut rng, p, q).iter().any(|j| j == feature))
        .count();
    Ok(hits as f64 / draws as f64)
}
