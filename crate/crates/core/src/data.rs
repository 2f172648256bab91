//! Datasets, CSV ingestion, additive models and total variation.
//!
//! A [`Dataset`] stores features column-major together with one ascending
//! permutation per column. Everything downstream (split search, empirical
//! total variation) walks those permutations instead of re-sorting.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// `n × p` design, response and per-column sort permutations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    response: Vec<f64>,
    sort_index: Vec<Vec<usize>>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from feature columns. Every column must have the same
    /// length as `response`.
    pub fn from_columns(columns: Vec<Vec<f64>>, response: Vec<f64>) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset needs at least one row".into()));
        }
        if columns.is_empty() {
            return Err(Error::InvalidData("dataset needs at least one feature".into()));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::InvalidData(format!(
                    "column {j} has {} rows, response has {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite feature value at row {i}, column {j}"
                )));
            }
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite response at row {i}")));
        }
        let sort_index = columns.iter().map(|c| argsort(c)).collect();
        Ok(Dataset {
            columns,
            response,
            sort_index,
            feature_names: None,
        })
    }

    /// Builds a dataset from row-major feature vectors.
    pub fn from_rows(rows: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() != response.len() {
            return Err(Error::InvalidData(format!(
                "{} feature rows but {} responses",
                rows.len(),
                response.len()
            )));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidData(format!(
                    "row {i} has {} features, expected {p}",
                    row.len()
                )));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Dataset::from_columns(columns, response)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} features",
                names.len(),
                self.p()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Row indices ordering column `j` ascending; ties keep row order.
    pub fn sort_index(&self, j: usize) -> &[usize] {
        &self.sort_index[j]
    }

    #[inline]
    pub fn value(&self, row: usize, j: usize) -> f64 {
        self.columns[j][row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.n()).map(|i| self.row(i))
    }

    pub fn feature_name(&self, j: usize) -> String {
        match &self.feature_names {
            Some(names) => names[j].clone(),
            None => format!("x{}", j + 1),
        }
    }

    /// New dataset made of the given rows (repetitions allowed), in order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        let response = rows.iter().map(|&i| self.response[i]).collect();
        let mut out = Dataset::from_columns(columns, response)?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Same design with a different response vector.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Dataset> {
        if response.len() != self.n() {
            return Err(Error::InvalidData(format!(
                "response has {} entries, dataset has {} rows",
                response.len(),
                self.n()
            )));
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite response at row {i}")));
        }
        Ok(Dataset {
            response,
            ..self.clone()
        })
    }

    /// Checks that every column read through its permutation is nondecreasing.
    pub fn sort_index_is_valid(&self) -> bool {
        self.columns.iter().zip(&self.sort_index).all(|(col, idx)| {
            idx.len() == col.len() && idx.windows(2).all(|w| col[w[0]] <= col[w[1]])
        })
    }

    /// Writes features and response as CSV with a header row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = (0..self.p()).map(|j| self.feature_name(j)).collect();
        header.push("y".into());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.columns.iter().map(|c| c[i].to_string()).collect();
            rec.push(self.response[i].to_string());
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Which CSV column holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    Name(String),
    Index(usize),
}

impl ResponseColumn {
    /// Interprets a purely numeric string as a zero-based index, anything else
    /// as a header name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ResponseColumn::Index(i),
            Err(_) => ResponseColumn::Name(s.to_string()),
        }
    }
}

impl fmt::Display for ResponseColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseColumn::Name(s) => write!(f, "{s}"),
            ResponseColumn::Index(i) => write!(f, "#{i}"),
        }
    }
}

/// A numeric CSV table. Row numbers in errors are 1-based file lines.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_table(path: impl AsRef<Path>, has_header: bool) -> Result<Table> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header = if has_header {
        let h = reader.headers().map_err(|e| csv_io(path, e))?;
        if h.is_empty() {
            None
        } else {
            Some(h.iter().map(str::to_string).collect())
        }
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map_or(rows.len() + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::Parse {
                row: line,
                col: rec.len().min(expected) + 1,
                message: format!("expected {expected} fields, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                col: c + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    col: c + 1,
                    message: format!("non-finite value: {field:?}"),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::NoRows {
            path: path.to_path_buf(),
        });
    }
    Ok(Table { header, rows })
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => {
            let row = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                row,
                col: 0,
                message: e.to_string(),
            }
        }
    }
}

/// Reads a dataset, taking the response from `response` and every other
/// column as a feature.
pub fn load_csv(
    path: impl AsRef<Path>,
    response: &ResponseColumn,
    has_header: bool,
) -> Result<Dataset> {
    let table = read_table(path, has_header)?;
    let width = table.rows[0].len();
    let y_col = match response {
        ResponseColumn::Index(i) => *i,
        ResponseColumn::Name(name) => table
            .header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::config(format!("response column {name:?} not found")))?,
    };
    if y_col >= width {
        return Err(Error::config(format!(
            "response column {response} out of range for {width} columns"
        )));
    }
    if width < 2 {
        return Err(Error::config("need at least one feature column besides the response"));
    }
    let response_values: Vec<f64> = table.rows.iter().map(|r| r[y_col]).collect();
    let features: Vec<Vec<f64>> = table
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|&(c, _)| c != y_col)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect();
    let data = Dataset::from_rows(&features, response_values)?;
    match table.header {
        Some(h) => {
            let names = h
                .into_iter()
                .enumerate()
                .filter(|&(c, _)| c != y_col)
                .map(|(_, s)| s)
                .collect();
            data.with_feature_names(names)
        }
        None => Ok(data),
    }
}

/// Closed interval a component function lives on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Domain { lo: 0.0, hi: 1.0 }
    }
}

impl Domain {
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

/// Shape of a univariate component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Constant {
        value: f64,
    },
    Linear {
        slope: f64,
        intercept: f64,
    },
    /// `levels[k]` holds on `(breakpoints[k-1], breakpoints[k]]`; the value
    /// changes strictly after each breakpoint.
    Step {
        breakpoints: Vec<f64>,
        levels: Vec<f64>,
    },
    /// Linear interpolation through `(knots[k], values[k])`, flat outside.
    PiecewiseLinear {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
}

/// One additive component `g_j` on a closed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFn {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub domain: Domain,
}

impl ComponentFn {
    pub fn constant(value: f64) -> Self {
        ComponentFn {
            shape: Shape::Constant { value },
            domain: Domain::default(),
        }
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        ComponentFn {
            shape: Shape::Linear { slope, intercept },
            domain: Domain::default(),
        }
    }

    pub fn step(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        let c = ComponentFn {
            shape: Shape::Step {
                breakpoints,
                levels,
            },
            domain: Domain::default(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn piecewise_linear(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let c = ComponentFn {
            shape: Shape::PiecewiseLinear { knots, values },
            domain: Domain::default(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.domain = Domain { lo, hi };
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.domain;
        if !(d.lo.is_finite() && d.hi.is_finite() && d.lo <= d.hi) {
            return Err(Error::InvalidModel(format!(
                "domain [{}, {}] is not a finite closed interval",
                d.lo, d.hi
            )));
        }
        let check_grid = |name: &str, grid: &[f64]| -> Result<()> {
            if grid.iter().any(|v| !v.is_finite() || !d.contains(*v)) {
                return Err(Error::InvalidModel(format!("{name} must lie inside the domain")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidModel(format!("{name} must be strictly increasing")));
            }
            Ok(())
        };
        match &self.shape {
            Shape::Constant { value } => finite("constant value", &[*value]),
            Shape::Linear { slope, intercept } => finite("linear coefficients", &[*slope, *intercept]),
            Shape::Step {
                breakpoints,
                levels,
            } => {
                check_grid("breakpoints", breakpoints)?;
                if levels.len() != breakpoints.len() + 1 {
                    return Err(Error::InvalidModel(format!(
                        "step with {} breakpoints needs {} levels, got {}",
                        breakpoints.len(),
                        breakpoints.len() + 1,
                        levels.len()
                    )));
                }
                finite("levels", levels)
            }
            Shape::PiecewiseLinear { knots, values } => {
                check_grid("knots", knots)?;
                if knots.is_empty() || values.len() != knots.len() {
                    return Err(Error::InvalidModel(format!(
                        "piecewise-linear needs one value per knot (>= 1), got {} knots and {} values",
                        knots.len(),
                        values.len()
                    )));
                }
                finite("values", values)
            }
        }
    }

    /// Value at `x`, clamped into the domain first.
    pub fn eval(&self, x: f64) -> f64 {
        let x = self.domain.clamp(x);
        match &self.shape {
            Shape::Constant { value } => *value,
            Shape::Linear { slope, intercept } => slope * x + intercept,
            Shape::Step {
                breakpoints,
                levels,
            } => levels[breakpoints.partition_point(|&b| b < x)],
            Shape::PiecewiseLinear { knots, values } => {
                let k = knots.partition_point(|&t| t <= x);
                if k == 0 {
                    values[0]
                } else if k == knots.len() {
                    values[k - 1]
                } else {
                    let (x0, x1) = (knots[k - 1], knots[k]);
                    let (y0, y1) = (values[k - 1], values[k]);
                    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                }
            }
        }
    }

    /// Total variation over the domain, in closed form.
    pub fn variation(&self) -> f64 {
        match &self.shape {
            Shape::Constant { .. } => 0.0,
            Shape::Linear { slope, .. } => slope.abs() * self.domain.len(),
            Shape::Step { levels, .. } => abs_increments(levels),
            Shape::PiecewiseLinear { values, .. } => abs_increments(values),
        }
    }

    pub fn is_constant(&self) -> bool {
        match &self.shape {
            Shape::Constant { .. } => true,
            Shape::Linear { slope, .. } => *slope == 0.0 || self.domain.is_empty(),
            Shape::Step { levels, .. } => levels.windows(2).all(|w| w[0] == w[1]),
            Shape::PiecewiseLinear { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }
}

fn finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} must be finite")))
    }
}

fn abs_increments(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// `g(x) = g_1(x_1) + ... + g_p(x_p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveModel {
    pub components: Vec<ComponentFn>,
}

impl AdditiveModel {
    pub fn new(components: Vec<ComponentFn>) -> Result<Self> {
        let m = AdditiveModel { components };
        m.validate()?;
        Ok(m)
    }

    /// The zero function on `p` features.
    pub fn zero(p: usize) -> Self {
        AdditiveModel {
            components: vec![ComponentFn::constant(0.0); p],
        }
    }

    /// `β·x` on `[0,1]^p`.
    pub fn linear(beta: &[f64]) -> Self {
        AdditiveModel {
            components: beta.iter().map(|&b| ComponentFn::linear(b, 0.0)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidModel("model has no components".into()));
        }
        for (j, c) in self.components.iter().enumerate() {
            c.validate()
                .map_err(|e| Error::InvalidModel(format!("component {j}: {e}")))?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: AdditiveModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn p(&self) -> usize {
        self.components.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.components.iter().zip(x).map(|(g, &v)| g.eval(v)).sum()
    }

    /// `g(X_i)` for every row of `data`.
    pub fn eval_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_dims(data)?;
        let mut out = vec![0.0; data.n()];
        for (j, g) in self.components.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(data.column(j)) {
                *o += g.eval(x);
            }
        }
        Ok(out)
    }

    /// `Σ_j v(g_j)` from the closed-form variations.
    pub fn tv_norm_analytic(&self) -> f64 {
        self.components.iter().map(ComponentFn::variation).sum()
    }

    /// Number of nonconstant components.
    pub fn l0_norm(&self) -> usize {
        self.components.iter().filter(|c| !c.is_constant()).count()
    }

    /// Sample-path variation: for each column, the sum of
    /// `|g_j(X'_{i+1}) - g_j(X'_i)|` over the column's sorted sample.
    pub fn tv_norm_empirical(&self, data: &Dataset) -> Result<f64> {
        self.check_dims(data)?;
        let mut total = 0.0;
        for (j, g) in self.components.iter().enumerate() {
            let col = data.column(j);
            total += data
                .sort_index(j)
                .windows(2)
                .map(|w| (g.eval(col[w[1]]) - g.eval(col[w[0]])).abs())
                .sum::<f64>();
        }
        Ok(total)
    }

    /// Sample-path variation restricted to `rows`.
    pub fn tv_norm_empirical_on(&self, data: &Dataset, rows: &[usize]) -> Result<f64> {
        self.check_dims(data)?;
        let mut sorted = rows.to_vec();
        let mut total = 0.0;
        for (j, g) in self.components.iter().enumerate() {
            let col = data.column(j);
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            total += sorted
                .windows(2)
                .map(|w| (g.eval(col[w[1]]) - g.eval(col[w[0]])).abs())
                .sum::<f64>();
        }
        Ok(total)
    }

    fn check_dims(&self, data: &Dataset) -> Result<()> {
        if data.p() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: data.p(),
            });
        }
        Ok(())
    }
}

/// Distribution of the feature vector for synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLaw {
    /// Independent `U[0,1)` coordinates.
    Uniform01,
    /// Equicorrelated standard normals with correlation `rho`, pushed through
    /// the normal CDF so every coordinate is marginally uniform on `[0,1]`.
    CorrelatedGaussian { rho: f64 },
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Draws `n` feature vectors from `law`.
pub fn sample_features<R: Rng>(law: FeatureLaw, n: usize, p: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut columns = vec![Vec::with_capacity(n); p];
    match law {
        FeatureLaw::Uniform01 => {
            for _ in 0..n {
                for col in columns.iter_mut() {
                    col.push(rng.random::<f64>());
                }
            }
        }
        FeatureLaw::CorrelatedGaussian { rho } => {
            let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
            for _ in 0..n {
                let shared: f64 = StandardNormal.sample(rng);
                for col in columns.iter_mut() {
                    let own: f64 = StandardNormal.sample(rng);
                    col.push(normal_cdf(a * shared + b * own));
                }
            }
        }
    }
    columns
}

/// Draws `Y_i = g(X_i) + ε_i`, `ε_i ~ N(0, noise_sd²)`. Deterministic in `seed`.
pub fn generate_additive(
    model: &AdditiveModel,
    n: usize,
    noise_sd: f64,
    law: FeatureLaw,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("n must be at least 1"));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::config(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    if let FeatureLaw::CorrelatedGaussian { rho } = law {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::config(format!("rho must lie in [0, 1), got {rho}")));
        }
    }
    model.validate()?;
    let mut rng = rng::generator(seed);
    let columns = sample_features(law, n, model.p(), &mut rng);
    let mut response = vec![0.0; n];
    for (g, col) in model.components.iter().zip(&columns) {
        for (y, &x) in response.iter_mut().zip(col) {
            *y += g.eval(x);
        }
    }
    if noise_sd > 0.0 {
        for y in response.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *y += noise_sd * e;
        }
    }
    Dataset::from_columns(columns, response)
}

/// Result of [`augment_interactions`].
#[derive(Debug, Clone)]
pub struct Augmented {
    pub data: Dataset,
    /// Set when the input had fewer than two features and nothing was added.
    pub warning: Option<String>,
}

/// Appends the `p(p-1)/2` products `X_j X_j'` (`j < j'`, lexicographic).
pub fn augment_interactions(data: &Dataset) -> Result<Augmented> {
    let p = data.p();
    if p < 2 {
        return Ok(Augmented {
            data: data.clone(),
            warning: Some(format!("{p} feature(s): no interactions to add")),
        });
    }
    let mut columns: Vec<Vec<f64>> = (0..p).map(|j| data.column(j).to_vec()).collect();
    let mut names: Vec<String> = (0..p).map(|j| data.feature_name(j)).collect();
    for a in 0..p {
        for b in a + 1..p {
            let prod = data
                .column(a)
                .iter()
                .zip(data.column(b))
                .map(|(u, v)| u * v)
                .collect();
            columns.push(prod);
            names.push(format!("{}*{}", data.feature_name(a), data.feature_name(b)));
        }
    }
    let out = Dataset::from_columns(columns, data.response().to_vec())?.with_feature_names(names)?;
    Ok(Augmented {
        data: out,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_small_table() {
        let f = write_tmp("x,y\n1,0\n2,0\n3,1\n");
        let d = load_csv(f.path(), &ResponseColumn::Name("y".into()), true).unwrap();
        assert_eq!((d.n(), d.p()), (3, 1));
        assert_eq!(d.column(0), &[1.0, 2.0, 3.0]);
        assert_eq!(d.response(), &[0.0, 0.0, 1.0]);
        assert_eq!(d.feature_name(0), "x");
    }

    #[test]
    fn load_by_index_without_header() {
        let f = write_tmp("0,1.5,2\n1,2.5,3\n");
        let d = load_csv(f.path(), &ResponseColumn::Index(0), false).unwrap();
        assert_eq!(d.p(), 2);
        assert_eq!(d.response(), &[0.0, 1.0]);
        assert_eq!(d.row(1), vec![2.5, 3.0]);
    }

    #[test]
    fn non_numeric_cell_names_position() {
        let f = write_tmp("x,y\n1,2\nabc,3\n");
        match load_csv(f.path(), &ResponseColumn::Name("y".into()), true) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 1)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_has_no_rows() {
        let f = write_tmp("");
        let err = load_csv(f.path(), &ResponseColumn::Index(0), false).unwrap_err();
        assert!(err.to_string().contains("no rows"), "{err}");
    }

    #[test]
    fn missing_response_column_is_config_error() {
        let f = write_tmp("a,b\n1,2\n");
        let err = load_csv(f.path(), &ResponseColumn::Name("y".into()), true).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(Dataset::from_columns(vec![vec![f64::NAN]], vec![1.0]).is_err());
        assert!(Dataset::from_columns(vec![vec![1.0]], vec![f64::INFINITY]).is_err());
        assert!(Dataset::from_columns(vec![], vec![1.0]).is_err());
        assert!(Dataset::from_columns(vec![vec![]], vec![]).is_err());
    }

    #[test]
    fn sort_index_is_stable_on_ties() {
        let d = Dataset::from_columns(vec![vec![2.0, 1.0, 2.0, 1.0]], vec![0.0; 4]).unwrap();
        assert_eq!(d.sort_index(0), &[1, 3, 0, 2]);
        assert!(d.sort_index_is_valid());
    }

    #[test]
    fn step_is_right_open() {
        let g = ComponentFn::step(vec![0.5], vec![0.0, 1.0]).unwrap();
        assert_eq!(g.eval(0.5), 0.0);
        assert_eq!(g.eval(0.500001), 1.0);
        assert_eq!(g.eval(-3.0), 0.0);
    }

    #[test]
    fn eval_examples() {
        let m = AdditiveModel::new(vec![ComponentFn::constant(1.5), ComponentFn::constant(-0.25)])
            .unwrap();
        assert_eq!(m.eval(&[0.3, 0.9]).unwrap(), 1.25);
        let lin = AdditiveModel::new(vec![
            ComponentFn::linear(2.0, 0.5),
            ComponentFn::linear(-1.0, 0.25),
        ])
        .unwrap();
        assert_eq!(lin.eval(&[0.0, 0.0]).unwrap(), 0.75);
        assert!(matches!(
            lin.eval(&[0.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn clamps_outside_domain() {
        let g = ComponentFn::linear(1.0, 0.0);
        assert_eq!(g.eval(1.7), 1.0);
        assert_eq!(g.eval(-0.2), 0.0);
        let pl = ComponentFn::piecewise_linear(vec![0.2, 0.6], vec![1.0, 3.0]).unwrap();
        assert_eq!(pl.eval(0.0), 1.0);
        assert_eq!(pl.eval(0.4), 2.0);
        assert_eq!(pl.eval(0.9), 3.0);
    }

    #[test]
    fn analytic_tv_examples() {
        let beta = [0.5, -2.0, 1.25];
        assert_abs_diff_eq!(AdditiveModel::linear(&beta).tv_norm_analytic(), 3.75);
        assert_eq!(AdditiveModel::zero(4).tv_norm_analytic(), 0.0);
        let step = ComponentFn::step(vec![0.3, 0.6], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(AdditiveModel::new(vec![step]).unwrap().tv_norm_analytic(), 2.0);
    }

    #[test]
    fn l0_counts_nonconstant() {
        let m = AdditiveModel::new(vec![
            ComponentFn::constant(1.0),
            ComponentFn::linear(0.0, 2.0),
            ComponentFn::linear(1.0, 0.0),
            ComponentFn::step(vec![0.5], vec![1.0, 1.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(m.l0_norm(), 1);
    }

    #[test]
    fn empirical_tv_identity_function() {
        let d = Dataset::from_columns(vec![vec![0.5, 0.9, 0.2]], vec![0.0; 3]).unwrap();
        let m = AdditiveModel::linear(&[1.0]);
        assert_abs_diff_eq!(m.tv_norm_empirical(&d).unwrap(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn empirical_tv_monotone_is_range() {
        let xs = vec![0.11, 0.73, 0.05, 0.48, 0.97, 0.3];
        let d = Dataset::from_columns(vec![xs.clone()], vec![0.0; xs.len()]).unwrap();
        let g = ComponentFn::piecewise_linear(vec![0.0, 0.5, 1.0], vec![0.0, 2.0, 2.5]).unwrap();
        let expected = g.eval(0.97) - g.eval(0.05);
        let m = AdditiveModel::new(vec![g]).unwrap();
        assert_abs_diff_eq!(m.tv_norm_empirical(&d).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn generate_noiseless_identity() {
        let m = AdditiveModel::linear(&[1.0]);
        let d = generate_additive(&m, 10, 0.0, FeatureLaw::Uniform01, 3).unwrap();
        assert_eq!(d.column(0), d.response());
    }

    #[test]
    fn generate_is_deterministic() {
        let m = AdditiveModel::linear(&[1.0, -1.0, 0.5]);
        let law = FeatureLaw::CorrelatedGaussian { rho: 0.5 };
        let a = generate_additive(&m, 50, 0.3, law, 11).unwrap();
        let b = generate_additive(&m, 50, 0.3, law, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_additive(&m, 50, 0.3, law, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generate_step_is_binary() {
        let m = AdditiveModel::new(vec![ComponentFn::step(vec![0.5], vec![0.0, 1.0]).unwrap()])
            .unwrap();
        let d = generate_additive(&m, 200, 0.0, FeatureLaw::Uniform01, 5).unwrap();
        for i in 0..d.n() {
            let expected = if d.value(i, 0) > 0.5 { 1.0 } else { 0.0 };
            assert_eq!(d.response()[i], expected);
        }
    }

    #[test]
    fn generate_rejects_bad_parameters() {
        let m = AdditiveModel::linear(&[1.0]);
        assert!(generate_additive(&m, 0, 0.0, FeatureLaw::Uniform01, 0).is_err());
        assert!(generate_additive(&m, 5, -1.0, FeatureLaw::Uniform01, 0).is_err());
        let law = FeatureLaw::CorrelatedGaussian { rho: 1.0 };
        assert!(generate_additive(&m, 5, 0.0, law, 0).is_err());
    }

    #[test]
    fn augment_examples() {
        let d = Dataset::from_rows(&[vec![2.0, 3.0]], vec![1.0]).unwrap();
        let a = augment_interactions(&d).unwrap();
        assert!(a.warning.is_none());
        assert_eq!(a.data.row(0), vec![2.0, 3.0, 6.0]);

        let d3 = Dataset::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], vec![0.0, 1.0])
            .unwrap();
        let a3 = augment_interactions(&d3).unwrap();
        assert_eq!(a3.data.p(), 6);
        assert_eq!(a3.data.row(1), vec![4.0, 5.0, 6.0, 20.0, 24.0, 30.0]);
        assert!(a3.data.sort_index_is_valid());

        let d1 = Dataset::from_rows(&[vec![1.0]], vec![0.0]).unwrap();
        let a1 = augment_interactions(&d1).unwrap();
        assert!(a1.warning.is_some());
        assert_eq!(a1.data, d1);
    }

    #[test]
    fn model_json_field_names() {
        let json = r#"{"components":[
            {"kind":"step","breakpoints":[0.5],"levels":[0,1]},
            {"kind":"linear","slope":2,"intercept":0},
            {"kind":"piecewise_linear","knots":[0,1],"values":[0,1]},
            {"kind":"constant","value":3,"domain":{"lo":-1,"hi":1}}
        ]}"#;
        let m = AdditiveModel::from_json(json).unwrap();
        assert_eq!(m.p(), 4);
        assert_eq!(m.components[3].domain, Domain { lo: -1.0, hi: 1.0 });
        assert_eq!(AdditiveModel::from_json(&m.to_json().unwrap()).unwrap(), m);
        let bad = r#"{"components":[{"kind":"step","breakpoints":[0.6,0.4],"levels":[0,1,2]}]}"#;
        assert!(AdditiveModel::from_json(bad).is_err());
    }

    fn arb_pl() -> impl Strategy<Value = ComponentFn> {
        prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 1..8).prop_map(|mut pts| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.dedup_by(|a, b| a.0 == b.0);
            let (knots, values) = pts.into_iter().unzip();
            ComponentFn::piecewise_linear(knots, values).unwrap()
        })
    }

    fn arb_component() -> impl Strategy<Value = ComponentFn> {
        prop_oneof![
            (-2.0f64..2.0).prop_map(ComponentFn::constant),
            (-3.0f64..3.0, -1.0f64..1.0).prop_map(|(s, c)| ComponentFn::linear(s, c)),
            prop::collection::vec((0.0f64..1.0, -2.0f64..2.0), 1..6).prop_map(|mut pts| {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                pts.dedup_by(|a, b| a.0 == b.0);
                let bps: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let mut levels: Vec<f64> = pts.iter().map(|p| p.1).collect();
                levels.push(0.5);
                ComponentFn::step(bps, levels).unwrap()
            }),
            arb_pl(),
        ]
    }

    proptest! {
        #[test]
        fn sort_index_sorts_every_column(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..40)
        ) {
            let y = vec![0.0; rows.len()];
            let d = Dataset::from_rows(&rows, y).unwrap();
            prop_assert!(d.sort_index_is_valid());
            let a = augment_interactions(&d).unwrap();
            prop_assert!(a.data.sort_index_is_valid());
            prop_assert_eq!(a.data.p(), 6);
        }

        #[test]
        fn empirical_tv_matches_sorted_pairs_and_bounded_by_analytic(
            comps in prop::collection::vec(arb_component(), 1..4),
            seed in 0u64..1000,
            n in 1usize..60,
        ) {
            let m = AdditiveModel::new(comps).unwrap();
            let d = generate_additive(&m, n, 0.0, FeatureLaw::Uniform01, seed).unwrap();
            let emp = m.tv_norm_empirical(&d).unwrap();
            // Oracle: sort each column independently and sum |increments|.
            let mut brute = 0.0;
            for (j, g) in m.components.iter().enumerate() {
                let mut xs = d.column(j).to_vec();
                xs.sort_by(f64::total_cmp);
                for w in xs.windows(2) {
                    brute += (g.eval(w[1]) - g.eval(w[0])).abs();
                }
            }
            prop_assert!((emp - brute).abs() <= 1e-12);
            prop_assert!(emp <= m.tv_norm_analytic() + 1e-12);
            let all: Vec<usize> = (0..d.n()).collect();
            prop_assert!((m.tv_norm_empirical_on(&d, &all).unwrap() - emp).abs() <= 1e-12);
        }

        #[test]
        fn eval_is_sum_of_components_and_noiseless_generation_matches(
            comps in prop::collection::vec(arb_component(), 1..5),
            seed in 0u64..1000,
        ) {
            let m = AdditiveModel::new(comps).unwrap();
            let d = generate_additive(&m, 25, 0.0, FeatureLaw::CorrelatedGaussian { rho: 0.4 }, seed)
                .unwrap();
            for i in 0..d.n() {
                let x = d.row(i);
                let per: f64 = m.components.iter().zip(&x).map(|(g, &v)| g.eval(v)).sum();
                let total = m.eval(&x).unwrap();
                prop_assert_eq!(total, per);
                prop_assert!((d.response()[i] - total).abs() <= 1e-12);
            }
        }
    }
}
