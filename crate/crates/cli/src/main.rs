use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cartforest::data::{generate_additive, load_csv, read_table};
use cartforest::forest::{Forest, Model};
use cartforest::prune::{prune, prune_path};
use cartforest::verify::{
    consistency_experiment, format_float, run_suite, CorpusConfig, Engine, ExperimentConfig,
    ModelFamily, QRule, Suite, SuiteConfig,
};
use cartforest::{
    AdditiveModel, Dataset, Error, FeatureLaw, ForestConfig, Mtry, PruneConfig, ResampleMode,
    ResponseColumn, Result, Tree, TreeConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

const AFTER_HELP: &str = "\
Floats in CSV output are written in the shortest form that parses back to the
same value, so reruns with the same --seed produce byte-identical files.

Exit codes: 0 success, 1 verification violation, 2 usage or config error,
3 IO or parse error.";

#[derive(Parser)]
#[command(name = "cartforest", version, about = "CART trees, random forests and their training-error certificates", after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a tree (or a forest with --trees) and write it as JSON.
    Train(TrainArgs),
    /// Predict with a tree or forest model.
    Predict(PredictArgs),
    /// Cost-complexity pruning of a fitted tree.
    Prune(PruneArgs),
    /// Run verification suites over a randomized corpus.
    Verify(VerifyArgs),
    /// Held-out error along a growing-n schedule.
    Experiment(ExperimentArgs),
    /// Generate a synthetic additive dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with one row per observation.
    #[arg(long)]
    data: PathBuf,
    /// Response column, by header name or zero-based index (default: last column).
    #[arg(long)]
    response: Option<String>,
    /// The CSV has no header row.
    #[arg(long)]
    no_header: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let column = match &self.response {
            Some(s) => ResponseColumn::parse(s),
            None => {
                let table = read_table(&self.data, !self.no_header)?;
                ResponseColumn::Index(table.rows[0].len() - 1)
            }
        };
        load_csv(&self.data, &column, !self.no_header)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Maximum depth K.
    #[arg(long)]
    depth: usize,
    /// Candidate features per node: "all" or a count in 1..=p.
    #[arg(long, value_parser = parse_mtry)]
    mtry: Option<Mtry>,
    /// Grow a forest of this many trees instead of a single tree.
    #[arg(long)]
    trees: Option<usize>,
    /// Forest resampling: bootstrap, subsample, subsample:<k> or none.
    #[arg(long, default_value = "bootstrap", value_parser = parse_resample)]
    resample: ResampleMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Training summary CSV (default: stdout).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Tree or forest JSON.
    #[arg(long)]
    model: PathBuf,
    /// Feature CSV. A trailing column named "y" is ignored.
    #[arg(long)]
    data: PathBuf,
    /// Column to drop before predicting, by header name or zero-based index.
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    no_header: bool,
    /// Predictions CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    /// Tree JSON.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Penalty multiplier; each leaf costs alpha * ln(n p) / n.
    #[arg(long, requires = "out")]
    alpha: Option<f64>,
    /// Pruned tree JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the weakest-link path as CSV (alpha,size,train_mse).
    #[arg(long)]
    prune_path: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suites to run: identity, lemma2, node-gain, mtry.
    #[arg(long, required = true, value_parser = parse_suite)]
    suite: Vec<Suite>,
    /// Number of corpus instances.
    #[arg(long, default_value_t = 200)]
    corpus: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tree depth (default: 5 for identity, 10 otherwise).
    #[arg(long)]
    depth: Option<usize>,
    /// Monte-Carlo draws per node for the mtry suite.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    /// Directory for <suite>.csv and <suite>_summary.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineKind {
    Tree,
    Forest,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyKind {
    /// Step, linear and tent components on the first three features.
    SparseMixed,
    /// x1 - x2 + 0.5 x3.
    SparseLinear,
    /// The constant 1.
    Constant,
}

impl FamilyKind {
    fn family(self) -> ModelFamily {
        match self {
            FamilyKind::SparseMixed => ModelFamily::SparseMixed,
            FamilyKind::SparseLinear => ModelFamily::SparseLinear {
                beta: vec![1.0, -1.0, 0.5],
            },
            FamilyKind::Constant => ModelFamily::Constant { value: 1.0 },
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum, default_value = "tree")]
    engine: EngineKind,
    /// Forest candidates per node: third, all or a count.
    #[arg(long, default_value = "third", value_parser = parse_qrule)]
    mtry_rule: QRule,
    /// Trees per forest.
    #[arg(long, default_value_t = 50)]
    trees: usize,
    #[arg(long, default_value = "bootstrap", value_parser = parse_resample)]
    resample: ResampleMode,
    /// Comma-separated, strictly increasing sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
    grid: Vec<usize>,
    #[arg(long, value_enum, default_value = "sparse-mixed")]
    family: FamilyKind,
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    /// Held-out points per grid point.
    #[arg(long, default_value_t = 2000)]
    test_size: usize,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dimension schedule p = floor(exp(c n^(1 - xi))).
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.9)]
    xi: f64,
    #[arg(long, default_value_t = 200)]
    p_max: usize,
    /// Report CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON with per-n averages.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    /// Number of features (default: 3, or the model's when --model is given).
    #[arg(long)]
    p: Option<usize>,
    /// Additive model JSON; overrides --family.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sparse-mixed")]
    family: FamilyKind,
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    /// Equicorrelation of the features through a Gaussian copula (0 = independent uniforms).
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Write the generating model as JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

fn parse_mtry(s: &str) -> std::result::Result<Mtry, String> {
    match s.parse::<Mtry>()? {
        Mtry::Count(0) => Err("mtry must be \"all\" or at least 1".into()),
        m => Ok(m),
    }
}

fn parse_resample(s: &str) -> std::result::Result<ResampleMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_suite(s: &str) -> std::result::Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_qrule(s: &str) -> std::result::Result<QRule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => io::stdout()
            .write_all(contents.as_bytes())
            .map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

fn train(args: &TrainArgs) -> Result<ExitCode> {
    let data = args.data.load()?;
    let (json, summary) = match args.trees {
        None => {
            let mut config = TreeConfig::new(args.depth).with_seed(args.seed);
            if let Some(m) = args.mtry {
                config = config.with_mtry(m);
            }
            let tree = Tree::fit(&data, &config)?;
            let mut summary = String::from("depth,train_mse\n");
            for (k, e) in tree.training_errors_by_depth(&data)?.into_iter().enumerate() {
                summary.push_str(&format!("{k},{}\n", format_float(e)));
            }
            (tree.to_json()?, summary)
        }
        Some(m) => {
            let mut config = ForestConfig::new(args.depth, m)
                .with_resample(args.resample)
                .with_seed(args.seed);
            config.mtry = args.mtry;
            let forest = Forest::fit(&data, &config)?;
            let summary = format!(
                "depth,train_mse\n{},{}\n",
                args.depth,
                format_float(forest.training_error(&data)?)
            );
            (forest.to_json()?, summary)
        }
    };
    write_file(&args.out, &json)?;
    emit(args.summary.as_deref(), &summary)?;
    Ok(ExitCode::SUCCESS)
}

fn predict(args: &PredictArgs) -> Result<ExitCode> {
    let model = Model::from_json(&read_file(&args.model)?)?;
    let table = read_table(&args.data, !args.no_header)?;
    let width = table.rows[0].len();
    let drop = match &args.response {
        Some(s) => Some(match ResponseColumn::parse(s) {
            ResponseColumn::Index(i) if i < width => i,
            ResponseColumn::Index(i) => {
                return Err(Error::Config(format!("--response {i} out of range for {width} columns")))
            }
            ResponseColumn::Name(name) => table
                .header
                .as_ref()
                .and_then(|h| h.iter().position(|c| *c == name))
                .ok_or_else(|| Error::Config(format!("--response column {name:?} not found")))?,
        }),
        None => {
            let trailing_y = table.header.as_ref().is_some_and(|h| h.last().is_some_and(|c| c == "y"));
            (width == model.p() + 1 && trailing_y).then_some(width - 1)
        }
    };
    let mut out = String::from("prediction\n");
    for row in &table.rows {
        let x: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|&(c, _)| Some(c) != drop)
            .map(|(_, &v)| v)
            .collect();
        out.push_str(&format_float(model.predict(&x)?));
        out.push('\n');
    }
    emit(args.out.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}

fn prune_cmd(args: &PruneArgs) -> Result<ExitCode> {
    if args.alpha.is_none() && args.prune_path.is_none() {
        return Err(Error::Config("prune needs --alpha or --prune-path".into()));
    }
    let tree = match Model::from_json(&read_file(&args.model)?)? {
        Model::Tree(t) => t,
        Model::Forest(_) => return Err(Error::Config("prune works on a single tree, got a forest".into())),
    };
    let data = args.data.load()?;
    if let Some(path) = &args.prune_path {
        let mut csv = String::from("alpha,size,train_mse\n");
        for e in prune_path(&tree, &data)? {
            csv.push_str(&format!(
                "{},{},{}\n",
                format_float(e.alpha),
                e.leaves,
                format_float(e.train_mse)
            ));
        }
        write_file(path, &csv)?;
    }
    if let (Some(alpha), Some(out)) = (args.alpha, &args.out) {
        let pruned = prune(&tree, &data, &PruneConfig::new(alpha)?)?;
        write_file(out, &pruned.to_json()?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(args: &VerifyArgs) -> Result<ExitCode> {
    fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    let mut violations = 0;
    for &suite in &args.suite {
        let mut config = SuiteConfig::new(suite, CorpusConfig::new(args.corpus, args.seed));
        config.depth = args.depth;
        config.draws = args.draws;
        let report = run_suite(&config)?;
        violations += report.summary.violations;
        write_file(&args.out_dir.join(format!("{suite}.csv")), &report.to_csv())?;
        let summary = serde_json::to_string(&report.summary)?;
        write_file(&args.out_dir.join(format!("{suite}_summary.json")), &summary)?;
        println!("{summary}");
    }
    Ok(if violations == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn experiment(args: &ExperimentArgs) -> Result<ExitCode> {
    let engine = match args.engine {
        EngineKind::Tree => Engine::Tree,
        EngineKind::Forest => Engine::Forest {
            q_rule: args.mtry_rule,
            n_trees: args.trees,
            resample: args.resample,
        },
    };
    let mut config = ExperimentConfig::new(args.family.family(), args.grid.clone(), engine);
    config.noise_sd = args.noise_sd;
    config.test_size = args.test_size;
    config.replicates = args.replicates;
    config.seed = args.seed;
    config.c = args.c;
    config.xi = args.xi;
    config.p_max = args.p_max;
    let report = consistency_experiment(&config)?;
    for row in report.rows.iter().filter(|r| r.p_capped && r.replicate == 0) {
        eprintln!("warning: dimension schedule capped at p_max = {} for n = {}", row.p, row.n);
    }
    emit(args.out.as_deref(), &report.to_csv())?;
    if let Some(path) = &args.summary {
        let means: Vec<serde_json::Value> = report
            .mean_test_mse()
            .into_iter()
            .map(|(n, mse)| {
                let first = report.rows.iter().find(|r| r.n == n).expect("row per grid point");
                serde_json::json!({
                    "n": n, "p": first.p, "K": first.k, "q": first.q, "M": first.m,
                    "mean_test_mse": mse, "bound_rate": first.bound_rate,
                })
            })
            .collect();
        let summary = serde_json::json!({
            "engine": engine.to_string(),
            "family": config.family.to_string(),
            "replicates": config.replicates,
            "noise_sd": config.noise_sd,
            "schedule": { "c": config.c, "xi": config.xi, "p_max": config.p_max },
            "by_n": means,
        });
        write_file(path, &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(args: &SynthArgs) -> Result<ExitCode> {
    let model = match &args.model {
        Some(path) => {
            let m = AdditiveModel::from_json(&read_file(path)?)?;
            if let Some(p) = args.p.filter(|&p| p != m.p()) {
                return Err(Error::Config(format!("--p {p} disagrees with the model's {} components", m.p())));
            }
            m
        }
        None => args.family.family().build(args.p.unwrap_or(3))?,
    };
    let law = if args.rho == 0.0 {
        FeatureLaw::Uniform01
    } else {
        FeatureLaw::CorrelatedGaussian { rho: args.rho }
    };
    let data = generate_additive(&model, args.n, args.noise_sd, law, args.seed)?;
    data.write_csv(&args.out)?;
    if let Some(path) = &args.model_out {
        write_file(path, &model.to_json()?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::NoRows { .. } | Error::Json(_) | Error::InvalidModel(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Prune(a) => prune_cmd(a),
        Command::Verify(a) => verify(a),
        Command::Experiment(a) => experiment(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
