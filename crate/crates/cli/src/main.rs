//! `ordseq` command-line front end.

mod data;
mod model;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ordseq::data_model::{
    make_subset_schedule, ordering_from_lags, ordering_from_missingness, ordering_from_variance, Dataset,
    Ordering, StandardizePolicy,
};
use ordseq::lasso_engine::{default_lambda_ratio, SparseCoef, SqrtLassoConfig};
use ordseq::order_path::PathConfig;
use ordseq::selection::{kfold_cv_select, lambda_grid_for, CVPlan, FitMode, SelectConfig};
use ordseq::suites::{bench_order_path, run_suite, write_csv, SuiteId};
use ordseq::ErrorClass;
use sha2::{Digest, Sha256};

use crate::data::{read_table, to_dataset};
use crate::model::{FittedModel, Metadata, Selected, SCHEMA_VERSION};

#[derive(Debug)]
pub enum CliError {
    Core(ordseq::Error),
    Schema(String),
    Io(String),
    Config(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
        }
    }
}

impl From<ordseq::Error> for CliError {
    fn from(e: ordseq::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Config => 4,
            },
            CliError::Schema(_) | CliError::Io(_) => 2,
            CliError::Config(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "ordseq", version, args_override_self = true, about = "Nested-subset Lasso and ridge guided by a variable ordering")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "ORDSEQ_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a grid over nested subsets, select a cell by cross-validation, save the model.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Run a simulation suite and write per-replicate metrics.
    Simulate(SimulateArgs),
    /// Time grid fits for several grid sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, PartialEq)]
enum OrderingSource {
    Variance,
    Missingness,
    Lags,
    AsIs,
    File(PathBuf),
}

impl FromStr for OrderingSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "variance" => Ok(Self::Variance),
            "missingness" => Ok(Self::Missingness),
            "lags" => Ok(Self::Lags),
            "asis" => Ok(Self::AsIs),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
                _ => Err(format!(
                    "'{s}' is not one of variance, missingness, lags, asis, file:PATH"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GridSize {
    Count(usize),
    Full,
}

impl FromStr for GridSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "p" {
            return Ok(Self::Full);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Self::Count(k)),
            _ => Err(format!("grid size must be a positive integer or 'p', got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Lasso,
    Ridge,
    LassoMissing,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Standardize {
    /// Center and scale columns to unit variance.
    Scale,
    /// Center only.
    Center,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    /// variance | missingness | lags | asis | file:PATH
    #[arg(long, default_value = "variance")]
    ordering: OrderingSource,
    /// Number of nested subsets, or `p` for every size.
    #[arg(long, default_value = "10")]
    grid_size: GridSize,
    #[arg(long, default_value_t = 1)]
    min_subset: usize,
    #[arg(long, default_value_t = 100)]
    nlambda: usize,
    /// Smallest over largest lambda (default depends on n and p).
    #[arg(long)]
    lambda_ratio: Option<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value_t = Mode::Lasso)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    sqrt_stop: Switch,
    #[arg(long)]
    lambda_sq: Option<f64>,
    #[arg(long, value_enum, default_value_t = Standardize::Scale)]
    standardize: Standardize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Lag orderings: lags per series; columns must be series-major.
    #[arg(long)]
    max_lag: Option<usize>,
    /// Lag orderings: 1-based target series.
    #[arg(long, default_value_t = 1)]
    target_series: usize,
    /// Lag orderings: 1-based series ranked right after the target.
    #[arg(long)]
    partner_series: Option<usize>,
    /// Lag orderings: lag placed first inside every series.
    #[arg(long)]
    season_lag: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// ordering-quality | corruption | missing | theorem1
    #[arg(long)]
    suite: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 71)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    p: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    nlambda: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

/// Read an ordering file: column names or 0-based indices separated by
/// commas or whitespace, most important first.
fn read_ordering_file(path: &Path, names: &[String]) -> Result<Ordering, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let tokens: Vec<&str> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect();
    let perm = if tokens.iter().all(|t| t.parse::<usize>().is_ok()) {
        tokens.iter().map(|t| t.parse().unwrap()).collect()
    } else {
        tokens
            .iter()
            .map(|t| {
                names.iter().position(|n| n == t).ok_or_else(|| {
                    ordseq::Error::InvalidOrdering(format!("ordering file names unknown column '{t}'"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    if perm.len() != names.len() {
        return Err(ordseq::Error::InvalidOrdering(format!(
            "ordering file has {} entries for {} predictors",
            perm.len(),
            names.len()
        ))
        .into());
    }
    Ok(Ordering::new(perm)?)
}

fn build_ordering(a: &FitArgs, data: &Dataset) -> Result<Ordering, CliError> {
    let p = data.p();
    match &a.ordering {
        OrderingSource::Variance => Ok(ordering_from_variance(data)),
        OrderingSource::Missingness => Ok(match &data.mask {
            Some(m) => ordering_from_missingness(m),
            None => Ordering::identity(p),
        }),
        OrderingSource::AsIs => Ok(Ordering::identity(p)),
        OrderingSource::File(path) => read_ordering_file(path, data.column_names.as_deref().unwrap_or(&[])),
        OrderingSource::Lags => {
            let max_lag = a
                .max_lag
                .ok_or_else(|| CliError::Config("--ordering lags needs --max-lag".into()))?;
            if max_lag == 0 || !p.is_multiple_of(max_lag) {
                return Err(CliError::Config(format!(
                    "{p} predictors do not split into series of {max_lag} lags"
                )));
            }
            Ok(ordering_from_lags(p / max_lag, max_lag, a.target_series, a.partner_series, a.season_lag)?)
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let bytes = std::fs::read(&a.data).map_err(|e| CliError::Io(format!("{}: {e}", a.data.display())))?;
    let table = read_table(&a.data)?;
    let data = to_dataset(&table, &a.response)?;
    let (n, p) = (data.n(), data.p());

    let mode = match a.mode {
        Mode::Lasso => FitMode::Lasso,
        Mode::Ridge => FitMode::Ridge,
        Mode::LassoMissing => FitMode::LassoMissing,
    };
    if data.has_missing() && mode != FitMode::LassoMissing {
        return Err(CliError::Config(
            "data has missing entries; use --mode lasso-missing".into(),
        ));
    }
    if a.lambda_sq.is_some() && matches!(a.sqrt_stop, Switch::Off) {
        return Err(CliError::Config("--lambda-sq given with --sqrt-stop off".into()));
    }

    let ordering = build_ordering(a, &data)?;
    let k = match a.grid_size {
        GridSize::Full => p,
        GridSize::Count(k) => k,
    };
    let schedule = make_subset_schedule(p, k, a.min_subset)?;
    let sqrt_stop = match (a.sqrt_stop, a.lambda_sq) {
        (Switch::Off, _) => SqrtLassoConfig::disabled(),
        (Switch::On, Some(v)) => SqrtLassoConfig::enabled(v)?,
        (Switch::On, None) => SqrtLassoConfig::with_default(n, p),
    };
    let mut cfg = SelectConfig::new(mode, PathConfig::new(sqrt_stop));
    cfg.policy = match a.standardize {
        Standardize::Scale => StandardizePolicy::CenterAndScale,
        Standardize::Center => StandardizePolicy::CenterOnly,
    };
    let ratio = a.lambda_ratio.unwrap_or_else(|| default_lambda_ratio(n, p));
    let grid = lambda_grid_for(&data, &cfg, a.nlambda, ratio)?;
    let plan = CVPlan::kfold(n, a.folds, a.seed)?;
    let sel = kfold_cv_select(&data, &ordering, &schedule, &grid, &plan, &cfg)?;

    let (beta, intercept) = sel.original_scale();
    let mut coefficients = SparseCoef::zeros(p);
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            coefficients.indices.push(j);
            coefficients.values.push(b);
        }
    }
    coefficients.intercept = intercept;

    let names = data.column_names.clone().unwrap_or_default();
    let mut model = FittedModel {
        schema_version: SCHEMA_VERSION,
        mode,
        response: a.response.clone(),
        feature_names: names,
        coefficients,
        standardization: sel.standardization.clone(),
        ordering,
        schedule,
        lambda_grid: grid,
        selected: Selected {
            k: sel.k_star,
            l: sel.l_star,
            subset_size: sel.subset_size,
            lambda: sel.lambda,
            cv_score: sel.scores[(sel.k_star, sel.l_star)],
            candidates: sel.candidates_considered,
        },
        fitted_values: Vec::new(),
        metadata: Metadata {
            seed: a.seed,
            folds: a.folds,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            source_sha256: sha256_hex(&bytes),
            source_path: a.data.display().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    model.fitted_values = model.predict_table(&table)?.0;
    model.save(&a.out)?;

    let s = &model.selected;
    println!(
        "selected k*={} l*={} subset_size={} lambda={:.6e} cv_score={:.6e} nonzero={} candidates={}",
        s.k,
        s.l,
        s.subset_size,
        s.lambda,
        s.cv_score,
        model.coefficients.indices.len(),
        s.candidates
    );
    eprintln!("fit finished in {:.2}s ({}x{}, mode {:?})", start.elapsed().as_secs_f64(), n, p, mode);
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = FittedModel::load(&a.model)?;
    let table = read_table(&a.data)?;
    let (preds, extra) = model.predict_table(&table)?;
    if !extra.is_empty() {
        eprintln!("warning: ignoring unused columns: {}", extra.join(", "));
    }
    let mut out = String::from("prediction\n");
    for v in preds {
        out.push_str(&format!("{v:?}\n"));
    }
    output(a.out.as_deref(), &out)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let suite: SuiteId = a.suite.parse()?;
    let records = run_suite(suite, a.reps, a.seed)?;
    let mut buf = Vec::new();
    write_csv(&records, &mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    output(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    if a.ks.is_empty() || a.repeats == 0 {
        return Err(CliError::Config("need at least one K and one repeat".into()));
    }
    let rows = bench_order_path(a.n, a.p, &a.ks, a.nlambda, a.repeats, a.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["n", "p", "k", "seconds", "coordinate_updates", "solved_cells"])
        .map_err(io)?;
    for r in &rows {
        w.write_record([
            r.n.to_string(),
            r.p.to_string(),
            r.k.to_string(),
            format!("{:.6}", r.seconds),
            r.coordinate_updates.to_string(),
            r.solved_cells.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    output(a.out.as_deref(), &String::from_utf8_lossy(&bytes))?;

    let base = rows.iter().find(|r| r.k == 1).map(|r| r.seconds);
    if let (Some(t1), Some(last)) = (base, rows.iter().max_by_key(|r| r.k)) {
        eprintln!(
            "time(K={})/time(K=1) = {:.3} (proportional scaling would give {})",
            last.k,
            last.seconds / t1,
            last.k
        );
    }
    Ok(())
}
