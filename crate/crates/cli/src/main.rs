//! `rxml`: train, predict, evaluate and sweep local embedding models.
//!
//! Exit codes: 0 on success, 1 when a selftest check or a numerical step
//! fails, 2 on usage errors and unreadable inputs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rxml_core::data_io::{load_xmc_file_with, LoadOptions, SparseDataset};
use rxml_core::metrics::{evaluate, EvalReport};
use rxml_core::model_io::{load_model, save_model};
use rxml_core::pipeline::{
    default_hyperparameters, predict_batch, train, train_with_report, EmbeddingSolver, TrainConfig,
};
use rxml_core::selftest::{run_selftest, SelftestOptions};
use rxml_core::Error;

#[derive(Parser)]
#[command(
    name = "rxml",
    version,
    about = "Local embeddings for extreme multi-label classification"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "RXML_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it to a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Write the top-scoring labels of every point, one line per point.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Labels per point.
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        top: u64,
        /// Neighbors consulted (default: the model's setting).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        nbar: Option<u64>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Score a model on labelled data with P@k and nDCG@k.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5", value_parser = clap::value_parser!(u64).range(1..))]
        k: Vec<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        nbar: Option<u64>,
        /// Also write the metrics as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Run the geometry, gradient, oracle and metric checks.
    Selftest {
        /// Only run checks whose group or name contains this string.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradients; the gradient checks must fail.
        #[arg(long, hide = true)]
        inject_gradient_bug: bool,
    },
    /// Train once per value of one hyperparameter and print P@1 as CSV.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u64).range(1..))]
        values: Vec<u64>,
        /// Also write the CSV to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        hyper: HyperArgs,
    },
}

#[derive(Args, Clone, Copy)]
struct InputArgs {
    /// Feature and label indices in the data files start at 1.
    #[arg(long)]
    one_based: bool,
    /// Scale every feature row to unit length.
    #[arg(long)]
    normalize: bool,
}

impl InputArgs {
    fn load(self, path: &Path) -> Result<SparseDataset, Error> {
        load_xmc_file_with(
            path,
            LoadOptions {
                one_based: self.one_based,
                l2_normalize: self.normalize,
            },
        )
    }
}

#[derive(Args, Clone)]
struct HyperArgs {
    /// Embedding dimension.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    r: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    clusters: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    learners: Option<u64>,
    /// Neighbors per point when building the embedding targets.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    nbar: Option<u64>,
    /// Neighbors consulted at prediction time.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    predict_nbar: Option<u64>,
    /// Ridge weight of the regressor.
    #[arg(long)]
    lambda: Option<f64>,
    /// L1 weight of the regressor.
    #[arg(long)]
    mu: Option<f64>,
    /// ADMM penalty parameter.
    #[arg(long)]
    rho: Option<f64>,
    /// Iteration budget of the embedding solver.
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    solver: Option<Solver>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy)]
enum Solver {
    Rcg,
    Svp,
}

#[derive(ValueEnum, Clone, Copy)]
enum SweepParam {
    R,
    Learners,
    Clusters,
    Maxit,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            Self::R => "r",
            Self::Learners => "learners",
            Self::Clusters => "clusters",
            Self::Maxit => "maxit",
        }
    }
}

fn to_usize(v: u64) -> usize {
    usize::try_from(v).unwrap_or(usize::MAX)
}

impl HyperArgs {
    fn config(&self, n: usize) -> TrainConfig {
        let mut cfg = default_hyperparameters(n);
        cfg.seed = self.seed;
        if let Some(v) = self.r {
            cfg.r = to_usize(v);
        }
        if let Some(v) = self.clusters {
            cfg.clusters = to_usize(v);
        }
        if let Some(v) = self.learners {
            cfg.num_learners = to_usize(v);
        }
        if let Some(v) = self.nbar {
            cfg.nbar = to_usize(v);
        }
        if let Some(v) = self.predict_nbar {
            cfg.predict_nbar = to_usize(v);
        }
        if let Some(v) = self.lambda {
            cfg.admm.lambda = v;
        }
        if let Some(v) = self.mu {
            cfg.admm.mu = v;
        }
        if let Some(v) = self.rho {
            cfg.admm.rho = v;
        }
        if let Some(v) = self.max_iters {
            cfg.rcg.max_iters = to_usize(v);
            cfg.svp_max_iters = to_usize(v);
        }
        match self.solver {
            Some(Solver::Rcg) => cfg.embedding_solver = EmbeddingSolver::Rcg,
            Some(Solver::Svp) => cfg.embedding_solver = EmbeddingSolver::Svp,
            None => {}
        }
        cfg
    }
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Version { .. }
            | Error::CorruptModel(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            _ => 1,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.msg = format!("{}: {}", path.display(), f.msg);
        f
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.into()).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Train {
            data,
            out,
            input,
            hyper,
        } => cmd_train(&data, &out, input, &hyper),
        Command::Predict {
            model,
            data,
            top,
            nbar,
            out,
            input,
        } => cmd_predict(&model, &data, to_usize(top), nbar.map(to_usize), out.as_deref(), input),
        Command::Eval {
            model,
            data,
            k,
            nbar,
            csv,
            input,
        } => cmd_eval(&model, &data, &k, nbar.map(to_usize), csv.as_deref(), input),
        Command::Selftest {
            filter,
            seed,
            inject_gradient_bug,
        } => Ok(cmd_selftest(SelftestOptions {
            filter,
            seed,
            inject_gradient_bug,
        })),
        Command::Sweep {
            data,
            test,
            param,
            values,
            csv,
            input,
            hyper,
        } => cmd_sweep(&data, &test, param, &values, csv.as_deref(), input, &hyper),
    }
}

fn cmd_train(data: &Path, out: &Path, input: InputArgs, hyper: &HyperArgs) -> Result<u8, Failure> {
    let ds = input.load(data).map_err(with_path(data))?;
    let cfg = hyper.config(ds.n());
    cfg.validate()?;
    let start = Instant::now();
    let (model, report) = train_with_report(&ds, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let bytes = save_model(&model, out).map_err(with_path(out))?;
    let summary = serde_json::json!({
        "dataset": { "name": ds.name, "n": ds.n(), "d": ds.d(), "l": ds.l() },
        "config": cfg,
        "report": report,
        "wall_secs": secs,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    fs::write(out.join("train_report.json"), text)?;

    let worst = report
        .clusters
        .iter()
        .map(|c| c.embedding_objective / c.target_norm_sq.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    println!(
        "trained {} learners x {} clusters on {} points",
        cfg.num_learners,
        cfg.clusters,
        ds.n()
    );
    println!("worst embedding objective / target: {worst:.3e}");
    println!("model: {} ({bytes} bytes)", out.display());
    println!("time: {secs:.3}s");
    Ok(0)
}

fn format_predictions(rows: &[Vec<(usize, f64)>]) -> String {
    let mut text = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|(label, score)| format!("{label}:{score:?}")).collect();
        let _ = writeln!(text, "{}", line.join(" "));
    }
    text
}

fn cmd_predict(
    model: &Path,
    data: &Path,
    top: usize,
    nbar: Option<usize>,
    out: Option<&Path>,
    input: InputArgs,
) -> Result<u8, Failure> {
    let m = load_model(model).map_err(with_path(model))?;
    let ds = input.load(data).map_err(with_path(data))?;
    let rows = predict_batch(&m, &ds.x, nbar.unwrap_or(m.config.predict_nbar), top)?;
    let text = format_predictions(&rows);
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(0)
}

fn cmd_eval(
    model: &Path,
    data: &Path,
    ks: &[u64],
    nbar: Option<usize>,
    csv: Option<&Path>,
    input: InputArgs,
) -> Result<u8, Failure> {
    let m = load_model(model).map_err(with_path(model))?;
    let ds = input.load(data).map_err(with_path(data))?;
    let ks: Vec<usize> = ks.iter().copied().map(to_usize).collect();
    let report: EvalReport = evaluate(&m, &ds, &ks, nbar.unwrap_or(m.config.predict_nbar))?;
    print!("{}", report.to_table());
    println!("time: {:.3}s", report.test_secs);
    if let Some(path) = csv {
        fs::write(path, report.to_csv())?;
    }
    Ok(0)
}

fn cmd_selftest(opts: SelftestOptions) -> u8 {
    let report = run_selftest(&opts);
    print!("{}", report.to_table());
    let failing: Vec<&str> = report.failing().map(|c| c.name).collect();
    if failing.is_empty() {
        println!("all {} checks passed", report.checks.len());
        0
    } else {
        println!("FAILED: {}", failing.join(", "));
        1
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    data: &Path,
    test: &Path,
    param: SweepParam,
    values: &[u64],
    csv: Option<&Path>,
    input: InputArgs,
    hyper: &HyperArgs,
) -> Result<u8, Failure> {
    let train_set = input.load(data).map_err(with_path(data))?;
    let test_set = input.load(test).map_err(with_path(test))?;
    let base = hyper.config(train_set.n());
    let mut text = format!("{},p_at_1\n", param.name());
    for &value in values {
        let v = to_usize(value);
        let mut cfg = base.clone();
        match param {
            SweepParam::R => cfg.r = v,
            SweepParam::Learners => cfg.num_learners = v,
            SweepParam::Clusters => cfg.clusters = v,
            SweepParam::Maxit => {
                cfg.rcg.max_iters = v;
                cfg.svp_max_iters = v;
            }
        }
        cfg.validate()?;
        let model = train(&train_set, &cfg)?;
        let report = evaluate(&model, &test_set, &[1], cfg.predict_nbar)?;
        let _ = writeln!(text, "{value},{}", report.precision[0]);
    }
    print!("{text}");
    if let Some(path) = csv {
        fs::write(path, &text)?;
    }
    Ok(0)
}
