use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use covshrink::bench::{eigen_diagnostic, run_benchmark, split_eval, write_records, BenchConfig, BenchOutcome};
use covshrink::error::{CovError, ErrorClass, Result};
use covshrink::gmodel::EmOptions;
use covshrink::io::{export_network, read_matrix_csv, write_matrix_csv};
use covshrink::methods::{EstimateContext, Method, MethodEntry};
use covshrink::sim::{make_sigma, sample_mvn, ModelSpec};

#[derive(Parser)]
#[command(name = "covshrink", version, about = "Covariance shrinkage estimators and benchmarks")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a Gaussian sample from one of the covariance models.
    Simulate(SimulateArgs),
    /// Estimate a covariance matrix from a data CSV.
    Estimate(EstimateArgs),
    /// Run the Monte-Carlo benchmark described by a JSON config.
    Benchmark(BenchmarkArgs),
    /// Score methods on random train/test splits of a data CSV.
    SplitEval(SplitEvalArgs),
    /// Distance between sample and population eigenvectors.
    EigenDiag(EigenDiagArgs),
    /// Keep the largest off-diagonal entries of a matrix as an edge list.
    ExportNetwork(ExportArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Model id, 1 to 6.
    #[arg(long)]
    model: u8,
    #[arg(long)]
    p: usize,
    /// Seed fixing the random parts of models 5 and 6.
    #[arg(long, default_value_t = 0)]
    model_seed: u64,
}

impl ModelArgs {
    fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.model, self.p).with_seed(self.model_seed)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data CSV (stdout if omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write the population covariance here.
    #[arg(long)]
    sigma_output: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Method name, or a JSON object such as '{"name":"adap","delta":1.5}'.
    #[arg(long, short, default_value = "msgcor")]
    method: String,
    #[arg(long, default_value_t = 1.0)]
    k_factor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// True covariance CSV, needed by the oracle methods.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Estimated matrix CSV (stdout if omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// EM fit report as JSON (g-modeling methods only).
    #[arg(long)]
    fit_report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output_path`; stdout if neither is set.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    k_factor: Option<f64>,
    /// Write zero timings so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
    /// Also write per-replicate failures as JSON.
    #[arg(long)]
    failures: Option<PathBuf>,
}

#[derive(Args)]
struct SplitEvalArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    train_n: usize,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', default_value = "msgcor,sample,linear,adap,nercome")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    k_factor: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EigenDiagArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 25)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Estimated matrix CSV.
    #[arg(long, short)]
    input: PathBuf,
    /// Number of edges to keep.
    #[arg(long)]
    edges: usize,
    #[arg(long, short)]
    output: PathBuf,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn parse_method(s: &str) -> Result<Method> {
    if s.trim_start().starts_with('{') {
        serde_json::from_str::<MethodEntry>(s).map_err(|e| CovError::Config(format!("bad method spec: {e}")))?.resolve()
    } else {
        s.parse()
    }
}

fn write_outcome(outcome: &BenchOutcome, path: Option<&Path>) -> Result<()> {
    write_records(&outcome.records, sink(path)?)?;
    if !outcome.failures.is_empty() {
        eprintln!("{} replicate fits failed and were excluded", outcome.failures.len());
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let sigma = make_sigma(&args.model.spec())?;
    let x = sample_mvn(&sigma, args.n, args.seed)?;
    covshrink::io::write_matrix(x.values(), None, sink(args.output.as_deref())?)?;
    if let Some(path) = &args.sigma_output {
        write_matrix_csv(&sigma, None, path)?;
    }
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let method = parse_method(&args.method)?;
    let data = read_matrix_csv(&args.input)?;
    let truth = match &args.truth {
        Some(path) => {
            let m = read_matrix_csv(path)?.data.into_inner();
            Some(covshrink::SymmetricEstimate::new(m, "truth")?)
        }
        None => None,
    };
    let ctx = EstimateContext {
        truth: truth.as_ref(),
        seed: args.seed,
        k_factor: args.k_factor,
        em: EmOptions { tol: args.tol, max_iter: args.max_iter, record_weights: false },
    };
    let out = method.estimate(&data.data, &ctx)?;
    info!("{} on {}x{}: {:?}", method, data.data.n(), data.data.p(), out.estimate.params());
    covshrink::io::write_matrix(out.estimate.values(), data.names.as_deref(), sink(args.output.as_deref())?)?;
    if let Some(path) = &args.fit_report {
        let report = out.fit.ok_or_else(|| CovError::Config(format!("{method} has no EM fit to report")))?;
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn benchmark(args: BenchmarkArgs, threads: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let mut cfg: BenchConfig = serde_json::from_str(&text)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(k) = args.k_factor {
        cfg.k_factor = k;
    }
    if args.no_timing {
        cfg.timing = false;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    if args.output.is_some() {
        cfg.output_path = args.output;
    }
    let outcome = run_benchmark(&cfg)?;
    write_outcome(&outcome, cfg.output_path.as_deref())?;
    if let Some(path) = &args.failures {
        fs::write(path, serde_json::to_string_pretty(&outcome.failures)?)?;
    }
    Ok(())
}

fn split_eval_cmd(args: SplitEvalArgs) -> Result<()> {
    let methods = args.methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>>>()?;
    let data = read_matrix_csv(&args.input)?;
    let ctx = EstimateContext { k_factor: args.k_factor, ..Default::default() };
    let outcome = split_eval(&data.data, args.train_n, args.repeats, args.seed, &methods, &ctx)?;
    write_outcome(&outcome, args.output.as_deref())
}

fn eigen_diag(args: EigenDiagArgs) -> Result<()> {
    let record = eigen_diagnostic(&args.model.spec(), args.n, args.replicates, args.seed)?;
    write_records(&[record], sink(args.output.as_deref())?)
}

fn export(args: ExportArgs) -> Result<()> {
    let m = read_matrix_csv(&args.input)?;
    let est = covshrink::SymmetricEstimate::new(m.data.into_inner(), "input")?;
    export_network(&est, args.edges, m.names.as_deref(), &args.output)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CovError::Config("threads must be >= 1".into()));
        }
        // a second initialization only fails if something already built the pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Benchmark(a) => benchmark(a, cli.threads),
        Command::SplitEval(a) => split_eval_cmd(a),
        Command::EigenDiag(a) => eigen_diag(a),
        Command::ExportNetwork(a) => export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
