use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use krr_stream::harness::{
    ingest, render, run_stream, summarize, synthesize, AnyModel, Dataset, InputFormat, ModelConfig, Preset,
    ReportFormat, Space, StrategyChoice, StreamPlan,
};
use krr_stream::kernels::DEFAULT_RBF_RADIUS;
use krr_stream::{BayesPrior, KernelSpec, Predictor, Result, DEFAULT_RIDGE};

/// Streaming kernel ridge regression: fit, replay edit streams, benchmark
/// update strategies and check them against full refits.
#[derive(Parser)]
#[command(name = "krr-stream", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and print it as JSON
    Fit(FitArgs),
    /// Replay an edit stream and print the per-round report
    Stream(StreamArgs),
    /// Replay an edit stream with every strategy and print the timing summary
    Bench(StreamArgs),
    /// Replay an edit stream with every strategy and verify equivalence
    Check(StreamArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file; synthetic data is generated when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dense-csv")]
    input_format: InputFormat,
    /// Feature dimension for sparse input (default: largest index seen)
    #[arg(long)]
    dim: Option<usize>,
    /// Synthetic shape preset; overridden by --samples/--features
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Seed for synthetic data
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        match &self.input {
            Some(path) => ingest(path, self.input_format, self.dim),
            None => {
                let (n, m) = self.preset.map_or((500, 5), Preset::shape);
                synthesize(self.samples.unwrap_or(n), self.features.unwrap_or(m), self.noise, self.data_seed)
            }
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// poly<d> (e.g. poly2, poly3) or rbf
    #[arg(long, default_value = "poly2")]
    kernel: String,
    #[arg(long, default_value_t = DEFAULT_RBF_RADIUS)]
    radius: f64,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, value_enum, default_value = "empirical")]
    space: Space,
    #[arg(long, default_value_t = 0.01)]
    sigma_u2: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma_b2: f64,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        let spec = match self.kernel.as_str() {
            "rbf" => KernelSpec::rbf(self.radius)?,
            other => match other.strip_prefix("poly").and_then(|d| d.parse().ok()) {
                Some(d) => KernelSpec::polynomial(d)?,
                None => {
                    return Err(krr_stream::Error::InvalidParameter(format!(
                        "unknown kernel {other:?}; expected poly<d> or rbf"
                    )))
                }
            },
        };
        let prior = BayesPrior::isotropic(self.sigma_u2, self.sigma_b2)?;
        Ok(ModelConfig::new(spec, self.ridge).with_prior(prior))
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Write the model here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StreamArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 4)]
    adds: usize,
    #[arg(long, default_value_t = 2)]
    removes: usize,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    /// Seed for the train/test split and edit sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Ignored by bench and check, which always run every strategy
    #[arg(long, value_enum, default_value = "all")]
    strategy: StrategyChoice,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Largest accepted relative deviation from the refit oracle
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
}

impl StreamArgs {
    fn plan(&self, strategy: StrategyChoice) -> StreamPlan {
        StreamPlan {
            initial_fraction: self.train_frac,
            rounds: self.rounds,
            adds_per_round: self.adds,
            removes_per_round: self.removes,
            seed: self.seed,
            strategy,
            space: self.model.space,
        }
    }
}

const EQUIVALENCE_FAILURE: u8 = 2;

fn fit(args: &FitArgs) -> Result<ExitCode> {
    let data = args.data.load()?;
    let config = args.model.config()?;
    let model = AnyModel::fit(args.model.space, data.dim(), data.samples(), &config)?;
    let hits = data
        .samples()
        .iter()
        .map(|s| model.classify(&s.x, 0.0).map(|p| p == s.y))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&h| h)
        .count();
    eprintln!(
        "fitted {} samples ({}, {}); training accuracy {:.4}",
        data.len(),
        config.spec,
        match args.model.space {
            Space::Intrinsic => "intrinsic",
            Space::Empirical => "empirical",
            Space::Bayes => "bayes",
        },
        hits as f64 / data.len() as f64
    );
    let json = model.to_json()?;
    match &args.output {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn stream(args: &StreamArgs, strategy: StrategyChoice) -> Result<(krr_stream::harness::StreamRun, bool)> {
    let data = args.data.load()?;
    let run = run_stream(&data, &args.plan(strategy), &args.model.config()?)?;
    let ok = run.max_deviation() <= args.tolerance && run.predictions_agree();
    Ok((run, ok))
}

fn exit(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EQUIVALENCE_FAILURE)
    }
}

fn execute(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Fit(args) => fit(args),
        Command::Stream(args) => {
            let (run, ok) = stream(args, args.strategy)?;
            println!("{}", render(&run, args.format)?.trim_end());
            Ok(exit(ok))
        }
        Command::Bench(args) => {
            let (run, ok) = stream(args, StrategyChoice::All)?;
            let summary = summarize(&run.rounds);
            match args.format {
                ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&summary)?),
                ReportFormat::Csv => {
                    let s = &summary.mean_seconds;
                    let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                    println!("rounds,batch_mean_seconds,single_mean_seconds,refit_mean_seconds,fold");
                    println!("{},{},{},{},{}", summary.rounds, f(s.batch), f(s.single), f(s.refit), f(summary.fold));
                }
            }
            Ok(exit(ok))
        }
        Command::Check(args) => {
            let (run, ok) = stream(args, StrategyChoice::All)?;
            println!(
                "{}: {} rounds, max deviation {:e} (tolerance {:e}), predictions {}",
                if ok { "PASS" } else { "FAIL" },
                run.rounds.len(),
                run.max_deviation(),
                args.tolerance,
                if run.predictions_agree() { "agree" } else { "differ" }
            );
            Ok(exit(ok))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
