use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mlsim::client::{ClientConfig, Paradigm, UpdaterPolicy};
use mlsim::delivery::{DsKind, LatencyModel, Links};
use mlsim::harness::{
    analyze, compare, run_scenario, write_run, AnalyzeOptions, HarnessError, Scenario, Suite, Termination,
};
use mlsim::metrics::{Bucketing, CostClock};

#[derive(Parser)]
#[command(name = "mlsim", version, about = "Simulate and analyze CGKA groups over pub/sub delivery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its log and manifest.
    Run(RunArgs),
    /// Turn run directories into per-metric CSV and plot-data files.
    Analyze {
        /// Run directories, or directories containing run directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Buckets::Exact)]
        buckets: Buckets,
    },
    /// Align one or more metrics from several run sets into labelled files.
    Compare {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metric to compare; repeatable. Defaults to every shared metric.
        #[arg(long = "metric")]
        metrics: Vec<String>,
        #[arg(long, value_enum, default_value_t = Buckets::Exact)]
        buckets: Buckets,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    ds: Option<Ds>,
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    #[arg(long, value_enum)]
    paradigm: Option<ParadigmArg>,
    #[arg(long)]
    proposals_per_commit: Option<usize>,
    /// Stop once any group reaches this many members.
    #[arg(long, conflicts_with = "duration_ms")]
    target_size: Option<u32>,
    /// Stop after this much virtual time.
    #[arg(long)]
    duration_ms: Option<u64>,
    /// Number of runs; run i uses seed + i and writes to <out>/run_i.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[arg(long, value_enum, default_value_t = Clock::Cpu)]
    cost_clock: Clock,
    #[arg(long, value_enum, default_value_t = SuiteArg::Real)]
    suite: SuiteArg,
    /// Link latency: constant:MS, uniform:MIN:MAX or normal:MEAN:STD.
    #[arg(long)]
    latency: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ds {
    Mqtt,
    Gossipsub,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    First,
    Last,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParadigmArg {
    Commit,
    Propose,
}

#[derive(Clone, Copy, ValueEnum)]
enum Clock {
    Cpu,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Real,
    Toy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Buckets {
    Exact,
    Log2,
}

impl From<Buckets> for AnalyzeOptions {
    fn from(b: Buckets) -> Self {
        AnalyzeOptions {
            bucketing: match b {
                Buckets::Exact => Bucketing::Exact,
                Buckets::Log2 => Bucketing::Log2,
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

fn scenario(args: &RunArgs) -> Result<Scenario, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
                path: path.clone(),
                source,
            })?;
            ClientConfig::parse(&text).map_err(HarnessError::from)?
        }
        None => ClientConfig::default(),
    };
    if let Some(n) = args.replicas {
        config.replicas = n;
    }
    if let Some(ds) = args.ds {
        config.ds = match ds {
            Ds::Mqtt => DsKind::Mqtt,
            Ds::Gossipsub => DsKind::Gossipsub,
        };
    }
    if let Some(p) = args.policy {
        config.auth_policy = match p {
            Policy::First => UpdaterPolicy::First,
            Policy::Last => UpdaterPolicy::Last,
            Policy::Random => UpdaterPolicy::Random,
        };
    }
    if let Some(p) = args.paradigm {
        config.paradigm = match p {
            ParadigmArg::Commit => Paradigm::Commit,
            ParadigmArg::Propose => Paradigm::Propose,
        };
    }
    if let Some(k) = args.proposals_per_commit {
        config.proposals_per_commit = k;
    }
    if config.replicas == 0 {
        return Err(CliError::Usage("--replicas must be at least 1".into()));
    }
    let termination = match (args.target_size, args.duration_ms) {
        (Some(n), None) => Termination::TargetSize(n),
        (None, Some(ms)) => Termination::Duration { ms },
        (None, None) => Termination::TargetSize(config.replicas as u32),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    let mut s = Scenario::new(config, args.seed, termination);
    s.cost_clock = match args.cost_clock {
        Clock::Cpu => CostClock::CpuTime,
        Clock::Model => CostClock::Model,
    };
    s.suite = match args.suite {
        SuiteArg::Real => Suite::Real,
        SuiteArg::Toy => Suite::Toy,
    };
    if let Some(spec) = &args.latency {
        let model = LatencyModel::parse(spec).ok_or_else(|| CliError::Usage(format!("bad --latency {spec:?}")))?;
        s.links = Links::with_default(model);
    }
    Ok(s)
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let base = scenario(&args)?;
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    for i in 0..args.runs {
        let mut s = base.clone();
        s.seed = base.seed.wrapping_add(i);
        let dir = if args.runs == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("run_{i}"))
        };
        let outcome = run_scenario(&s)?;
        write_run(&outcome, &dir)?;
        println!(
            "{}: seed {}, {} records, max group size {}, {}",
            dir.display(),
            s.seed,
            outcome.records.len(),
            outcome.max_group_size,
            if outcome.reached { "stop condition met" } else { "target size not reached" }
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Analyze { inputs, out, buckets } => analyze(&inputs, &out, buckets.into())
            .map(|files| println!("wrote {} files to {}", files.len(), out.display()))
            .map_err(CliError::from),
        Command::Compare {
            inputs,
            out,
            metrics,
            buckets,
        } => compare(&inputs, &metrics, &out, buckets.into())
            .map(|files| println!("wrote {} files to {}", files.len(), out.display()))
            .map_err(CliError::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
