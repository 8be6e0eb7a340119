//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 data or validation, 4 numerical.

mod commands;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use infoflow::error::{ErrorKind, InfoFlowError};

#[derive(Debug, Parser)]
#[command(name = "infoflow", version, about = "Information-flow causality analysis for multivariate time series")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Differencing stride for the Euler-forward derivative.
    #[arg(long, global = true, default_value_t = 1)]
    pub k: usize,

    /// Sampling step; overrides any time column (simulate: integration step).
    #[arg(long, global = true)]
    pub dt: Option<f64>,

    /// Emit JSON instead of text or CSV.
    #[arg(long, global = true)]
    pub json: bool,

    /// Seed for surrogates and simulation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[arg(long, global = true, default_value_t = 0.05)]
    pub alpha: f64,

    /// Multiple-testing correction: none, bonferroni, bh.
    #[arg(long, global = true, default_value = "none")]
    pub correction: String,

    /// Number of surrogates for the surrogate test (0 disables it).
    #[arg(long, global = true, default_value_t = 0)]
    pub surrogates: usize,

    /// Surrogate construction: circular_shift or permutation.
    #[arg(long, global = true, default_value = "circular_shift")]
    pub surrogate_method: String,

    /// Surrogate test statistic: studentized or flow.
    #[arg(long, global = true, default_value = "studentized")]
    pub surrogate_statistic: String,

    /// Report normalized flows.
    #[arg(long, global = true)]
    pub normalize: bool,

    /// Report flows in nats per sampling step instead of per unit time.
    #[arg(long, global = true)]
    pub per_step: bool,

    /// Refuse to generate a seed for randomized commands.
    #[arg(long, global = true)]
    pub strict_repro: bool,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV file, one column per series.
    pub input: PathBuf,

    #[arg(long, default_value = ",")]
    pub delimiter: char,

    /// The file has no header row; series are labelled c0, c1, ...
    #[arg(long)]
    pub no_header: bool,

    /// Name of the time column (default: a leading column named "t" or "time").
    #[arg(long)]
    pub time_column: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flow from one series to another.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        /// Source series, by label or 0-based index.
        #[arg(long)]
        source: String,
        /// Target series, by label or 0-based index.
        #[arg(long)]
        target: String,
    },
    /// All pairwise flows plus self-influence.
    Matrix {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Significance-filtered causal graph.
    Graph {
        #[command(flatten)]
        input: InputArgs,
        /// dot or json.
        #[arg(long, default_value = "dot")]
        format: String,
        /// Output file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Flows over a sliding window.
    Window {
        #[command(flatten)]
        input: InputArgs,
        /// Window length in samples.
        #[arg(long)]
        window: usize,
        /// Offset between windows in samples (default: the window length).
        #[arg(long)]
        step: Option<usize>,
        /// Ordered pair SOURCE,TARGET; repeatable (default: all ordered pairs).
        #[arg(long = "pair")]
        pairs: Vec<String>,
    },
    /// Simulate a benchmark or a linear system.
    Simulate {
        /// one_way_2d, chain_3, confounder_3, independent_d or henon.
        #[arg(long, conflicts_with = "system", required_unless_present = "system")]
        benchmark: Option<String>,
        /// JSON file with fields f, A, B.
        #[arg(long)]
        system: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        burn_in: Option<usize>,
        /// Planted coupling strength for benchmarks.
        #[arg(long)]
        coupling: Option<f64>,
        /// Dimension of independent_d.
        #[arg(long)]
        d: Option<usize>,
        /// Panel CSV (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Metadata JSON (default: next to the output as <stem>.meta.json).
        #[arg(long)]
        meta: Option<PathBuf>,
    },
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), InfoFlowError> {
    match cli.global.jobs {
        Some(0) => Err(InfoFlowError::InvalidArgument("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| InfoFlowError::InvalidArgument(e.to_string()))?
            .install(|| commands::execute(cli)),
        None => commands::execute(cli),
    }
}
