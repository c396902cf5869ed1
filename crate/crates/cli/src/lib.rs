//! Command-line harness for `cpwopt`: instance generation, fitting,
//! scoring, benchmark sweeps and completion.
//!
//! Every flag can also be set through an environment variable named
//! `CPWOPT_` followed by the flag name in upper case with dashes replaced
//! by underscores, e.g. `CPWOPT_MAX_ITERS`.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 I/O or parse
//! failure, 3 numerical failure.

pub mod commands;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpwopt::datagen::{Pattern, Storage};
use cpwopt::experiment::Method;
use cpwopt::{Error, Shape};

#[derive(Parser, Debug)]
#[command(name = "cpwopt", version, about = "CP factorization of tensors with missing data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate seeded problem instances.
    Gen(GenArgs),
    /// Fit a CP model to a tensor file.
    Fit(FitArgs),
    /// Score a model against a truth model or held-out entries.
    Eval(EvalArgs),
    /// Run a sweep of generated instances and summarize factor match scores.
    Bench(BenchArgs),
    /// Evaluate a fitted model at requested or missing indices.
    Complete(CompleteArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    Entries,
    Fibers,
}

impl From<PatternArg> for Pattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Entries => Pattern::Entries,
            PatternArg::Fibers => Pattern::Fibers,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StorageArg {
    Dense,
    Sparse,
}

impl From<StorageArg> for Storage {
    fn from(s: StorageArg) -> Self {
        match s {
            StorageArg::Dense => Storage::Dense,
            StorageArg::Sparse => Storage::Sparse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    CpwoptDense,
    CpwoptSparse,
    EmAls,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::CpwoptDense => Method::CpwoptDense,
            MethodArg::CpwoptSparse => Method::CpwoptSparse,
            MethodArg::EmAls => Method::EmAls,
        }
    }
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    io::parse_dims(s)
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad number {s:?}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1)"))
    }
}

/// Byte count with an optional `K`, `M` or `G` suffix (powers of 1024).
fn parse_bytes(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let (num, mult) = match t.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&t[..t.len() - 1], 1u64 << 10),
        Some('M') => (&t[..t.len() - 1], 1 << 20),
        Some('G') => (&t[..t.len() - 1], 1 << 30),
        _ => (t, 1),
    };
    num.trim()
        .parse::<u64>()
        .ok()
        .and_then(|n| n.checked_mul(mult))
        .ok_or_else(|| format!("bad byte count {s:?}"))
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    /// Tensor size, e.g. 50x40x30.
    #[arg(long, env = "CPWOPT_DIMS", value_parser = parse_shape, required_unless_present = "manifest")]
    pub dims: Option<Shape>,
    #[arg(long, env = "CPWOPT_RANK", default_value_t = 5)]
    pub rank: usize,
    /// Noise level η: the noise has norm η times the signal norm.
    #[arg(long, env = "CPWOPT_NOISE", default_value_t = 0.1)]
    pub noise: f64,
    /// Fraction of missing entries (or of missing fibers).
    #[arg(long, env = "CPWOPT_MISSING", value_parser = parse_fraction, default_value = "0.0")]
    pub missing: f64,
    #[arg(long, env = "CPWOPT_PATTERN", value_enum, default_value_t = PatternArg::Entries)]
    pub pattern: PatternArg,
    /// `sparse` never forms the full tensor.
    #[arg(long, env = "CPWOPT_STORAGE", value_enum, default_value_t = StorageArg::Dense)]
    pub storage: StorageArg,
    #[arg(long, env = "CPWOPT_INSTANCES", default_value_t = 1)]
    pub instances: usize,
    /// Instance `i` uses seed `seed + i`.
    #[arg(long, env = "CPWOPT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Regenerate the instance described by this manifest instead.
    #[arg(long, conflicts_with_all = ["dims", "instances"])]
    pub manifest: Option<PathBuf>,
    /// Output directory; instance `i` goes to `instance-<i>` below it.
    #[arg(long, env = "CPWOPT_OUT")]
    pub out: PathBuf,
}

/// Optimizer flags shared by `fit` and `bench`.
#[derive(Args, Debug, Clone)]
pub struct OptArgs {
    /// Iteration cap (CP-WOPT iterations or EM-ALS sweeps).
    #[arg(long, env = "CPWOPT_MAX_ITERS")]
    pub max_iters: Option<usize>,
    /// Tolerance on the relative change of the objective.
    #[arg(long, env = "CPWOPT_FTOL")]
    pub ftol: Option<f64>,
    /// Tolerance on the gradient two-norm divided by the variable count.
    #[arg(long, env = "CPWOPT_GTOL")]
    pub gtol: Option<f64>,
    #[arg(long, env = "CPWOPT_MAX_FEVALS")]
    pub max_fevals: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Tensor file to fit.
    pub input: PathBuf,
    #[arg(long, env = "CPWOPT_METHOD", value_enum, default_value_t = MethodArg::CpwoptSparse)]
    pub method: MethodArg,
    #[arg(long, env = "CPWOPT_RANK")]
    pub rank: usize,
    /// Start 1 uses singular vectors, later starts are random.
    #[arg(long, env = "CPWOPT_STARTS", default_value_t = 1)]
    pub starts: usize,
    #[arg(long, env = "CPWOPT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Replace every known value x by log(1 + x) before fitting.
    #[arg(long, env = "CPWOPT_LOG1P")]
    pub log1p: bool,
    /// Remove slab means of this mode (1-based) over the known entries.
    #[arg(long, env = "CPWOPT_CENTER_MODE")]
    pub center_mode: Option<usize>,
    #[command(flatten)]
    pub opt: OptArgs,
    /// Refuse to run when the estimated working memory exceeds this.
    #[arg(long, env = "CPWOPT_MEMORY_BUDGET", value_parser = parse_bytes, default_value = "4G")]
    pub memory_budget: u64,
    /// Output directory for `model.json`, `result.json`, `starts.jsonl`
    /// and `timings.json`.
    #[arg(long, env = "CPWOPT_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Model file to score.
    pub model: PathBuf,
    /// Truth model for the factor match score.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Tensor file of held-out entries for the completion score.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Tensor file of the fitted data; its known-entry count gives ρ.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Print a plain table row instead of JSON.
    #[arg(long)]
    pub table: bool,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    /// Comma-separated sizes, e.g. 50x40x30,60x50x40.
    #[arg(long, env = "CPWOPT_SIZES", value_delimiter = ',', value_parser = parse_shape, default_value = "50x40x30")]
    pub sizes: Vec<Shape>,
    #[arg(long, env = "CPWOPT_RANK", default_value_t = 5)]
    pub rank: usize,
    /// Comma-separated missing fractions.
    #[arg(long, env = "CPWOPT_MISSING", value_delimiter = ',', value_parser = parse_fraction, default_value = "0.6,0.7,0.8,0.9")]
    pub missing: Vec<f64>,
    #[arg(long, env = "CPWOPT_PATTERN", value_enum, default_value_t = PatternArg::Entries)]
    pub pattern: PatternArg,
    #[arg(long, env = "CPWOPT_NOISE", default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, env = "CPWOPT_INSTANCES", default_value_t = 30)]
    pub instances: usize,
    #[arg(long, env = "CPWOPT_STARTS", default_value_t = 5)]
    pub starts: usize,
    #[arg(long, env = "CPWOPT_METHODS", value_delimiter = ',', value_enum, default_value = "cpwopt-dense,em-als")]
    pub methods: Vec<MethodArg>,
    /// Instance `i` of every cell uses seed `seed + i`.
    #[arg(long, env = "CPWOPT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub opt: OptArgs,
    /// Output directory for `records.jsonl`, `report.json` and `report.txt`.
    #[arg(long, env = "CPWOPT_OUT")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CompleteArgs {
    /// Tensor file the model was fitted to.
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// File of 1-based index tuples; by default every missing entry.
    #[arg(long)]
    pub indices: Option<PathBuf>,
    /// Refuse to enumerate more missing entries than fit in this budget.
    #[arg(long, env = "CPWOPT_MEMORY_BUDGET", value_parser = parse_bytes, default_value = "4G")]
    pub memory_budget: u64,
    /// Output tensor file; standard output by default.
    #[arg(long, env = "CPWOPT_OUT")]
    pub out: Option<PathBuf>,
}

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Parse { .. } => 2,
        Error::AllStartsFailed(_) | Error::NonFinite(_) => 3,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> cpwopt::Result<()> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Complete(a) => commands::complete(&a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn byte_counts() {
        assert_eq!(parse_bytes("512").unwrap(), 512);
        assert_eq!(parse_bytes("2k").unwrap(), 2048);
        assert_eq!(parse_bytes("4G").unwrap(), 4 << 30);
        assert!(parse_bytes("x").is_err());
    }

    #[test]
    fn fractions() {
        assert_eq!(parse_fraction("0.9").unwrap(), 0.9);
        assert!(parse_fraction("1").is_err());
        assert!(parse_fraction("-0.1").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Io("x".into())), 2);
        assert_eq!(exit_code(&Error::Parse { line: 1, msg: "x".into() }), 2);
        assert_eq!(exit_code(&Error::AllStartsFailed(2)), 3);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 1);
    }
}
