use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use optikron::milp::TargetMode;
use optikron::powerflow::SweepMode;
use optikron::successive::ProtectPolicy;
use optikron::{Error, ErrorKind};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "optikron",
    version,
    about = "Optimal Kron reduction of AC power networks"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a MATPOWER or JSON case into the canonical JSON case format.
    Import(ImportArgs),
    /// Solve AC load flows and write scenario files.
    Powerflow(PowerflowArgs),
    /// Run the successive reduction and write the reduced network.
    Reduce(ReduceArgs),
    /// Sweep operating conditions against a reduced network and/or run a β study.
    Validate(ValidateArgs),
    /// Merge reduction and validation outputs into one summary document.
    Report(ReportArgs),
    /// Write the seeded synthetic radial feeder and its two injection profiles.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ImportArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Replace taps and phase shifters by plain series branches.
    #[arg(long)]
    force_simplify: bool,
}

#[derive(Args, Debug)]
struct PowerflowArgs {
    #[arg(long)]
    case: PathBuf,
    /// Injection spec files; the case's own injections are used when absent.
    #[arg(long, num_args = 1..)]
    injections: Vec<PathBuf>,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 0.002)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10.0)]
    pub big_m: f64,
    /// Seconds per solve.
    #[arg(long, default_value_t = 60.0)]
    pub time_limit: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub mip_gap: f64,
    #[arg(long, default_value_t = 400)]
    pub binary_cap: usize,
    #[arg(long, default_value_t = 500_000)]
    pub node_limit: u64,
    #[arg(long, value_enum, default_value_t = Targets::Composed)]
    pub targets: Targets,
    #[arg(long, env = "OPTIKRON_BACKEND", default_value = "builtin")]
    pub backend: String,
    /// `slack`, `slack-pv`, or a comma-separated list of bus ids.
    #[arg(long, default_value = "slack", value_parser = parse_protect)]
    pub protect: ProtectPolicy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Targets {
    Composed,
    Immediate,
}

impl From<Targets> for TargetMode {
    fn from(t: Targets) -> Self {
        match t {
            Targets::Composed => TargetMode::Composed,
            Targets::Immediate => TargetMode::Immediate,
        }
    }
}

fn parse_protect(s: &str) -> Result<ProtectPolicy, String> {
    match s {
        "slack" => Ok(ProtectPolicy::SlackOnly),
        "slack-pv" => Ok(ProtectPolicy::SlackPv),
        list => list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u64>()
                    .map_err(|e| format!("bad bus id '{t}': {e}"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ProtectPolicy::Explicit),
    }
}

#[derive(Args, Debug)]
struct ReduceArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    scenarios: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Stop once this fraction of buses is eliminated.
    #[arg(long)]
    target_reduction: Option<f64>,
    /// Append one JSON line per iteration to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the first solve's program in LP format.
    #[arg(long)]
    lp_export: Option<PathBuf>,
    /// Re-solve every iteration by enumeration and require equal objectives.
    #[arg(long)]
    oracle_check: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Resolve,
    LinearCurrents,
}

impl From<Mode> for SweepMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Resolve => SweepMode::Resolve,
            Mode::LinearCurrents => SweepMode::LinearCurrents,
        }
    }
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    case: PathBuf,
    /// Low-load end of the sweep.
    #[arg(long)]
    low: PathBuf,
    /// High-load end of the sweep.
    #[arg(long)]
    high: PathBuf,
    #[arg(long, default_value_t = 21)]
    points: usize,
    #[arg(long, value_enum, default_value_t = Mode::Resolve)]
    mode: Mode,
    /// Reduced network to sweep.
    #[arg(long)]
    reduced: Option<PathBuf>,
    /// Sweep report (JSON).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Long-format CSV `lambda,super_node,error_pu`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// β values for a sensitivity study.
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    /// α values for the study; defaults to `--alpha`.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Scenario files for the study; defaults to the load flows at `--low` and `--high`.
    #[arg(long, num_args = 1..)]
    scenarios: Vec<PathBuf>,
    #[arg(long)]
    table_json: Option<PathBuf>,
    #[arg(long)]
    table_csv: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    reduced: PathBuf,
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 123)]
    seed: u64,
    #[arg(long, default_value_t = 115)]
    buses: usize,
    #[arg(long)]
    output_dir: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Parse | ErrorKind::Config | ErrorKind::Io => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Infeasible => 4,
        ErrorKind::Timeout => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let outcome = match cli.command {
        Command::Import(a) => commands::import(&a.input, &a.output, a.force_simplify),
        Command::Powerflow(a) => commands::powerflow(&a.case, &a.injections, &a.output_dir),
        Command::Reduce(a) => commands::reduce(&commands::ReduceJob {
            case: a.case,
            scenarios: a.scenarios,
            output: a.output,
            solver: a.solver,
            target_reduction: a.target_reduction,
            trace: a.trace,
            lp_export: a.lp_export,
            oracle_check: a.oracle_check,
        }),
        Command::Validate(a) => commands::validate(&commands::ValidateJob {
            case: a.case,
            low: a.low,
            high: a.high,
            points: a.points,
            mode: a.mode.into(),
            reduced: a.reduced,
            output: a.output,
            csv: a.csv,
            betas: a.betas,
            alphas: a.alphas,
            scenarios: a.scenarios,
            table_json: a.table_json,
            table_csv: a.table_csv,
            solver: a.solver,
        }),
        Command::Report(a) => commands::report(
            &a.reduced,
            a.sweep.as_deref(),
            a.table.as_deref(),
            &a.output,
        ),
        Command::Synth(a) => commands::synth(a.seed, a.buses, &a.output_dir),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let doc = serde_json::json!({
                "error": e.tag(),
                "kind": format!("{:?}", e.kind()).to_lowercase(),
                "message": e.to_string(),
            });
            eprintln!("{doc}");
            ExitCode::from(exit_code(&e))
        }
    }
}
