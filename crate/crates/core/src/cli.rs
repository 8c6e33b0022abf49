//! Command-line configuration and dispatch for the `subsidy-search` binary.
//!
//! Settings come from an optional JSON file (`--config`) with individual
//! flags taking precedence. Every command writes its artifacts under the
//! output directory with fixed file names, and the same configuration and
//! seed always produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::attention::MarketParams;
use crate::dist::{DistKind, TypeDistribution};
use crate::equilibrium::solve_reasonable_equilibrium;
use crate::error::Error;
use crate::platform::{default_price_bracket, platform_sweep};
use crate::search::simulate_market;
use crate::verify::{run_verification, VerifyOptions};
use crate::welfare::{comparative_statics_sweep, default_sweep_grid, welfare_report, SweepAxis};

/// Environment variable consulted when `--output-dir` is absent.
pub const OUTPUT_DIR_ENV: &str = "SUBSIDY_SEARCH_OUTPUT_DIR";
/// Version of the CSV column layouts; bumped whenever a header changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_REPLICATIONS: u64 = 100_000;
const DEFAULT_PLATFORM_POINTS: usize = 100;
const DEFAULT_COARSE_GRID: usize = 64;

#[derive(Debug, Parser)]
#[command(
    name = "subsidy-search",
    version,
    about = "Subsidized-inspection search markets: equilibrium, simulation, welfare and platform pricing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArg,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Type prior.
    #[arg(long, global = true, value_enum)]
    pub dist: Option<DistArg>,
    /// First Beta shape parameter.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Second Beta shape parameter.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Piecewise-linear CDF knots as `t:F` pairs, e.g. `0:0,0.5:0.3,1:1`.
    #[arg(long, global = true)]
    pub knots: Option<String>,
    /// Number of firms.
    #[arg(long = "n", global = true)]
    pub n: Option<usize>,
    /// Inspection cost.
    #[arg(long = "c", global = true)]
    pub c: Option<f64>,
    /// Token price.
    #[arg(long = "p", global = true)]
    pub p: Option<f64>,
    /// Match value (default 1).
    #[arg(long = "u", global = true)]
    pub u: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo replications for simulate and verify.
    #[arg(long, global = true)]
    pub replications: Option<u64>,
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Which artifact kinds to write.
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Uniform,
    Beta,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// JSON plus CSV or plot data.
    #[default]
    All,
    Json,
    /// CSV tables and plot data only.
    Csv,
}

impl OutputFormat {
    fn json(self) -> bool {
        self != Self::Csv
    }

    fn tables(self) -> bool {
        self != Self::Json
    }
}

#[derive(Debug, Subcommand)]
pub enum CommandArg {
    /// Solve the reasonable equilibrium and emit the schedule.
    Solve,
    /// Monte Carlo market simulation against the closed forms.
    Simulate,
    /// Welfare decomposition at the configured market.
    Welfare,
    /// Comparative-statics sweep along one parameter.
    Sweep(SweepArgs),
    /// Platform demand, revenue and optimal token price.
    Platform(PlatformArgs),
    /// Full invariant suite; exits 4 on any violation.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Parameter to vary: price, cost or firms.
    #[arg(long)]
    pub axis: Option<SweepAxis>,
    /// Comma-separated sweep values (default depends on the axis).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PlatformArgs {
    #[arg(long)]
    pub p_lo: Option<f64>,
    #[arg(long)]
    pub p_hi: Option<f64>,
    /// Equally spaced prices in the reported sweep.
    #[arg(long)]
    pub points: Option<usize>,
    /// Geometric grid points scanned before golden-section refinement.
    #[arg(long)]
    pub coarse_grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub policy_instances: Option<usize>,
    #[arg(long)]
    pub ic_grid: Option<usize>,
    /// Skip the comparative-statics sweeps.
    #[arg(long)]
    pub no_sweeps: bool,
}

/// Contents of a `--config` file. Every entry is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub distribution: Option<TypeDistribution>,
    pub n: Option<usize>,
    pub c: Option<f64>,
    pub p: Option<f64>,
    pub u: Option<f64>,
    pub seed: Option<u64>,
    pub replications: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub format: Option<OutputFormat>,
    pub axis: Option<SweepAxis>,
    pub grid: Option<Vec<f64>>,
    pub p_lo: Option<f64>,
    pub p_hi: Option<f64>,
    pub points: Option<usize>,
    pub coarse_grid: Option<usize>,
    pub policy_instances: Option<usize>,
    pub ic_grid: Option<usize>,
    pub sweeps: Option<bool>,
}

/// Resolved command with its options.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Task {
    Solve,
    Simulate,
    Welfare,
    Sweep {
        axis: SweepAxis,
        grid: Vec<f64>,
    },
    Platform {
        bracket: (f64, f64),
        points: usize,
        coarse_grid: usize,
    },
    Verify {
        options: VerifyOptions,
    },
}

/// Fully validated configuration for one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub params: MarketParams,
    pub distribution: TypeDistribution,
    #[serde(flatten)]
    pub task: Task,
    pub seed: u64,
    pub replications: u64,
    /// Layout version of every CSV written by this run.
    pub csv_schema_version: u32,
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub threads: Option<usize>,
    #[serde(skip)]
    pub format: OutputFormat,
}

/// Failure classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
            Self::Verification(_) => 4,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn parse_knots(text: &str) -> Result<Vec<[f64; 2]>, CliError> {
    text.split(',')
        .map(|pair| {
            let (t, f) = pair
                .split_once(':')
                .ok_or_else(|| config_err(format!("knot `{pair}` is not of the form t:F")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| config_err(format!("knot `{pair}`: {e}")))
            };
            Ok([num(t)?, num(f)?])
        })
        .collect()
}

fn distribution_from_flags(
    args: &CommonArgs,
    file: Option<TypeDistribution>,
) -> Result<TypeDistribution, CliError> {
    let Some(kind) = args.dist else {
        if args.alpha.is_some() || args.beta.is_some() || args.knots.is_some() {
            return Err(config_err("--alpha, --beta and --knots require --dist"));
        }
        return Ok(file.unwrap_or_else(TypeDistribution::uniform));
    };
    let kind = match kind {
        DistArg::Uniform => DistKind::Uniform,
        DistArg::Beta => {
            let (Some(alpha), Some(beta)) = (args.alpha, args.beta) else {
                return Err(config_err("--dist beta needs --alpha and --beta"));
            };
            DistKind::Beta { alpha, beta }
        }
        DistArg::Piecewise => {
            let text = args
                .knots
                .as_deref()
                .ok_or_else(|| config_err("--dist piecewise needs --knots"))?;
            DistKind::Piecewise {
                knots: parse_knots(text)?,
            }
        }
    };
    TypeDistribution::new(kind).map_err(config_err)
}

/// Reads the optional config file.
pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Merges parsed flags over the config file and validates the result.
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let args = &cli.common;
        let file = load_file_config(args.config.as_deref())?;
        let need = |flag: Option<f64>, stored: Option<f64>, name: &str| {
            flag.or(stored)
                .ok_or_else(|| config_err(format!("missing --{name}")))
        };
        let n = args.n.or(file.n).ok_or_else(|| config_err("missing --n"))?;
        let c = need(args.c, file.c, "c")?;
        let p = need(args.p, file.p, "p")?;
        let u = args.u.or(file.u).unwrap_or(1.0);
        let params = MarketParams::new(n, c, p, u).map_err(config_err)?;
        let distribution = distribution_from_flags(args, file.distribution.clone())?;
        let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let replications = args
            .replications
            .or(file.replications)
            .unwrap_or(DEFAULT_REPLICATIONS);
        let output_dir = args
            .output_dir
            .clone()
            .or(file.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        let threads = args.threads.or(file.threads);
        if threads == Some(0) {
            return Err(config_err("--threads must be at least 1"));
        }
        let format = args.format.or(file.format).unwrap_or_default();

        let task = match &cli.command {
            CommandArg::Solve => Task::Solve,
            CommandArg::Simulate => Task::Simulate,
            CommandArg::Welfare => Task::Welfare,
            CommandArg::Sweep(s) => {
                let axis = s.axis.or(file.axis).unwrap_or(SweepAxis::Price);
                let grid = s
                    .grid
                    .clone()
                    .or(file.grid.clone())
                    .unwrap_or_else(|| default_sweep_grid(&params, axis));
                if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
                    return Err(config_err(
                        "sweep grid must be a nonempty list of finite values",
                    ));
                }
                Task::Sweep { axis, grid }
            }
            CommandArg::Platform(a) => {
                let (lo0, hi0) = default_price_bracket(&params);
                let bracket = (
                    a.p_lo.or(file.p_lo).unwrap_or(lo0),
                    a.p_hi.or(file.p_hi).unwrap_or(hi0),
                );
                if !(bracket.0 > 0.0 && bracket.1 > bracket.0 && bracket.1.is_finite()) {
                    return Err(config_err(format!("invalid price bracket {bracket:?}")));
                }
                let points = a.points.or(file.points).unwrap_or(DEFAULT_PLATFORM_POINTS);
                let coarse_grid = a
                    .coarse_grid
                    .or(file.coarse_grid)
                    .unwrap_or(DEFAULT_COARSE_GRID);
                if points < 2 || coarse_grid < 3 {
                    return Err(config_err(
                        "--points must be at least 2 and --coarse-grid at least 3",
                    ));
                }
                Task::Platform {
                    bracket,
                    points,
                    coarse_grid,
                }
            }
            CommandArg::Verify(a) => {
                let defaults = VerifyOptions::default();
                Task::Verify {
                    options: VerifyOptions {
                        seed,
                        replications,
                        policy_instances: a
                            .policy_instances
                            .or(file.policy_instances)
                            .unwrap_or(defaults.policy_instances),
                        ic_grid: a.ic_grid.or(file.ic_grid).unwrap_or(defaults.ic_grid),
                        sweeps: !a.no_sweeps && file.sweeps.unwrap_or(defaults.sweeps),
                    },
                }
            }
        };
        let needs_draws = matches!(task, Task::Simulate | Task::Verify { .. });
        if needs_draws && replications < 1 {
            return Err(config_err("--replications must be at least 1"));
        }
        Ok(Self {
            params,
            distribution,
            task,
            seed,
            replications,
            csv_schema_version: CSV_SCHEMA_VERSION,
            output_dir,
            threads,
            format,
        })
    }
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, body)
            .map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }
}

/// Executes one configured command and returns the artifact paths written.
pub fn run(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(&config.output_dir).map_err(|e| {
        config_err(format!(
            "cannot create {}: {e}",
            config.output_dir.display()
        ))
    })?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = config.threads {
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(config_err)?;
    pool.install(|| dispatch(config))
}

fn dispatch(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Writer {
        dir: &config.output_dir,
        written: Vec::new(),
    };
    let (params, d, fmt) = (&config.params, &config.distribution, config.format);
    out.put(
        "run_config.json",
        &serde_json::to_string_pretty(config).map_err(Error::from)?,
    )?;
    match &config.task {
        Task::Solve => {
            let sol = solve_reasonable_equilibrium(params, d)?;
            if fmt.json() {
                out.put("solution.json", &sol.to_json()?)?;
            }
            if fmt.tables() {
                out.put("schedule.dat", &sol.plot_data())?;
            }
        }
        Task::Simulate => {
            let sol = solve_reasonable_equilibrium(params, d)?;
            let report = simulate_market(&sol, d, config.replications, config.seed)?;
            if fmt.json() {
                out.put("simulation.json", &report.to_json()?)?;
            }
            if fmt.tables() {
                out.put("attention.csv", &report.attention_csv()?)?;
            }
        }
        Task::Welfare => {
            let sol = solve_reasonable_equilibrium(params, d)?;
            let report = welfare_report(&sol, d)?;
            if fmt.json() {
                out.put("welfare.json", &report.to_json()?)?;
            }
            if fmt.tables() {
                out.put("welfare.csv", &report.to_csv()?)?;
            }
        }
        Task::Sweep { axis, grid } => {
            let report = comparative_statics_sweep(params, d, *axis, grid)?;
            if fmt.json() {
                out.put(&format!("sweep_{axis}.json"), &report.to_json()?)?;
            }
            if fmt.tables() {
                out.put(&format!("sweep_{axis}.csv"), &report.to_csv()?)?;
            }
        }
        Task::Platform {
            bracket,
            points,
            coarse_grid,
        } => {
            let sweep = platform_sweep(params, d, Some(*bracket), *points, *coarse_grid)?;
            if fmt.json() {
                out.put("platform.json", &sweep.to_json()?)?;
            }
            if fmt.tables() {
                out.put("platform.csv", &sweep.to_csv()?)?;
            }
        }
        Task::Verify { options } => {
            let report = run_verification(params, d, options)?;
            out.put(
                "verification.json",
                &serde_json::to_string_pretty(&report).map_err(Error::from)?,
            )?;
            for check in &report.checks {
                let tag = if check.passed { "PASS" } else { "FAIL" };
                eprintln!(
                    "{tag} {} (value {:e}, tolerance {:e})",
                    check.name, check.value, check.tolerance
                );
            }
            if !report.passed {
                let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                return Err(CliError::Verification(format!(
                    "{} check(s) failed: {}",
                    failed.len(),
                    failed.join("; ")
                )));
            }
        }
    }
    Ok(out.written)
}

/// Parses `args`, runs the command and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match RunConfig::resolve(&cli).and_then(|config| run(&config)) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("subsidy-search: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
