//! Command-line front end.
//!
//! Exit codes: 0 success, 2 bad config or input, 3 numerical failure,
//! 4 a comparison outside its thresholds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytics::{self, AnalyticsError};
use crate::config::{ConfigError, RunConfig};
use crate::dynamics::{self, DynamicsError};
use crate::estimation::{self, EstimationError};
use crate::network::{self, GraphKind, GraphSpec, NetworkError};
use crate::tables::{self, TableError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_COMPARISON: i32 = 4;

/// Environment variable capping simulation worker threads (0 = all cores).
pub const THREADS_ENV: &str = "BELIEFNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "beliefnet", version, about = "Bayesian social learning on influence networks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a network and write it as a weight list.
    Generate(GenerateArgs),
    /// Monte Carlo ensemble of belief trajectories.
    Simulate(SimulateArgs),
    /// Closed-form signal moments.
    Analyze(AnalyzeArgs),
    /// Check simulated moments against analytic ones.
    Compare(CompareArgs),
    /// Estimate acquisition-cost or accuracy-weight parameters.
    Fit(FitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Ba,
    Complete,
    Ring,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    n: usize,
    /// Edges per new node (ba).
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Neighbours on each side (ring).
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    record_trajectories: bool,
    /// Comma-separated steps at which to histogram signals.
    #[arg(long, value_delimiter = ',')]
    histogram: Option<Vec<usize>>,
    /// Worker threads; overrides the environment.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    simulated: PathBuf,
    analytic: PathBuf,
    /// Minimum acceptable band coverage.
    #[arg(long, default_value_t = 0.985)]
    floor: f64,
    /// Maximum acceptable |z| of a simulated mean.
    #[arg(long, default_value_t = 5.0)]
    max_z: f64,
    /// Write the per-cell report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum FitMode {
    Cost,
    Reward,
}

#[derive(Debug, Args)]
struct FitArgs {
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: FitMode,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Weight cost observations by report count.
    #[arg(long)]
    weighted: bool,
    /// Held-out reward observations to score predictions on.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn input(msg: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_INPUT, msg: msg.to_string() }
    }

    fn numeric(msg: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_NUMERIC, msg: msg.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::input(e)
    }
}

impl From<NetworkError> for Failure {
    fn from(e: NetworkError) -> Self {
        Failure::input(e)
    }
}

impl From<TableError> for Failure {
    fn from(e: TableError) -> Self {
        Failure::input(e)
    }
}

impl From<DynamicsError> for Failure {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::NegativeVariance { .. } => Failure::numeric(e),
            _ => Failure::input(e),
        }
    }
}

impl From<AnalyticsError> for Failure {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Dynamics(d) => d.into(),
            AnalyticsError::DimensionMismatch { .. } | AnalyticsError::ProvenanceMismatch(_) => Failure::input(e),
            _ => Failure::numeric(e),
        }
    }
}

impl From<EstimationError> for Failure {
    fn from(e: EstimationError) -> Self {
        match e {
            EstimationError::DuplicateAbscissa | EstimationError::DegenerateFit { .. } => Failure::numeric(e),
            _ => Failure::input(e),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::input(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Compare(a) => compare(a),
        Command::Fit(a) => fit(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let kind = match args.kind {
        Kind::Ba => GraphKind::BarabasiAlbert { m: args.m },
        Kind::Complete => GraphKind::Complete,
        Kind::Ring => GraphKind::Ring { k: args.k },
    };
    let net = network::generate(&GraphSpec { kind, n: args.n, seed: args.seed })?;
    network::save_network(&net, &args.out)?;
    println!("agents={} mean_out_degree={}", net.n(), net.mean_out_degree());
    if !net.is_weakly_connected() {
        log::warn!("network is not weakly connected");
    }
    Ok(())
}

fn worker_count(flag: Option<usize>) -> Result<usize, Failure> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::input(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(d) = args.out_dir {
        cfg.output_dir = d;
    }
    if args.record_trajectories {
        cfg.record_trajectories = true;
    }
    if let Some(h) = args.histogram {
        cfg.histogram_steps = h;
    }
    let net = cfg.build_network()?;
    let init = cfg.initial_beliefs(net.n())?;
    let sim = dynamics::SimConfig { workers: worker_count(args.threads)?, ..cfg.sim_config() };
    let ens = dynamics::simulate_ensemble(&net, &init, &sim)?;

    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let path = dir.join("moments.csv");
    tables::write_moments(&ens, create(&path)?)?;
    if cfg.record_trajectories {
        tables::write_trajectories(&ens, create(&dir.join("trajectories.csv"))?)?;
    }
    if !cfg.histogram_steps.is_empty() {
        tables::write_histograms(&ens, create(&dir.join("histogram.csv"))?)?;
    }
    let meta_path = dir.join("metadata.txt");
    let mut meta = create(&meta_path)?;
    // nothing machine- or thread-dependent goes here, so reruns are byte-identical
    let text = format!(
        "agents={}\nmean_out_degree={}\ntheta={}\nhorizon={}\ntime_points={}\nreplicates={}\nseed={}\nversion={}\n",
        net.n(),
        net.mean_out_degree(),
        tables::real(cfg.theta),
        cfg.horizon,
        ens.steps(),
        cfg.replicates,
        cfg.seed,
        env!("CARGO_PKG_VERSION"),
    );
    meta.write_all(text.as_bytes()).and_then(|_| meta.flush()).map_err(io_err(&meta_path))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(d) = args.out_dir {
        cfg.output_dir = d;
    }
    let net = cfg.build_network()?;
    let init = cfg.initial_beliefs(net.n())?;
    // match the simulator's early stop so the two tables line up
    let steps = dynamics::variance_schedule(&net, &init.variances, cfg.horizon, cfg.convergence_tol)?.steps();
    let traj = analytics::analytic_moments(&net, &init, steps)?;
    prepare_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("analytic.csv");
    tables::write_analytic(&traj, create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let empirical = tables::read_moments(open(&args.simulated)?)?;
    let analytic = tables::read_analytic(open(&args.analytic)?)?;
    let report = analytics::compare_tables(&empirical, &analytic)?;
    if let Some(path) = &args.report {
        let mut w = create(path)?;
        w.write_all(report.to_text().as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))?;
    }
    let (cov, z) = (report.min_coverage(), report.max_abs_z());
    println!(
        "cells={} min_coverage={cov:.6} max_abs_z={z:.4} max_rel_err_var={:.6}",
        report.records.len(),
        report.max_rel_err()
    );
    if cov < args.floor || z > args.max_z {
        return Err(Failure {
            code: EXIT_COMPARISON,
            msg: format!("outside thresholds (coverage floor {}, max |z| {})", args.floor, args.max_z),
        });
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), Failure> {
    match args.mode {
        FitMode::Cost => {
            if args.test.is_some() {
                return Err(Failure::input("--test applies only to reward mode"));
            }
            let obs = tables::read_cost_observations(open(&args.data)?)?;
            let fit = estimation::fit_cost_power_law(&obs, args.weighted)?;
            print!("{}", fit.to_text());
        }
        FitMode::Reward => {
            let (Some(a), Some(b)) = (args.a, args.b) else {
                return Err(Failure::input("reward mode needs --a and --b"));
            };
            let train = tables::read_reward_observations(open(&args.data)?)?;
            let estimates = estimation::estimate_rewards(&train, a, b)?;
            for e in &estimates {
                println!("reward={} r={:.16e} predicted_variance={:.16e}", e.reward, e.r, e.predicted_variance);
            }
            if let Some(test) = &args.test {
                let held_out = tables::read_reward_observations(open(test)?)?;
                let err = estimation::evaluate_rewards(&estimates, &held_out)?;
                println!("mean_rel_err={err:.16e}");
            }
        }
    }
    Ok(())
}
