//! Argument parsing, configuration assembly, and pipeline orchestration.
//!
//! One snapshot run performs, in order: jupyter-partition discovery, the
//! user's job listing, the whole-cluster node snapshot with client-side
//! filtering, GPU collection (only with `-g`), and report rendering.
//! Watch mode re-runs the whole pipeline every interval; each snapshot is
//! collected fresh, never cached.
//!
//! Exit codes: 0 success (including "no running jobs"), 1 collection
//! failure, 2 usage error.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::aggregate::{
    build_report, AdvisoryThresholds, AggregateError, AggregateOptions, RatioDenominator,
};
use crate::fixture::{generate, FixtureError, JobSpec, LoadProfile, Scenario};
use crate::gpu::collect_gpu_usage;
use crate::model::UserLoadReport;
use crate::render::{format_timestamp, render, ColorMode, OutputFormat, RenderOptions};
use crate::scheduler::{
    filter_nodes_for_user, list_partition_nodes, list_user_jobs, snapshot_all_nodes,
    SchedulerError,
};
use crate::transport::{Backend, TransportConfig};

const INTERPRETATION_HELP: &str = "\
Reading the numbers:
  LOAD% compares the node's 5-minute load average with its allocated cores.
  Aim for 50-150%: lower usually means the job could use more of the node,
  higher risks slowing the node down. MEM counts page cache as used memory.
  GPULOAD sums per-device utilization over 100, so a node with two fully
  busy GPUs reads 2.00. GPU numbers are instantaneous snapshots; run the
  command a few times (or use --watch) to see how they move.";

/// Snapshot of per-user CPU, memory, and GPU usage across the nodes
/// running your cluster jobs.
#[derive(Debug, Parser)]
#[command(name = "hpcload", version, after_help = INTERPRETATION_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Username to report on (default: the invoking user)
    #[arg(long, global = true)]
    user: Option<String>,

    /// Collect and show GPU utilization columns
    #[arg(short = 'g', long = "gpu")]
    gpu: bool,

    /// Output format
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,

    /// Re-run every N seconds until interrupted
    #[arg(long, value_name = "SECONDS", value_parser = clap::value_parser!(u64).range(1..))]
    watch: Option<u64>,

    /// Execution backend: `live` or `fixture:PATH` (env HPCLOAD_FIXTURE)
    #[arg(long, value_name = "BACKEND")]
    backend: Option<String>,

    /// Remote command timeout in seconds
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    timeout: u64,

    /// Upper bound on concurrent remote queries
    #[arg(long = "max-parallel", default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    max_parallel: u64,

    /// Partition whose nodes get the [jupyter] badge
    #[arg(long = "jupyter-partition", default_value = "jupyter", value_name = "NAME")]
    jupyter_partition: String,

    /// CPU ratio floor of the advisory band
    #[arg(long = "cpu-low", default_value_t = 0.50, value_name = "RATIO")]
    cpu_low: f64,

    /// CPU ratio ceiling of the advisory band
    #[arg(long = "cpu-high", default_value_t = 1.50, value_name = "RATIO")]
    cpu_high: f64,

    /// Minimum healthy mean per-GPU utilization fraction
    #[arg(long = "gpu-low", default_value_t = 0.10, value_name = "FRACTION")]
    gpu_low: f64,

    /// GPU memory floor (MiB) above which an otherwise idle GPU counts as used
    #[arg(long = "gpu-used-mem-floor", default_value_t = 64, value_name = "MIB")]
    gpu_used_mem_floor: u64,

    /// Core count dividing the 5-minute load
    #[arg(long = "ratio-denominator", value_enum, default_value_t = RatioArg::Alloc)]
    ratio_denominator: RatioArg,

    /// When to colorize advisories and out-of-band cells
    #[arg(long, value_enum, default_value_t = ColorArg::Auto)]
    color: ColorArg,

    /// Freeze the report clock (seconds since the epoch)
    #[arg(long, value_name = "EPOCH_SECONDS")]
    now: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a deterministic synthetic fixture cluster
    GenFixture(GenFixtureArgs),
}

#[derive(Debug, Args)]
struct GenFixtureArgs {
    /// Seed for the generated telemetry
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Cluster size in nodes
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    nodes: u32,

    /// GPU devices per node (0 for a CPU-only cluster)
    #[arg(long = "gpus-per-node", default_value_t = 2)]
    gpus_per_node: u32,

    /// One job as `cpus=N[,gpus=N][,span=N]`; repeatable
    #[arg(long = "job", value_name = "SPEC", value_parser = parse_job_spec)]
    jobs: Vec<JobSpec>,

    /// Size of the jupyter partition (first nodes of the cluster)
    #[arg(long = "jupyter-nodes", default_value_t = 0)]
    jupyter_nodes: u32,

    /// 0-based node index whose GPU file is withheld; repeatable
    #[arg(long = "unreachable", value_name = "INDEX")]
    unreachable: Vec<u32>,

    /// Cluster utilization regime
    #[arg(long = "profile", default_value = "balanced", value_parser = parse_profile)]
    profile: LoadProfile,

    /// Directory to write the fixture tree into
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn parse_job_spec(s: &str) -> Result<JobSpec, String> {
    s.parse()
}

fn parse_profile(s: &str) -> Result<LoadProfile, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RatioArg {
    Alloc,
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ColorArg {
    Auto,
    Always,
    Never,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub user: String,
    pub gpu_mode: bool,
    pub format: OutputFormat,
    pub watch_s: Option<u64>,
    pub backend: Backend,
    pub remote_timeout_s: u64,
    pub max_parallel: usize,
    pub jupyter_partition: String,
    pub thresholds: AdvisoryThresholds,
    pub gpu_used_mem_floor_mib: u64,
    pub ratio_denominator: RatioDenominator,
    pub color: ColorMode,
    /// Frozen clock; None reads the system time per snapshot.
    pub now: Option<u64>,
}

impl CliConfig {
    /// A config with all defaults, suitable for tests and library callers.
    pub fn new(user: &str, backend: Backend) -> Self {
        Self {
            user: user.to_string(),
            gpu_mode: false,
            format: OutputFormat::Table,
            watch_s: None,
            backend,
            remote_timeout_s: 5,
            max_parallel: 16,
            jupyter_partition: "jupyter".to_string(),
            thresholds: AdvisoryThresholds::default(),
            gpu_used_mem_floor_mib: 64,
            ratio_denominator: RatioDenominator::Alloc,
            color: ColorMode::Never,
            now: None,
        }
    }

    pub fn transport(&self) -> TransportConfig {
        let mut config = TransportConfig::new(self.backend.clone()).with_timeout(self.remote_timeout_s);
        config.max_parallel_remote = self.max_parallel;
        config
    }

    pub fn aggregate_options(&self) -> AggregateOptions {
        AggregateOptions {
            thresholds: self.thresholds,
            gpu_used_mem_floor_mib: self.gpu_used_mem_floor_mib,
            ratio_denominator: self.ratio_denominator,
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            gpu_mode: self.gpu_mode,
            format: self.format,
            color: self.color,
        }
    }

    fn collected_at(&self) -> u64 {
        self.now.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

/// Runs the collection pipeline once and returns the joined report plus
/// any node-resolution warnings.
pub fn collect_report(
    cfg: &CliConfig,
    tcfg: &TransportConfig,
) -> Result<(UserLoadReport, Vec<String>), PipelineError> {
    // 1. Nodes of the interactive-notebook partition, for badging.
    let jupyter: BTreeSet<String> = list_partition_nodes(&cfg.jupyter_partition, tcfg)?;
    // 2. The user's running jobs.
    let jobs = list_user_jobs(&cfg.user, tcfg)?;
    // 3. Whole-cluster status, filtered client-side to the user's nodes.
    let all_nodes = snapshot_all_nodes(tcfg)?;
    let filtered = filter_nodes_for_user(&all_nodes, &jobs);
    // 4. GPU telemetry for those nodes, only when requested.
    let gpu_results = if cfg.gpu_mode {
        let hosts: Vec<String> = filtered.nodes.iter().map(|n| n.hostname.clone()).collect();
        Some(collect_gpu_usage(&hosts, tcfg))
    } else {
        None
    };
    // 5. The joined report.
    let report = build_report(
        &cfg.user,
        &jobs,
        &filtered.nodes,
        gpu_results.as_ref(),
        &jupyter,
        cfg.collected_at(),
        &cfg.aggregate_options(),
    )?;
    Ok((report, filtered.warnings))
}

fn run_iteration(cfg: &CliConfig, tcfg: &TransportConfig) -> i32 {
    match collect_report(cfg, tcfg) {
        Ok((report, warnings)) => {
            for warning in warnings {
                eprintln!("hpcload: warning: unresolved node {warning}");
            }
            print!("{}", render(&report, &cfg.render_options()));
            0
        }
        Err(err) => {
            eprintln!("hpcload: {err}");
            1
        }
    }
}

/// One snapshot run. Per-node GPU failures never affect the exit code;
/// scheduler failures do.
pub fn run_once(cfg: &CliConfig) -> i32 {
    run_iteration(cfg, &cfg.transport())
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn note_interrupt(_signal: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_interrupt_handler() {
    let handler = note_interrupt as extern "C" fn(libc::c_int);
    unsafe {
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
    }
}

fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::SeqCst)
}

/// Repeats the snapshot every `watch_s` seconds until interrupted.
/// A failing iteration prints its diagnostic and the loop continues;
/// an interrupt exits 0.
pub fn run_watch(cfg: &CliConfig) -> i32 {
    let interval = cfg.watch_s.expect("watch interval set");
    install_interrupt_handler();

    let mut iteration: u64 = 1;
    loop {
        println!("=== {} ===", format_timestamp(cfg.collected_at()));
        let mut tcfg = cfg.transport();
        tcfg.fixture_iteration = iteration;
        let _ = run_iteration(cfg, &tcfg);
        iteration += 1;

        for _ in 0..interval * 10 {
            if interrupted() {
                return 0;
            }
            thread::sleep(Duration::from_millis(100));
        }
        if interrupted() {
            return 0;
        }
    }
}

fn parse_backend(raw: &str) -> Result<Backend, String> {
    if raw == "live" {
        return Ok(Backend::Live);
    }
    if let Some(path) = raw.strip_prefix("fixture:") {
        if path.is_empty() {
            return Err("fixture backend needs a path: fixture:PATH".to_string());
        }
        return Ok(Backend::Fixture(PathBuf::from(path)));
    }
    Err(format!("unknown backend {raw:?}; use live or fixture:PATH"))
}

fn env_nonempty(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn build_config(cli: &Cli) -> Result<CliConfig, String> {
    let user = match &cli.user {
        Some(user) if !user.is_empty() => user.clone(),
        Some(_) => return Err("--user must be non-empty".to_string()),
        None => env_nonempty("USER")
            .or_else(|| env_nonempty("LOGNAME"))
            .ok_or("cannot determine the invoking user; pass --user")?,
    };

    let backend = match &cli.backend {
        Some(raw) => parse_backend(raw)?,
        None => match env_nonempty("HPCLOAD_FIXTURE") {
            Some(path) => Backend::Fixture(PathBuf::from(path)),
            None => Backend::Live,
        },
    };

    if !(cli.cpu_low > 0.0 && cli.cpu_low < cli.cpu_high) {
        return Err("--cpu-low must be positive and below --cpu-high".to_string());
    }
    if cli.gpu_low < 0.0 {
        return Err("--gpu-low must not be negative".to_string());
    }

    Ok(CliConfig {
        user,
        gpu_mode: cli.gpu,
        format: match cli.format {
            FormatArg::Table => OutputFormat::Table,
            FormatArg::Json => OutputFormat::Json,
        },
        watch_s: cli.watch,
        backend,
        remote_timeout_s: cli.timeout,
        max_parallel: cli.max_parallel as usize,
        jupyter_partition: cli.jupyter_partition.clone(),
        thresholds: AdvisoryThresholds {
            cpu_low: cli.cpu_low,
            cpu_high: cli.cpu_high,
            gpu_low: cli.gpu_low,
        },
        gpu_used_mem_floor_mib: cli.gpu_used_mem_floor,
        ratio_denominator: match cli.ratio_denominator {
            RatioArg::Alloc => RatioDenominator::Alloc,
            RatioArg::Total => RatioDenominator::Total,
        },
        color: match cli.color {
            ColorArg::Auto => ColorMode::Auto,
            ColorArg::Always => ColorMode::Always,
            ColorArg::Never => ColorMode::Never,
        },
        now: cli.now,
    })
}

fn run_gen_fixture(args: &GenFixtureArgs, user: Option<&str>) -> i32 {
    let jobs = if args.jobs.is_empty() {
        vec![JobSpec {
            cpus: 8,
            gpus: if args.gpus_per_node > 0 { 1 } else { 0 },
            node_span: 2.min(args.nodes),
        }]
    } else {
        args.jobs.clone()
    };
    let scenario = Scenario {
        seed: args.seed,
        node_count: args.nodes,
        gpus_per_node: args.gpus_per_node,
        user: user.map(str::to_string).unwrap_or_else(|| "testuser".to_string()),
        user_jobs: jobs,
        jupyter_nodes: args.jupyter_nodes,
        unreachable_nodes: args.unreachable.iter().copied().collect(),
        load_profile: args.profile,
    };

    match generate(&scenario, &args.out) {
        Ok(manifest) => {
            for path in manifest {
                println!("{}", path.display());
            }
            0
        }
        Err(FixtureError::InvalidScenario(msg)) => {
            eprintln!("hpcload: invalid scenario: {msg}");
            2
        }
        Err(FixtureError::Io(err)) => {
            eprintln!("hpcload: {err}");
            1
        }
    }
}

/// Parses argv and runs the requested mode, returning the process exit
/// code. Usage errors exit 2 inside clap before this returns.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    dispatch(cli)
}

fn dispatch(cli: Cli) -> i32 {
    match &cli.command {
        Some(Command::GenFixture(args)) => run_gen_fixture(args, cli.user.as_deref()),
        None => {
            let cfg = match build_config(&cli) {
                Ok(cfg) => cfg,
                Err(msg) => {
                    eprintln!("hpcload: {msg}");
                    return 2;
                }
            };
            if cfg.watch_s.is_some() {
                run_watch(&cfg)
            } else {
                run_once(&cfg)
            }
        }
    }
}
