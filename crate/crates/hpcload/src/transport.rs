//! Command execution seam.
//!
//! Every external command the tool issues goes through [`run`] or
//! [`run_many_remote`]: locally, remotely over ssh, or resolved from an
//! on-disk fixture tree. The fixture backend never spawns a process, which
//! makes the whole pipeline testable without a cluster. Transport is
//! content-agnostic; parsing command output happens in the collectors.
//!
//! Fixture layout: the root directory holds `squeue.out`, `sinfo.out`,
//! `sinfo_partitions.out`, and `gpu/<hostname>.out`. An optional sibling
//! `<name>.exit` file holds a non-zero exit code; a missing
//! `gpu/<hostname>.out` models an unreachable node. Iteration k of a watch
//! loop reads `<name>.k.out` when present, else the base file.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use std::collections::BTreeMap;

use thiserror::Error;

/// Where a command should execute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Local,
    Remote(String),
}

impl Target {
    pub fn is_remote(&self) -> bool {
        matches!(self, Target::Remote(_))
    }
}

/// A command to execute, with its placement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandSpec {
    pub program: String,
    pub args: Vec<String>,
    pub target: Target,
}

impl CommandSpec {
    pub fn local(program: &str, args: &[&str]) -> Self {
        Self {
            program: program.to_string(),
            args: args.iter().map(|a| a.to_string()).collect(),
            target: Target::Local,
        }
    }

    pub fn remote(host: &str, program: &str, args: &[&str]) -> Self {
        Self {
            program: program.to_string(),
            args: args.iter().map(|a| a.to_string()).collect(),
            target: Target::Remote(host.to_string()),
        }
    }
}

/// Captured outcome of one command. Non-zero exit codes live here;
/// they are not transport errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandResult {
    pub exit_code: i32,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub duration_ms: u64,
}

impl CommandResult {
    /// stdout as text, lossy on invalid UTF-8.
    pub fn stdout_text(&self) -> String {
        String::from_utf8_lossy(&self.stdout).into_owned()
    }

    pub fn stderr_text(&self) -> String {
        String::from_utf8_lossy(&self.stderr).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("failed to spawn `{program}`: {reason}")]
    SpawnFailure { program: String, reason: String },
    /// Distinguished from a non-zero exit so callers can tell "node down"
    /// from "command failed".
    #[error("remote command timed out after {seconds}s")]
    Timeout { seconds: u64 },
    #[error("no fixture file at {path}")]
    FixtureMiss { path: PathBuf },
}

/// Execution backend selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Live,
    Fixture(PathBuf),
}

/// Shared counters observing transport activity; cheap to clone, safe to
/// read while a batch is in flight.
#[derive(Debug, Clone, Default)]
pub struct ExecutionProbe {
    inner: Arc<ProbeInner>,
}

#[derive(Debug, Default)]
struct ProbeInner {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    remote: AtomicUsize,
}

impl ExecutionProbe {
    pub fn new() -> Self {
        Self::default()
    }

    /// Highest number of commands observed in flight simultaneously.
    pub fn peak_in_flight(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }

    /// Total remote command executions observed.
    pub fn remote_executions(&self) -> usize {
        self.inner.remote.load(Ordering::SeqCst)
    }

    fn enter(&self, remote: bool) -> ProbeGuard<'_> {
        if remote {
            self.inner.remote.fetch_add(1, Ordering::SeqCst);
        }
        let now = self.inner.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.peak.fetch_max(now, Ordering::SeqCst);
        ProbeGuard(&self.inner)
    }
}

struct ProbeGuard<'a>(&'a ProbeInner);

impl Drop for ProbeGuard<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Immutable transport settings.
#[derive(Debug, Clone)]
pub struct TransportConfig {
    pub backend: Backend,
    /// Per-remote-command deadline in seconds.
    pub remote_timeout_s: u64,
    /// Upper bound on simultaneously in-flight remote commands.
    pub max_parallel_remote: usize,
    /// Options inserted before the hostname on every ssh invocation.
    pub ssh_extra_args: Vec<String>,
    /// Watch-loop iteration; selects `<name>.k.out` fixture variants.
    pub fixture_iteration: u64,
    /// Artificial per-lookup dwell for the fixture backend, used to make
    /// concurrency observable in tests.
    pub fixture_latency_ms: u64,
    pub probe: Option<ExecutionProbe>,
}

impl TransportConfig {
    pub fn new(backend: Backend) -> Self {
        let remote_timeout_s = 5;
        Self {
            backend,
            remote_timeout_s,
            max_parallel_remote: 16,
            ssh_extra_args: Self::default_ssh_args(remote_timeout_s),
            fixture_iteration: 1,
            fixture_latency_ms: 0,
            probe: None,
        }
    }

    /// BatchMode keeps ssh from ever prompting for a password;
    /// ConnectTimeout mirrors the configured remote deadline.
    pub fn default_ssh_args(remote_timeout_s: u64) -> Vec<String> {
        vec![
            "-o".to_string(),
            "BatchMode=yes".to_string(),
            "-o".to_string(),
            format!("ConnectTimeout={remote_timeout_s}"),
        ]
    }

    pub fn with_timeout(mut self, remote_timeout_s: u64) -> Self {
        self.remote_timeout_s = remote_timeout_s;
        self.ssh_extra_args = Self::default_ssh_args(remote_timeout_s);
        self
    }
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self::new(Backend::Live)
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Local => write!(f, "local"),
            Target::Remote(host) => write!(f, "{host}"),
        }
    }
}

/// Executes one command per the configured backend.
///
/// Live+Local spawns the program directly; Live+Remote wraps it as an ssh
/// invocation; Fixture resolves from disk without spawning anything.
pub fn run(spec: &CommandSpec, config: &TransportConfig) -> Result<CommandResult, TransportError> {
    let _guard = config
        .probe
        .as_ref()
        .map(|p| p.enter(spec.target.is_remote()));
    match &config.backend {
        Backend::Fixture(root) => run_fixture(spec, root, config),
        Backend::Live => run_live(spec, config),
    }
}

/// Executes a batch of remote commands with at most `max_parallel_remote`
/// in flight. The result map covers every input hostname; per-host failures
/// are recorded in the map and never abort sibling queries.
pub fn run_many_remote(
    specs: Vec<CommandSpec>,
    config: &TransportConfig,
) -> BTreeMap<String, Result<CommandResult, TransportError>> {
    let mut seen = BTreeSet::new();
    for spec in &specs {
        match &spec.target {
            Target::Remote(host) => assert!(seen.insert(host.clone()), "duplicate host {host}"),
            Target::Local => panic!("run_many_remote requires remote specs"),
        }
    }
    if specs.is_empty() {
        return BTreeMap::new();
    }

    let workers = config.max_parallel_remote.max(1).min(specs.len());
    let queue = Mutex::new(specs.into_iter());
    let results = Mutex::new(BTreeMap::new());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some(spec) = next else { break };
                let host = match &spec.target {
                    Target::Remote(h) => h.clone(),
                    Target::Local => unreachable!(),
                };
                let outcome = run(&spec, config);
                results.lock().expect("results lock").insert(host, outcome);
            });
        }
    });
    results.into_inner().expect("results lock")
}

/// Maps a spec onto its fixture file stem. Lookup keys on the logical
/// command kind, not the exact argument vector.
fn fixture_key(spec: &CommandSpec) -> String {
    match (spec.program.as_str(), &spec.target) {
        ("squeue", _) => "squeue".to_string(),
        ("sinfo", _) if spec.args.iter().any(|a| a == "-p") => "sinfo_partitions".to_string(),
        ("sinfo", _) => "sinfo".to_string(),
        ("nvidia-smi", Target::Remote(host)) => format!("gpu/{host}"),
        (other, _) => other.to_string(),
    }
}

fn run_fixture(
    spec: &CommandSpec,
    root: &Path,
    config: &TransportConfig,
) -> Result<CommandResult, TransportError> {
    let started = Instant::now();
    if config.fixture_latency_ms > 0 {
        thread::sleep(Duration::from_millis(config.fixture_latency_ms));
    }

    let key = fixture_key(spec);
    let iteration = config.fixture_iteration;
    let iter_out = root.join(format!("{key}.{iteration}.out"));
    let (out_path, exit_path) = if iter_out.is_file() {
        (iter_out, root.join(format!("{key}.{iteration}.exit")))
    } else {
        (
            root.join(format!("{key}.out")),
            root.join(format!("{key}.exit")),
        )
    };

    let stdout = fs::read(&out_path).map_err(|_| TransportError::FixtureMiss {
        path: out_path.clone(),
    })?;
    let exit_code = match fs::read_to_string(&exit_path) {
        Ok(text) => text.trim().parse().unwrap_or(1),
        Err(_) => 0,
    };
    Ok(CommandResult {
        exit_code,
        stdout,
        stderr: Vec::new(),
        duration_ms: started.elapsed().as_millis() as u64,
    })
}

/// Builds the argv for a remote invocation:
/// `ssh <ssh_extra_args> <hostname> <program> <args…>`.
fn remote_argv(spec: &CommandSpec, host: &str, config: &TransportConfig) -> Vec<String> {
    let mut argv = config.ssh_extra_args.clone();
    argv.push(host.to_string());
    argv.push(spec.program.clone());
    argv.extend(spec.args.iter().cloned());
    argv
}

fn run_live(spec: &CommandSpec, config: &TransportConfig) -> Result<CommandResult, TransportError> {
    match &spec.target {
        Target::Local => run_child(&spec.program, &spec.args, None),
        Target::Remote(host) => {
            let argv = remote_argv(spec, host, config);
            run_child(
                "ssh",
                &argv,
                Some(Duration::from_secs(config.remote_timeout_s)),
            )
        }
    }
}

/// Spawns a child, draining stdout/stderr concurrently so full pipes never
/// stall it, and enforces an optional deadline by killing the child.
fn run_child(
    program: &str,
    args: &[String],
    deadline: Option<Duration>,
) -> Result<CommandResult, TransportError> {
    let started = Instant::now();
    let spawn_err = |reason: String| TransportError::SpawnFailure {
        program: program.to_string(),
        reason,
    };

    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| spawn_err(e.to_string()))?;

    let mut out_pipe = child.stdout.take().expect("stdout piped");
    let mut err_pipe = child.stderr.take().expect("stderr piped");
    let out_thread = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_thread = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if let Some(limit) = deadline {
                    if started.elapsed() >= limit {
                        let _ = child.kill();
                        let _ = child.wait();
                        let _ = out_thread.join();
                        let _ = err_thread.join();
                        return Err(TransportError::Timeout {
                            seconds: limit.as_secs(),
                        });
                    }
                }
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(spawn_err(e.to_string()));
            }
        }
    };

    let stdout = out_thread.join().unwrap_or_default();
    let stderr = err_thread.join().unwrap_or_default();
    Ok(CommandResult {
        exit_code: status.code().unwrap_or(-1),
        stdout,
        stderr,
        duration_ms: started.elapsed().as_millis() as u64,
    })
}
