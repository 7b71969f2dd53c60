//! Scheduler command invocation and output parsing.
//!
//! Three queries: the user's running jobs (`squeue`), full-cluster node
//! status (`sinfo -N`), and the nodes of one partition (`sinfo -p`). Node
//! status is deliberately fetched for the whole cluster and filtered
//! client-side; the scheduler offers no finer-grained server-side filter.
//!
//! Parsing is all-or-nothing per command: a half-parsed cluster picture is
//! worse than an error for a monitoring tool, so any malformed line fails
//! the whole command with positioned errors.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use crate::hostlist::{expand_hostlist, MalformedHostlist};
use crate::model::{JobRecord, JobState, NodeStatus};
use crate::transport::{run, CommandSpec, TransportConfig};

/// One unparseable line, with its 1-based position in the command output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawParseError {
    pub line_no: usize,
    pub line: String,
    pub reason: String,
}

impl fmt::Display for RawParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {} ({:?})", self.line_no, self.reason, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("`{command}` unavailable: {detail}")]
    Unavailable { command: String, detail: String },
    #[error("failed to parse `{command}` output: {}", format_parse_errors(.errors))]
    Parse {
        command: String,
        errors: Vec<RawParseError>,
    },
    #[error(transparent)]
    Hostlist(#[from] MalformedHostlist),
}

fn format_parse_errors(errors: &[RawParseError]) -> String {
    errors
        .iter()
        .map(RawParseError::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn squeue_spec(user: &str) -> CommandSpec {
    CommandSpec::local(
        "squeue",
        &["-h", "-u", user, "-t", "R", "-o", "%i|%P|%t|%N|%C|%b"],
    )
}

fn sinfo_nodes_spec() -> CommandSpec {
    CommandSpec::local(
        "sinfo",
        &[
            "-h",
            "-N",
            "-O",
            "NodeHost:40,CPUsState:20,CPULoad:12,Memory:12,FreeMem:12,StateCompact:10",
        ],
    )
}

fn sinfo_partition_spec(partition: &str) -> CommandSpec {
    CommandSpec::local("sinfo", &["-h", "-p", partition, "-O", "NodeList:200"])
}

/// Runs a scheduler command, folding transport failures and non-zero exits
/// into [`SchedulerError::Unavailable`].
fn run_scheduler_command(
    spec: &CommandSpec,
    config: &TransportConfig,
) -> Result<String, SchedulerError> {
    let command = spec.program.clone();
    let result = run(spec, config).map_err(|e| SchedulerError::Unavailable {
        command: command.clone(),
        detail: e.to_string(),
    })?;
    if result.exit_code != 0 {
        let stderr = result.stderr_text().trim().to_string();
        let detail = if stderr.is_empty() {
            format!("exit code {}", result.exit_code)
        } else {
            format!("exit code {}: {}", result.exit_code, stderr)
        };
        return Err(SchedulerError::Unavailable { command, detail });
    }
    Ok(result.stdout_text())
}

/// Lists the user's running jobs.
///
/// Empty output is a valid "no active jobs" outcome, not an error.
pub fn list_user_jobs(
    user: &str,
    config: &TransportConfig,
) -> Result<Vec<JobRecord>, SchedulerError> {
    assert!(!user.is_empty(), "user must be non-empty");
    let stdout = run_scheduler_command(&squeue_spec(user), config)?;
    parse_squeue_output(user, &stdout).map_err(|errors| SchedulerError::Parse {
        command: "squeue".to_string(),
        errors,
    })
}

/// Parses pipe-delimited `%i|%P|%t|%N|%C|%b` job lines.
pub fn parse_squeue_output(user: &str, stdout: &str) -> Result<Vec<JobRecord>, Vec<RawParseError>> {
    let mut jobs = Vec::new();
    let mut errors = Vec::new();

    for (idx, raw_line) in stdout.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut fail = |reason: String| {
            errors.push(RawParseError {
                line_no,
                line: raw_line.to_string(),
                reason,
            });
        };

        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 6 {
            fail(format!("expected 6 pipe-delimited fields, got {}", fields.len()));
            continue;
        }
        let (job_id, partition, state, nodelist, cpus, tres) = (
            fields[0], fields[1], fields[2], fields[3], fields[4], fields[5],
        );

        if job_id.is_empty() {
            fail("empty job id".to_string());
            continue;
        }
        let state = JobState::from_code(state);
        let alloc_cpus = match cpus.parse::<u32>() {
            Ok(n) => n,
            Err(_) => {
                fail(format!("invalid cpu count {cpus:?}"));
                continue;
            }
        };
        if state.is_running() {
            if nodelist.is_empty() {
                fail("running job without a nodelist".to_string());
                continue;
            }
            if let Err(e) = expand_hostlist(nodelist) {
                fail(format!("invalid nodelist: {e}"));
                continue;
            }
            if alloc_cpus == 0 {
                fail("running job with zero allocated cpus".to_string());
                continue;
            }
        }

        jobs.push(JobRecord {
            job_id: job_id.to_string(),
            user: user.to_string(),
            partition: partition.to_string(),
            state,
            nodelist: nodelist.to_string(),
            alloc_cpus,
            alloc_gpus: parse_tres_gpus(tres),
        });
    }

    if errors.is_empty() {
        Ok(jobs)
    } else {
        Err(errors)
    }
}

/// Extracts the device count from a `gpu:<n>` token in a tres-per-node
/// field such as `gpu:2`, `gres/gpu:2`, or `gpu:a100:4`. Anything else,
/// including `N/A`, means no GPUs were requested.
fn parse_tres_gpus(tres: &str) -> u32 {
    for item in tres.split(',') {
        let item = item.trim();
        let item = item.strip_prefix("gres/").unwrap_or(item);
        if let Some(rest) = item.strip_prefix("gpu:") {
            let count = rest.rsplit(':').next().unwrap_or(rest);
            if let Ok(n) = count.parse::<u32>() {
                return n;
            }
        }
    }
    0
}

/// Snapshots the scheduler's view of every node in the cluster.
///
/// Filtering down to the user's nodes happens client-side afterwards; the
/// node listing always covers the whole cluster.
pub fn snapshot_all_nodes(config: &TransportConfig) -> Result<Vec<NodeStatus>, SchedulerError> {
    let stdout = run_scheduler_command(&sinfo_nodes_spec(), config)?;
    if stdout.trim().is_empty() {
        // A cluster always has nodes; empty output signals a broken query.
        return Err(SchedulerError::Unavailable {
            command: "sinfo".to_string(),
            detail: "empty node listing".to_string(),
        });
    }
    parse_sinfo_output(&stdout).map_err(|errors| SchedulerError::Parse {
        command: "sinfo".to_string(),
        errors,
    })
}

/// Parses whitespace-trimmed `sinfo -N -O` rows:
/// hostname, A/I/O/T cpu state, 5-minute load, memory MiB, free MiB, state.
pub fn parse_sinfo_output(stdout: &str) -> Result<Vec<NodeStatus>, Vec<RawParseError>> {
    let mut nodes: Vec<NodeStatus> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut errors = Vec::new();

    for (idx, raw_line) in stdout.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        match parse_sinfo_row(line) {
            Ok(status) => {
                // A node listed in several partitions appears once per
                // partition; keep the first row.
                if seen.insert(status.hostname.clone()) {
                    nodes.push(status);
                }
            }
            Err(reason) => errors.push(RawParseError {
                line_no,
                line: raw_line.to_string(),
                reason,
            }),
        }
    }

    if errors.is_empty() {
        Ok(nodes)
    } else {
        Err(errors)
    }
}

fn parse_sinfo_row(line: &str) -> Result<NodeStatus, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 columns, got {}", fields.len()));
    }
    let (hostname, cpus_state, load, mem_total, mem_free, node_state) = (
        fields[0], fields[1], fields[2], fields[3], fields[4], fields[5],
    );

    let aiot: Vec<&str> = cpus_state.split('/').collect();
    if aiot.len() != 4 {
        return Err(format!("cpu state {cpus_state:?} is not A/I/O/T"));
    }
    let cpus_alloc: u32 = aiot[0]
        .parse()
        .map_err(|_| format!("invalid allocated cpu count {:?}", aiot[0]))?;
    let cpus_total: u32 = aiot[3]
        .parse()
        .map_err(|_| format!("invalid total cpu count {:?}", aiot[3]))?;
    if cpus_total == 0 {
        return Err("node with zero total cpus".to_string());
    }
    if cpus_alloc > cpus_total {
        return Err(format!("allocated cpus {cpus_alloc} exceed total {cpus_total}"));
    }

    // "N/A" means the scheduler has no load data (node down or draining);
    // carry 0 plus a flag rather than fabricating a number.
    let (load_5min, load_known) = if load.eq_ignore_ascii_case("N/A") {
        (0.0, false)
    } else {
        let value: f64 = load
            .parse()
            .map_err(|_| format!("invalid load {load:?}"))?;
        if !value.is_finite() || value < 0.0 {
            return Err(format!("invalid load {load:?}"));
        }
        (value, true)
    };

    let mem_total_mib: u64 = mem_total
        .parse()
        .map_err(|_| format!("invalid memory total {mem_total:?}"))?;
    let mem_free_mib: u64 = mem_free
        .parse()
        .map_err(|_| format!("invalid free memory {mem_free:?}"))?;
    if mem_free_mib > mem_total_mib {
        return Err(format!(
            "free memory {mem_free_mib} MiB exceeds total {mem_total_mib} MiB"
        ));
    }

    Ok(NodeStatus {
        hostname: hostname.to_string(),
        cpus_total,
        cpus_alloc,
        load_5min,
        load_known,
        mem_total_mib,
        mem_free_mib,
        node_state: node_state.to_string(),
    })
}

/// Result of the client-side node filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredNodes {
    /// The user's nodes, sorted by hostname, no duplicates.
    pub nodes: Vec<NodeStatus>,
    /// Hostnames named by jobs but absent from the cluster snapshot, plus
    /// any nodelist that could not be expanded.
    pub warnings: Vec<String>,
}

/// Keeps exactly the nodes hosting at least one of the user's running jobs.
///
/// Never fails: unknown hostnames and unexpandable nodelists become
/// warnings instead of aborting the report.
pub fn filter_nodes_for_user(all_nodes: &[NodeStatus], jobs: &[JobRecord]) -> FilteredNodes {
    let mut wanted: BTreeSet<String> = BTreeSet::new();
    let mut warnings = Vec::new();

    for job in jobs.iter().filter(|j| j.state.is_running()) {
        match expand_hostlist(&job.nodelist) {
            Ok(hosts) => wanted.extend(hosts),
            Err(e) => warnings.push(format!("job {}: {}", job.job_id, e)),
        }
    }

    let mut nodes = Vec::new();
    let mut taken: HashSet<&str> = HashSet::new();
    for status in all_nodes {
        if wanted.contains(&status.hostname) && taken.insert(status.hostname.as_str()) {
            nodes.push(status.clone());
        }
    }
    nodes.sort_by(|a, b| a.hostname.cmp(&b.hostname));

    for host in &wanted {
        if !taken.contains(host.as_str()) {
            warnings.push(host.clone());
        }
    }

    FilteredNodes { nodes, warnings }
}

/// Returns the set of hostnames belonging to one partition.
///
/// An unknown partition yields an empty set (the scheduler prints nothing
/// for it).
pub fn list_partition_nodes(
    partition: &str,
    config: &TransportConfig,
) -> Result<BTreeSet<String>, SchedulerError> {
    assert!(!partition.is_empty(), "partition must be non-empty");
    let stdout = run_scheduler_command(&sinfo_partition_spec(partition), config)?;
    let mut hosts = BTreeSet::new();
    for line in stdout.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        hosts.extend(expand_hostlist(line)?);
    }
    Ok(hosts)
}
