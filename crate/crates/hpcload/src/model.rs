//! Shared data types for the collection pipeline and the rendered report.
//!
//! Everything here is an immutable value object; construction happens in the
//! collectors, consumption in the aggregator and renderer.

use serde::{Deserialize, Serialize};

/// State of a scheduler job, as reported by the job queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobState {
    Running,
    /// Any non-running state, carried verbatim.
    Other(String),
}

impl JobState {
    pub fn from_code(code: &str) -> Self {
        if code == "R" {
            JobState::Running
        } else {
            JobState::Other(code.to_string())
        }
    }

    pub fn code(&self) -> &str {
        match self {
            JobState::Running => "R",
            JobState::Other(raw) => raw,
        }
    }

    pub fn is_running(&self) -> bool {
        matches!(self, JobState::Running)
    }
}

impl Serialize for JobState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for JobState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(JobState::from_code(&String::deserialize(deserializer)?))
    }
}

/// One running job of the target user, as listed by the job queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub user: String,
    pub partition: String,
    pub state: JobState,
    /// Compressed hostlist of the nodes the job occupies.
    pub nodelist: String,
    /// Total CPU cores allocated to the job across all of its nodes.
    pub alloc_cpus: u32,
    /// GPU devices allocated per node, 0 when none were requested.
    pub alloc_gpus: u32,
}

/// Scheduler's view of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStatus {
    pub hostname: String,
    pub cpus_total: u32,
    pub cpus_alloc: u32,
    /// 5-minute load average. 0.0 when the scheduler reported no data;
    /// `load_known` distinguishes a genuine zero from missing data.
    pub load_5min: f64,
    pub load_known: bool,
    pub mem_total_mib: u64,
    pub mem_free_mib: u64,
    pub node_state: String,
}

/// One GPU's instantaneous telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct GpuSample {
    pub node: String,
    pub index: u32,
    /// Utilization percent in [0, 100].
    pub util_pct: f64,
    pub mem_used_mib: u64,
    pub mem_total_mib: u64,
    pub power_w: f64,
}

/// Marker used when a node's GPU query could not produce data.
pub const UNREACHABLE_NO_DATA: &str = "no data";

/// Outcome of querying one node for GPU telemetry.
#[derive(Debug, Clone, PartialEq)]
pub enum GpuNodeResult {
    /// Per-device samples, ordered by device index ascending.
    Samples(Vec<GpuSample>),
    /// The node could not be queried; the reason is a short stable string.
    Unreachable(String),
}

/// GPU portion of a node's report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GpuReport {
    Stats {
        gpus_total: u32,
        gpus_used: u32,
        /// Node-level sum of per-GPU utilization divided by 100; N fully
        /// busy GPUs score N.
        gpu_load: f64,
        gpu_mem_used_mib: u64,
        gpu_mem_total_mib: u64,
        /// Total power draw in watts; machine-readable output only.
        gpu_power_w: f64,
    },
    Unreachable {
        #[serde(rename = "unreachable")]
        reason: String,
    },
}

/// Joined per-node view the renderer consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub hostname: String,
    /// True when the node belongs to the interactive-notebook partition.
    pub jupyter: bool,
    pub cpus_alloc: u32,
    pub cpus_total: u32,
    pub load_5min: f64,
    pub load_known: bool,
    /// load_5min divided by the configured core denominator (min 1).
    pub load_ratio: f64,
    pub mem_used_plus_cache_mib: u64,
    pub mem_total_mib: u64,
    /// None when GPU collection was not requested.
    pub gpu: Option<GpuReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvisoryKind {
    CpuUnderutilized,
    CpuOverloaded,
    GpuUnderutilized,
}

/// A rendered hint triggered when a utilization metric leaves its target band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    pub kind: AdvisoryKind,
    pub hostname: String,
    pub message: String,
    pub observed: f64,
    pub threshold: f64,
}

/// The per-user aggregation: jobs, per-node rows, and advisories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLoadReport {
    pub user: String,
    /// Seconds since the Unix epoch, from an injected clock.
    pub collected_at: u64,
    pub jobs: Vec<JobRecord>,
    /// Sorted by hostname ascending, no duplicates.
    pub nodes: Vec<NodeReport>,
    pub advisories: Vec<Advisory>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_state_round_trips_codes() {
        assert_eq!(JobState::from_code("R"), JobState::Running);
        assert_eq!(JobState::from_code("PD").code(), "PD");
        assert!(JobState::Running.is_running());
        assert!(!JobState::from_code("CG").is_running());
    }

    #[test]
    fn gpu_report_serializes_untagged() {
        let stats = GpuReport::Stats {
            gpus_total: 2,
            gpus_used: 2,
            gpu_load: 2.0,
            gpu_mem_used_mib: 100,
            gpu_mem_total_mib: 200,
            gpu_power_w: 499.5,
        };
        let json = serde_json::to_string(&stats).unwrap();
        assert!(json.starts_with("{\"gpus_total\":2"));

        let down = GpuReport::Unreachable {
            reason: UNREACHABLE_NO_DATA.to_string(),
        };
        assert_eq!(
            serde_json::to_string(&down).unwrap(),
            "{\"unreachable\":\"no data\"}"
        );
    }
}
