//! Joins jobs, node status, and GPU telemetry into the per-user report.
//!
//! Derived metrics: the CPU load ratio (5-minute load over the core
//! denominator), memory-plus-cache occupancy (total minus scheduler-reported
//! free), and the normalized GPU load (sum of per-device utilization over
//! 100, so N fully busy GPUs score N). Advisories fire when a metric leaves
//! its target band; the CPU band defaults to 50-150% of allocated cores.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{
    Advisory, AdvisoryKind, GpuNodeResult, GpuReport, GpuSample, JobRecord, NodeReport,
    NodeStatus, UserLoadReport,
};

/// Advisory band endpoints. The band is closed: a ratio exactly at an
/// endpoint produces no advisory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvisoryThresholds {
    /// Lower CPU ratio bound (fraction of the core denominator).
    pub cpu_low: f64,
    /// Upper CPU ratio bound.
    pub cpu_high: f64,
    /// Minimum mean per-GPU utilization fraction.
    pub gpu_low: f64,
}

impl Default for AdvisoryThresholds {
    fn default() -> Self {
        Self {
            cpu_low: 0.50,
            cpu_high: 1.50,
            gpu_low: 0.10,
        }
    }
}

/// Which core count divides the 5-minute load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioDenominator {
    /// Cores the scheduler allocated on the node (the default; equals the
    /// node total under whole-node scheduling).
    Alloc,
    /// The node's physical core total.
    Total,
}

/// Everything build_report needs besides the collected data.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOptions {
    pub thresholds: AdvisoryThresholds,
    /// A GPU counts as used when its utilization is above zero or its
    /// memory use exceeds this floor; the floor keeps driver-resident
    /// overhead from counting as usage.
    pub gpu_used_mem_floor_mib: u64,
    pub ratio_denominator: RatioDenominator,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            thresholds: AdvisoryThresholds::default(),
            gpu_used_mem_floor_mib: 64,
            ratio_denominator: RatioDenominator::Alloc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("gpu results name node {hostname} which is not in the filtered node set")]
    InconsistentInput { hostname: String },
}

/// Node-level GPU load: sum of per-device utilization percent over 100.
/// Two devices at 100% give 2.0.
pub fn normalized_gpu_load(samples: &[GpuSample]) -> f64 {
    samples.iter().map(|s| s.util_pct).sum::<f64>() / 100.0
}

/// Memory in use including page cache, in MiB. The scheduler's free-memory
/// figure already excludes cache, so total minus free counts it as used.
pub fn memory_used_plus_cache(node: &NodeStatus) -> u64 {
    node.mem_total_mib - node.mem_free_mib
}

/// 5-minute load divided by the core count, with a divisor floor of 1.
pub fn cpu_load_ratio(load_5min: f64, cpus: u32) -> f64 {
    load_5min / f64::from(cpus.max(1))
}

fn denominator_label(denominator: RatioDenominator) -> &'static str {
    match denominator {
        RatioDenominator::Alloc => "allocated cores",
        RatioDenominator::Total => "node cores",
    }
}

fn pct(fraction: f64) -> i64 {
    (fraction * 100.0).round() as i64
}

pub(crate) fn cpu_under_advisory(
    host: &str,
    observed: f64,
    threshold: f64,
    label: &str,
) -> Advisory {
    Advisory {
        kind: AdvisoryKind::CpuUnderutilized,
        hostname: host.to_string(),
        message: format!(
            "{host}: CPU load is {}% of {label}, under the {}% target floor; the node can take more work",
            pct(observed),
            pct(threshold),
        ),
        observed,
        threshold,
    }
}

pub(crate) fn cpu_over_advisory(
    host: &str,
    observed: f64,
    threshold: f64,
    label: &str,
) -> Advisory {
    Advisory {
        kind: AdvisoryKind::CpuOverloaded,
        hostname: host.to_string(),
        message: format!(
            "{host}: CPU load is {}% of {label}, over the {}% target ceiling; expect slowdown",
            pct(observed),
            pct(threshold),
        ),
        observed,
        threshold,
    }
}

pub(crate) fn gpu_under_advisory(host: &str, observed: f64, threshold: f64) -> Advisory {
    Advisory {
        kind: AdvisoryKind::GpuUnderutilized,
        hostname: host.to_string(),
        message: format!(
            "{host}: mean GPU utilization is {}%, under the {}% target floor",
            pct(observed),
            pct(threshold),
        ),
        observed,
        threshold,
    }
}

fn gpu_stats(samples: &[GpuSample], mem_floor_mib: u64) -> GpuReport {
    let gpus_used = samples
        .iter()
        .filter(|s| s.util_pct > 0.0 || s.mem_used_mib > mem_floor_mib)
        .count() as u32;
    GpuReport::Stats {
        gpus_total: samples.len() as u32,
        gpus_used,
        gpu_load: normalized_gpu_load(samples),
        gpu_mem_used_mib: samples.iter().map(|s| s.mem_used_mib).sum(),
        gpu_mem_total_mib: samples.iter().map(|s| s.mem_total_mib).sum(),
        gpu_power_w: samples.iter().map(|s| s.power_w).sum(),
    }
}

/// Builds the joined report: one row per filtered node, hostname-sorted,
/// with per-node advisories. Pass `gpu_results` only when GPU collection
/// ran; `None` leaves the GPU sub-records out entirely.
pub fn build_report(
    user: &str,
    jobs: &[JobRecord],
    filtered_nodes: &[NodeStatus],
    gpu_results: Option<&BTreeMap<String, GpuNodeResult>>,
    jupyter_nodes: &BTreeSet<String>,
    collected_at: u64,
    options: &AggregateOptions,
) -> Result<UserLoadReport, AggregateError> {
    for pair in filtered_nodes.windows(2) {
        assert!(
            pair[0].hostname < pair[1].hostname,
            "filtered nodes must be sorted and unique"
        );
    }
    if let Some(results) = gpu_results {
        for hostname in results.keys() {
            if !filtered_nodes.iter().any(|n| &n.hostname == hostname) {
                return Err(AggregateError::InconsistentInput {
                    hostname: hostname.clone(),
                });
            }
        }
    }

    let thresholds = &options.thresholds;
    let mut nodes = Vec::with_capacity(filtered_nodes.len());
    let mut advisories = Vec::new();

    for status in filtered_nodes {
        let host = status.hostname.as_str();
        let denominator_cores = match options.ratio_denominator {
            RatioDenominator::Alloc => status.cpus_alloc,
            RatioDenominator::Total => status.cpus_total,
        };
        let load_ratio = cpu_load_ratio(status.load_5min, denominator_cores);

        let gpu = gpu_results.map(|results| match results.get(host) {
            Some(GpuNodeResult::Samples(samples)) => {
                gpu_stats(samples, options.gpu_used_mem_floor_mib)
            }
            Some(GpuNodeResult::Unreachable(reason)) => GpuReport::Unreachable {
                reason: reason.clone(),
            },
            // Collection ran but skipped this node; treat it like a node
            // that produced nothing.
            None => GpuReport::Unreachable {
                reason: crate::model::UNREACHABLE_NO_DATA.to_string(),
            },
        });

        // No CPU advisory without load data; a drained node's synthetic
        // zero is not underutilization.
        if status.load_known {
            let label = denominator_label(options.ratio_denominator);
            if load_ratio < thresholds.cpu_low {
                advisories.push(cpu_under_advisory(host, load_ratio, thresholds.cpu_low, label));
            } else if load_ratio > thresholds.cpu_high {
                advisories.push(cpu_over_advisory(host, load_ratio, thresholds.cpu_high, label));
            }
        }

        if let Some(GpuReport::Stats {
            gpus_total,
            gpu_load,
            ..
        }) = &gpu
        {
            if *gpus_total >= 1 {
                let mean_util = gpu_load / f64::from(*gpus_total);
                if mean_util < thresholds.gpu_low {
                    advisories.push(gpu_under_advisory(host, mean_util, thresholds.gpu_low));
                }
            }
        }

        nodes.push(NodeReport {
            hostname: host.to_string(),
            jupyter: jupyter_nodes.contains(host),
            cpus_alloc: status.cpus_alloc,
            cpus_total: status.cpus_total,
            load_5min: status.load_5min,
            load_known: status.load_known,
            load_ratio,
            mem_used_plus_cache_mib: memory_used_plus_cache(status),
            mem_total_mib: status.mem_total_mib,
            gpu,
        });
    }

    Ok(UserLoadReport {
        user: user.to_string(),
        collected_at,
        jobs: jobs.to_vec(),
        nodes,
        advisories,
    })
}
