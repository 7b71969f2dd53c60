//! Deterministic synthetic-cluster generator.
//!
//! Writes an internally consistent fixture tree (squeue/sinfo/gpu files)
//! from a scenario description, plus `expected.json`: the ground-truth
//! report computed straight from the scenario's internal state. The
//! expected report deliberately bypasses the collectors and parsers, so a
//! parser bug cannot hide in both the pipeline and its oracle.
//!
//! The same seed always produces a byte-identical tree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aggregate::{
    cpu_over_advisory, cpu_under_advisory, gpu_under_advisory, AdvisoryThresholds,
};
use crate::model::{
    GpuReport, JobRecord, JobState, NodeReport, UserLoadReport, UNREACHABLE_NO_DATA,
};
use crate::render::render_json;

/// Core count of every generated node.
pub const NODE_CPUS_TOTAL: u32 = 48;
/// Memory of every generated node, MiB.
pub const NODE_MEM_TOTAL_MIB: u64 = 192_000;
/// Memory of every generated GPU device, MiB.
pub const GPU_MEM_TOTAL_MIB: u64 = 16_384;
/// Timestamp baked into `expected.json`; run the pipeline with
/// `--now` set to this value when comparing against the oracle.
pub const FIXTURE_COLLECTED_AT: u64 = 1_700_000_000;

/// One synthetic job: `cpus` cores and `gpus` devices per node, spread
/// over `node_span` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobSpec {
    pub cpus: u32,
    pub gpus: u32,
    pub node_span: u32,
}

impl FromStr for JobSpec {
    type Err = String;

    /// Parses `cpus=8,gpus=1,span=2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut spec = JobSpec {
            cpus: 0,
            gpus: 0,
            node_span: 1,
        };
        for item in s.split(',') {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {item:?}"))?;
            let value: u32 = value
                .trim()
                .parse()
                .map_err(|_| format!("invalid number in {item:?}"))?;
            match key.trim() {
                "cpus" => spec.cpus = value,
                "gpus" => spec.gpus = value,
                "span" => spec.node_span = value,
                other => return Err(format!("unknown job key {other:?}")),
            }
        }
        if spec.cpus == 0 {
            return Err("job needs cpus=<n> with n >= 1".to_string());
        }
        Ok(spec)
    }
}

/// Utilization regime of the generated cluster. Profiles map to CPU ratio
/// ranges that exercise every advisory branch: Idle [0, 0.3],
/// Balanced [0.6, 1.4], Overloaded [1.8, 3.0].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadProfile {
    Idle,
    Balanced,
    Overloaded,
}

impl LoadProfile {
    fn cpu_ratio_range(self) -> (f64, f64) {
        match self {
            LoadProfile::Idle => (0.0, 0.3),
            LoadProfile::Balanced => (0.6, 1.4),
            LoadProfile::Overloaded => (1.8, 3.0),
        }
    }

    fn mem_fraction_range(self) -> (f64, f64) {
        match self {
            LoadProfile::Idle => (0.02, 0.10),
            LoadProfile::Balanced => (0.20, 0.70),
            LoadProfile::Overloaded => (0.75, 0.95),
        }
    }

    fn gpu_util_range(self) -> (u32, u32) {
        match self {
            LoadProfile::Idle => (0, 8),
            LoadProfile::Balanced => (15, 100),
            LoadProfile::Overloaded => (60, 100),
        }
    }

    fn gpu_mem_range(self) -> (u64, u64) {
        match self {
            // Straddles the used-GPU memory floor on purpose.
            LoadProfile::Idle => (0, 200),
            LoadProfile::Balanced => (1_000, GPU_MEM_TOTAL_MIB),
            LoadProfile::Overloaded => (8_000, GPU_MEM_TOTAL_MIB),
        }
    }

    fn gpu_deciwatt_range(self) -> (u64, u64) {
        match self {
            LoadProfile::Idle => (50, 900),
            LoadProfile::Balanced => (500, 2_500),
            LoadProfile::Overloaded => (2_000, 3_500),
        }
    }
}

impl FromStr for LoadProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "idle" => Ok(LoadProfile::Idle),
            "balanced" => Ok(LoadProfile::Balanced),
            "overloaded" => Ok(LoadProfile::Overloaded),
            other => Err(format!("unknown load profile {other:?}")),
        }
    }
}

/// Description of the synthetic cluster to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub node_count: u32,
    pub gpus_per_node: u32,
    pub user: String,
    pub user_jobs: Vec<JobSpec>,
    /// The first `jupyter_nodes` node indices form the jupyter partition.
    pub jupyter_nodes: u32,
    /// 0-based node indices whose GPU query file is withheld.
    pub unreachable_nodes: BTreeSet<u32>,
    pub load_profile: LoadProfile,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("fixture io: {0}")]
    Io(#[from] std::io::Error),
}

fn name_width(node_count: u32) -> usize {
    node_count.saturating_sub(1).to_string().len()
}

fn node_name(width: usize, index: u32) -> String {
    format!("node{index:0width$}")
}

/// Compresses a run-ordered index sequence into hostlist notation, one
/// bracket range per consecutive run.
fn compress_indices(width: usize, indices: &[u32]) -> String {
    let mut terms: Vec<String> = Vec::new();
    let mut run_start = indices[0];
    let mut prev = indices[0];
    let flush = |lo: u32, hi: u32, terms: &mut Vec<String>| {
        if lo == hi {
            terms.push(node_name(width, lo));
        } else {
            terms.push(format!("node[{lo:0width$}-{hi:0width$}]"));
        }
    };
    for &index in &indices[1..] {
        if index == prev + 1 {
            prev = index;
        } else {
            flush(run_start, prev, &mut terms);
            run_start = index;
            prev = index;
        }
    }
    flush(run_start, prev, &mut terms);
    terms.join(",")
}

struct NodePlan {
    cpus_alloc: u32,
    /// Load quantized to hundredths, so the fixture text and the oracle
    /// value are the same number.
    centi_load: u64,
    mem_used_mib: u64,
}

struct GpuPlan {
    util_pct: u32,
    mem_used_mib: u64,
    deciwatts: u64,
}

fn validate(scenario: &Scenario) -> Result<(), FixtureError> {
    let fail = |msg: String| Err(FixtureError::InvalidScenario(msg));
    if scenario.node_count == 0 {
        return fail("node_count must be at least 1".to_string());
    }
    if scenario.user.is_empty() {
        return fail("user must be non-empty".to_string());
    }
    for (i, job) in scenario.user_jobs.iter().enumerate() {
        if job.cpus == 0 {
            return fail(format!("job {i}: cpus must be at least 1"));
        }
        if job.node_span == 0 || job.node_span > scenario.node_count {
            return fail(format!(
                "job {i}: span {} outside 1..={}",
                job.node_span, scenario.node_count
            ));
        }
        if job.gpus > scenario.gpus_per_node {
            return fail(format!(
                "job {i}: {} gpus exceed {} per node",
                job.gpus, scenario.gpus_per_node
            ));
        }
    }
    if scenario.jupyter_nodes > scenario.node_count {
        return fail("jupyter_nodes exceeds node_count".to_string());
    }
    if let Some(&bad) = scenario
        .unreachable_nodes
        .iter()
        .find(|&&i| i >= scenario.node_count)
    {
        return fail(format!("unreachable index {bad} >= node_count"));
    }
    Ok(())
}

/// Assigns each job a cyclic block of consecutive node indices.
fn assign_jobs(scenario: &Scenario) -> Vec<Vec<u32>> {
    let mut cursor: u32 = 0;
    let mut assignments = Vec::with_capacity(scenario.user_jobs.len());
    for job in &scenario.user_jobs {
        let indices: Vec<u32> = (0..job.node_span)
            .map(|k| (cursor + k) % scenario.node_count)
            .collect();
        cursor = (cursor + job.node_span) % scenario.node_count;
        assignments.push(indices);
    }
    assignments
}

/// Writes the fixture tree and its oracle into `out_dir`, returning the
/// list of written files.
pub fn generate(scenario: &Scenario, out_dir: &Path) -> Result<Vec<PathBuf>, FixtureError> {
    validate(scenario)?;
    let width = name_width(scenario.node_count);
    let assignments = assign_jobs(scenario);

    // Per-node core allocation from the job layout.
    let mut cpus_alloc: BTreeMap<u32, u32> = BTreeMap::new();
    for (job, indices) in scenario.user_jobs.iter().zip(&assignments) {
        for &index in indices {
            *cpus_alloc.entry(index).or_insert(0) += job.cpus;
        }
    }
    if let Some((&index, &cpus)) = cpus_alloc.iter().find(|(_, &c)| c > NODE_CPUS_TOTAL) {
        return Err(FixtureError::InvalidScenario(format!(
            "node {index} oversubscribed: {cpus} cpus > {NODE_CPUS_TOTAL}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    // Draw order is fixed: per-node load and memory first, then per-device
    // GPU telemetry for reachable nodes, all in index order.
    let mut node_plans: Vec<NodePlan> = Vec::with_capacity(scenario.node_count as usize);
    for index in 0..scenario.node_count {
        let alloc = cpus_alloc.get(&index).copied().unwrap_or(0);
        let centi_load = if alloc > 0 {
            let (lo, hi) = scenario.load_profile.cpu_ratio_range();
            let ratio: f64 = rng.gen_range(lo..=hi);
            (ratio * f64::from(alloc) * 100.0).round() as u64
        } else {
            rng.gen_range(0..=10)
        };
        let (frac_lo, frac_hi) = scenario.load_profile.mem_fraction_range();
        let frac: f64 = rng.gen_range(frac_lo..=frac_hi);
        let mem_used_mib = (frac * NODE_MEM_TOTAL_MIB as f64).round() as u64;
        node_plans.push(NodePlan {
            cpus_alloc: alloc,
            centi_load,
            mem_used_mib,
        });
    }

    let mut gpu_plans: BTreeMap<u32, Vec<GpuPlan>> = BTreeMap::new();
    if scenario.gpus_per_node > 0 {
        for index in 0..scenario.node_count {
            if scenario.unreachable_nodes.contains(&index) {
                continue;
            }
            let mut devices = Vec::with_capacity(scenario.gpus_per_node as usize);
            for _ in 0..scenario.gpus_per_node {
                let (u_lo, u_hi) = scenario.load_profile.gpu_util_range();
                let (m_lo, m_hi) = scenario.load_profile.gpu_mem_range();
                let (w_lo, w_hi) = scenario.load_profile.gpu_deciwatt_range();
                devices.push(GpuPlan {
                    util_pct: rng.gen_range(u_lo..=u_hi),
                    mem_used_mib: rng.gen_range(m_lo..=m_hi),
                    deciwatts: rng.gen_range(w_lo..=w_hi),
                });
            }
            gpu_plans.insert(index, devices);
        }
    }

    // Job records exactly as the report should carry them.
    let jobs: Vec<JobRecord> = scenario
        .user_jobs
        .iter()
        .zip(&assignments)
        .enumerate()
        .map(|(i, (job, indices))| JobRecord {
            job_id: format!("{}", 1001 + i),
            user: scenario.user.clone(),
            partition: if job.gpus > 0 { "gpu" } else { "normal" }.to_string(),
            state: JobState::Running,
            nodelist: compress_indices(width, indices),
            alloc_cpus: job.cpus * job.node_span,
            alloc_gpus: job.gpus,
        })
        .collect();

    fs::create_dir_all(out_dir)?;
    let mut manifest = Vec::new();
    let write_file = |path: PathBuf, contents: &str| -> Result<PathBuf, FixtureError> {
        fs::write(&path, contents)?;
        Ok(path)
    };

    let mut squeue = String::new();
    for job in &jobs {
        let tres = if job.alloc_gpus > 0 {
            format!("gpu:{}", job.alloc_gpus)
        } else {
            "N/A".to_string()
        };
        writeln!(
            squeue,
            "{}|{}|{}|{}|{}|{}",
            job.job_id,
            job.partition,
            job.state.code(),
            job.nodelist,
            job.alloc_cpus,
            tres
        )
        .expect("string write");
    }
    manifest.push(write_file(out_dir.join("squeue.out"), &squeue)?);

    let mut sinfo = String::new();
    for (index, plan) in node_plans.iter().enumerate() {
        let state = if plan.cpus_alloc == 0 {
            "idle"
        } else if plan.cpus_alloc == NODE_CPUS_TOTAL {
            "alloc"
        } else {
            "mix"
        };
        writeln!(
            sinfo,
            "{}  {}/{}/0/{}  {:.2}  {}  {}  {}",
            node_name(width, index as u32),
            plan.cpus_alloc,
            NODE_CPUS_TOTAL - plan.cpus_alloc,
            NODE_CPUS_TOTAL,
            plan.centi_load as f64 / 100.0,
            NODE_MEM_TOTAL_MIB,
            NODE_MEM_TOTAL_MIB - plan.mem_used_mib,
            state
        )
        .expect("string write");
    }
    manifest.push(write_file(out_dir.join("sinfo.out"), &sinfo)?);

    let partitions = if scenario.jupyter_nodes > 0 {
        let indices: Vec<u32> = (0..scenario.jupyter_nodes).collect();
        format!("{}\n", compress_indices(width, &indices))
    } else {
        String::new()
    };
    manifest.push(write_file(out_dir.join("sinfo_partitions.out"), &partitions)?);

    if scenario.gpus_per_node > 0 {
        fs::create_dir_all(out_dir.join("gpu"))?;
        for (index, devices) in &gpu_plans {
            let mut telemetry = String::new();
            for (ordinal, device) in devices.iter().enumerate() {
                writeln!(
                    telemetry,
                    "{}, {}, {}, {}, {:.1}",
                    ordinal,
                    device.util_pct,
                    device.mem_used_mib,
                    GPU_MEM_TOTAL_MIB,
                    device.deciwatts as f64 / 10.0
                )
                .expect("string write");
            }
            let name = node_name(width, *index);
            manifest.push(write_file(out_dir.join(format!("gpu/{name}.out")), &telemetry)?);
        }
    }

    let expected = expected_report(scenario, width, &jobs, &node_plans, &gpu_plans);
    manifest.push(write_file(out_dir.join("expected.json"), &render_json(&expected))?);
    Ok(manifest)
}

/// Ground-truth report for the generated tree under default thresholds,
/// GPU mode on, and the alloc ratio denominator. Metrics are recomputed
/// from the drawn integers; no collector or parser is involved.
fn expected_report(
    scenario: &Scenario,
    width: usize,
    jobs: &[JobRecord],
    node_plans: &[NodePlan],
    gpu_plans: &BTreeMap<u32, Vec<GpuPlan>>,
) -> UserLoadReport {
    let thresholds = AdvisoryThresholds::default();
    let mem_floor = crate::aggregate::AggregateOptions::default().gpu_used_mem_floor_mib;

    let mut user_node_indices: BTreeSet<u32> = BTreeSet::new();
    for indices in assign_jobs(scenario) {
        user_node_indices.extend(indices);
    }

    let mut nodes = Vec::new();
    let mut advisories = Vec::new();
    for &index in &user_node_indices {
        let plan = &node_plans[index as usize];
        let host = node_name(width, index);
        let load_5min = plan.centi_load as f64 / 100.0;
        let load_ratio = load_5min / f64::from(plan.cpus_alloc.max(1));

        let gpu = if let Some(devices) = gpu_plans.get(&index) {
            let gpus_used = devices
                .iter()
                .filter(|d| d.util_pct > 0 || d.mem_used_mib > mem_floor)
                .count() as u32;
            let util_sum: u32 = devices.iter().map(|d| d.util_pct).sum();
            // Same quantized per-device values, summed in the same index
            // order as the pipeline sums parsed samples.
            let power: f64 = devices
                .iter()
                .fold(0.0, |acc, d| acc + d.deciwatts as f64 / 10.0);
            GpuReport::Stats {
                gpus_total: devices.len() as u32,
                gpus_used,
                gpu_load: f64::from(util_sum) / 100.0,
                gpu_mem_used_mib: devices.iter().map(|d| d.mem_used_mib).sum(),
                gpu_mem_total_mib: GPU_MEM_TOTAL_MIB * devices.len() as u64,
                gpu_power_w: power,
            }
        } else {
            GpuReport::Unreachable {
                reason: UNREACHABLE_NO_DATA.to_string(),
            }
        };

        if load_ratio < thresholds.cpu_low {
            advisories.push(cpu_under_advisory(
                &host,
                load_ratio,
                thresholds.cpu_low,
                "allocated cores",
            ));
        } else if load_ratio > thresholds.cpu_high {
            advisories.push(cpu_over_advisory(
                &host,
                load_ratio,
                thresholds.cpu_high,
                "allocated cores",
            ));
        }
        if let GpuReport::Stats {
            gpus_total,
            gpu_load,
            ..
        } = &gpu
        {
            if *gpus_total >= 1 {
                let mean_util = gpu_load / f64::from(*gpus_total);
                if mean_util < thresholds.gpu_low {
                    advisories.push(gpu_under_advisory(&host, mean_util, thresholds.gpu_low));
                }
            }
        }

        nodes.push(NodeReport {
            hostname: host,
            jupyter: index < scenario.jupyter_nodes,
            cpus_alloc: plan.cpus_alloc,
            cpus_total: NODE_CPUS_TOTAL,
            load_5min,
            load_known: true,
            load_ratio,
            mem_used_plus_cache_mib: plan.mem_used_mib,
            mem_total_mib: NODE_MEM_TOTAL_MIB,
            gpu: Some(gpu),
        });
    }

    UserLoadReport {
        user: scenario.user.clone(),
        collected_at: FIXTURE_COLLECTED_AT,
        jobs: jobs.to_vec(),
        nodes,
        advisories,
    }
}
