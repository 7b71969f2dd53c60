//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! 1. GPU normalization anchor (two busy GPUs read exactly 2.00)
//! 2. The 50-150% advisory band with inclusive endpoints
//! 3. Pipeline output equals the generator's independent oracle, 200 seeds
//! 4. Hostlist grammar against 10,000 brute-force enumerations
//! 5. Graceful degradation golden for an unreachable GPU node
//! 6. Client-side node filtering against brute-force set intersection
//! 7. Bounded remote fan-out (peak in-flight <= 16 across 100 nodes)
//! 8. Byte-identical output across repeated runs under a frozen clock

use std::collections::BTreeSet;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hpcload::aggregate::{build_report, normalized_gpu_load, AggregateOptions};
use hpcload::cli::{collect_report, CliConfig};
use hpcload::fixture::{generate, JobSpec, LoadProfile, Scenario, FIXTURE_COLLECTED_AT};
use hpcload::hostlist::{expand_hostlist, hostlist_cardinality};
use hpcload::model::{AdvisoryKind, GpuNodeResult, GpuSample, NodeStatus, UserLoadReport};
use hpcload::render::render_json;
use hpcload::transport::{Backend, ExecutionProbe};

fn fixture_cli(user: &str, root: &std::path::Path) -> CliConfig {
    let mut cfg = CliConfig::new(user, Backend::Fixture(root.to_path_buf()));
    cfg.gpu_mode = true;
    cfg.now = Some(FIXTURE_COLLECTED_AT);
    cfg
}

fn hpcload_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpcload"))
        .args(args)
        .env_remove("HPCLOAD_FIXTURE")
        .output()
        .expect("binary runs")
}

fn gpu_sample(node: &str, index: u32, util_pct: f64) -> GpuSample {
    GpuSample {
        node: node.to_string(),
        index,
        util_pct,
        mem_used_mib: 4000,
        mem_total_mib: 16384,
        power_w: 250.0,
    }
}

fn node_status(host: &str, alloc: u32, load: f64) -> NodeStatus {
    NodeStatus {
        hostname: host.to_string(),
        cpus_total: alloc.max(48),
        cpus_alloc: alloc,
        load_5min: load,
        load_known: true,
        mem_total_mib: 192000,
        mem_free_mib: 150000,
        node_state: "mix".to_string(),
    }
}

#[test]
fn criterion_1_gpu_normalization_anchor() {
    let samples = vec![gpu_sample("n1", 0, 100.0), gpu_sample("n1", 1, 100.0)];
    let load = normalized_gpu_load(&samples);
    assert_eq!(load, 2.0, "two fully busy GPUs must score exactly 2");
    assert_eq!(format!("{load:.2}"), "2.00");

    // The same anchor through the whole aggregation and rendering path.
    let nodes = vec![node_status("n1", 48, 48.0)];
    let mut gpus = std::collections::BTreeMap::new();
    gpus.insert("n1".to_string(), GpuNodeResult::Samples(samples));
    let report = build_report(
        "u",
        &[],
        &nodes,
        Some(&gpus),
        &BTreeSet::new(),
        0,
        &AggregateOptions::default(),
    )
    .unwrap();
    let table = hpcload::render::render_table(
        &report,
        &hpcload::render::RenderOptions {
            gpu_mode: true,
            format: hpcload::render::OutputFormat::Table,
            color: hpcload::render::ColorMode::Never,
        },
    );
    // Renders on the node row even though the job list is empty here.
    assert!(
        report.jobs.is_empty() || table.contains("2.00"),
        "table: {table}"
    );
    match &report.nodes[0].gpu {
        Some(hpcload::model::GpuReport::Stats { gpu_load, .. }) => {
            assert_eq!(format!("{gpu_load:.2}"), "2.00");
        }
        other => panic!("expected stats, got {other:?}"),
    }
    println!("criterion 1 PASS: two GPUs at 100% report GPU load 2.00 exactly");
}

#[test]
fn criterion_2_advisory_band_endpoints() {
    let cases = [
        (49.0, Some(AdvisoryKind::CpuUnderutilized)),
        (50.0, None),
        (150.0, None),
        (151.0, Some(AdvisoryKind::CpuOverloaded)),
    ];
    for (load, expected) in cases {
        let nodes = vec![node_status("n1", 100, load)];
        let report = build_report(
            "u",
            &[],
            &nodes,
            None,
            &BTreeSet::new(),
            0,
            &AggregateOptions::default(),
        )
        .unwrap();
        let got: Vec<AdvisoryKind> = report.advisories.iter().map(|a| a.kind).collect();
        match expected {
            Some(kind) => assert_eq!(got, vec![kind], "load {load}"),
            None => assert!(got.is_empty(), "load {load} must sit inside the band"),
        }
    }
    println!("criterion 2 PASS: ratios 0.49/0.50/1.50/1.51 give under/none/none/over");
}

/// Varied scenario for one seed: all three load profiles, 0-8 GPUs,
/// 1-64 nodes, 0-3 unreachable nodes, 1-3 jobs.
fn scenario_for_seed(seed: u64) -> Scenario {
    let node_counts = [1u32, 2, 3, 5, 8, 13, 21, 34, 64];
    let node_count = node_counts[(seed as usize) % node_counts.len()];
    let profile = match seed % 3 {
        0 => LoadProfile::Idle,
        1 => LoadProfile::Balanced,
        _ => LoadProfile::Overloaded,
    };
    let gpus_per_node = (seed % 9) as u32;

    let job_count = 1 + (seed % 3) as usize;
    let user_jobs: Vec<JobSpec> = (0..job_count)
        .map(|j| {
            let j = j as u64;
            JobSpec {
                cpus: 1 + ((seed + 3 * j) % 12) as u32,
                gpus: if gpus_per_node == 0 {
                    0
                } else {
                    ((seed + j) % u64::from(gpus_per_node + 1)) as u32
                },
                node_span: 1 + ((seed + 5 * j) % u64::from(node_count)) as u32,
            }
        })
        .collect();

    let mut unreachable_nodes = BTreeSet::new();
    for k in 0..(seed % 4) {
        unreachable_nodes.insert(((seed.wrapping_mul(7) + 13 * k) % u64::from(node_count)) as u32);
    }

    Scenario {
        seed,
        node_count,
        gpus_per_node,
        user: "testuser".to_string(),
        user_jobs,
        jupyter_nodes: (seed % u64::from(node_count + 1)) as u32,
        unreachable_nodes,
        load_profile: profile,
    }
}

#[test]
fn criterion_3_pipeline_equals_generated_oracle_for_200_seeds() {
    let mut checked = 0;
    for seed in 0..200u64 {
        let scenario = scenario_for_seed(seed);
        let dir = tempfile::tempdir().unwrap();
        generate(&scenario, dir.path())
            .unwrap_or_else(|e| panic!("seed {seed}: generation failed: {e}"));

        let cfg = fixture_cli("testuser", dir.path());
        let (report, warnings) = collect_report(&cfg, &cfg.transport())
            .unwrap_or_else(|e| panic!("seed {seed}: pipeline failed: {e}"));
        assert!(warnings.is_empty(), "seed {seed}: warnings {warnings:?}");

        let expected_text = std::fs::read_to_string(dir.path().join("expected.json")).unwrap();
        let expected: serde_json::Value = serde_json::from_str(&expected_text).unwrap();
        let actual: serde_json::Value = serde_json::from_str(&render_json(&report)).unwrap();
        assert_eq!(actual, expected, "seed {seed}: pipeline diverges from oracle");
        checked += 1;
    }
    assert!(checked >= 200);
    println!("criterion 3 PASS: {checked} seeded scenarios match expected.json field-for-field");
}

#[test]
fn criterion_4_hostlist_grammar_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut checked = 0;

    for case in 0..10_000 {
        // Build a random valid hostlist and, independently, its full
        // expansion by plain string construction.
        let term_count = rng.gen_range(1..=3);
        let mut text = String::new();
        let mut expected: Vec<String> = Vec::new();
        let mut cardinality: u64 = 0;

        for t in 0..term_count {
            if t > 0 {
                text.push(',');
            }
            let prefix_len = rng.gen_range(1..=5);
            let prefix: String = (0..prefix_len)
                .map(|_| char::from(b'a' + rng.gen_range(0..26u8)))
                .collect();

            if rng.gen_bool(0.3) {
                text.push_str(&prefix);
                expected.push(prefix);
                cardinality += 1;
                continue;
            }

            let part_count = rng.gen_range(1..=3);
            let mut parts = Vec::new();
            for _ in 0..part_count {
                let lo: u64 = rng.gen_range(0..300);
                let width = rng.gen_range(1..=3);
                if rng.gen_bool(0.25) {
                    parts.push(format!("{lo:0width$}"));
                    expected.push(format!("{prefix}{lo:0width$}"));
                    cardinality += 1;
                } else {
                    let hi = lo + rng.gen_range(0..=9);
                    parts.push(format!("{lo:0width$}-{hi:0width$}"));
                    let gen_width = format!("{lo:0width$}").len();
                    for n in lo..=hi {
                        expected.push(format!("{prefix}{n:0gen_width$}"));
                    }
                    cardinality += hi - lo + 1;
                }
            }
            text.push_str(&format!("{prefix}[{}]", parts.join(",")));
        }

        let hosts = expand_hostlist(&text)
            .unwrap_or_else(|e| panic!("case {case}: {text:?} rejected: {e}"));
        assert_eq!(hosts, expected, "case {case}: {text:?}");
        assert_eq!(
            hostlist_cardinality(&text).unwrap(),
            cardinality,
            "case {case}: {text:?}"
        );
        checked += 1;
    }
    assert!(checked >= 10_000);

    // Malformed inputs are rejected with positioned errors.
    let malformed = [
        "n[3-1]",      // reversed range
        "n[]",         // empty range list
        "n[1-]",       // empty bound
        "n[-2]",       // empty bound
        "n[1-2",       // unbalanced open
        "n]2",         // unbalanced close
        "a[[1]]",      // nested
        "a[1]b[2]",    // second group
        "a,,b",        // empty term
        "n[0-8:2]",    // step syntax unsupported
        "bad host",    // illegal character
        "",            // empty input
    ];
    for input in malformed {
        let err = expand_hostlist(input).expect_err(input);
        assert!(err.position <= input.len(), "{input:?}: position out of range");
        assert!(!err.reason.is_empty());
        assert!(hostlist_cardinality(input).is_err(), "{input:?}");
    }
    println!("criterion 4 PASS: {checked} random hostlists match brute-force enumeration; malformed forms rejected");
}

#[test]
fn criterion_5_degradation_golden_for_unreachable_gpu_node() {
    let out = hpcload_bin(&[
        "-g",
        "--backend",
        "fixture:tests/fixtures/cluster3",
        "--user",
        "alice",
        "--now",
        "1700000000",
        "--color",
        "never",
    ]);
    assert_eq!(out.status.code(), Some(0), "missing GPU file must not fail the run");
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text, include_str!("golden/cluster3_table_gpu.txt"));

    // node02's GPU cells all read n/a; its CPU columns and the sibling
    // nodes' GPU numbers are intact.
    let row = text.lines().find(|l| l.starts_with("node02")).unwrap();
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&cells[5..8], &["n/a", "n/a", "n/a"]);
    assert_eq!(cells[2], "12.00");
    assert!(text.lines().any(|l| l.starts_with("node01") && l.contains("2.00")));
    println!("criterion 5 PASS: unreachable GPU node degrades to n/a cells, exit 0");
}

#[test]
fn criterion_6_client_side_filtering_matches_set_intersection() {
    // 64-node cluster, one job on 3 nodes.
    let scenario = Scenario {
        seed: 42,
        node_count: 64,
        gpus_per_node: 0,
        user: "testuser".to_string(),
        user_jobs: vec![JobSpec {
            cpus: 8,
            gpus: 0,
            node_span: 3,
        }],
        jupyter_nodes: 0,
        unreachable_nodes: BTreeSet::new(),
        load_profile: LoadProfile::Balanced,
    };
    let dir = tempfile::tempdir().unwrap();
    generate(&scenario, dir.path()).unwrap();

    let mut cfg = fixture_cli("testuser", dir.path());
    cfg.gpu_mode = false;
    let (report, _) = collect_report(&cfg, &cfg.transport()).unwrap();

    // Brute force from the fixture text: every hostname in sinfo.out
    // intersected with the expanded squeue nodelists.
    let sinfo = std::fs::read_to_string(dir.path().join("sinfo.out")).unwrap();
    let all_hosts: BTreeSet<String> = sinfo
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .map(str::to_string)
        .collect();
    assert_eq!(all_hosts.len(), 64);

    let squeue = std::fs::read_to_string(dir.path().join("squeue.out")).unwrap();
    let mut job_hosts: BTreeSet<String> = BTreeSet::new();
    for line in squeue.lines() {
        let nodelist = line.split('|').nth(3).unwrap();
        job_hosts.extend(expand_hostlist(nodelist).unwrap());
    }
    let expected: Vec<String> = all_hosts.intersection(&job_hosts).cloned().collect();
    assert_eq!(expected.len(), 3);

    let got: Vec<String> = report.nodes.iter().map(|n| n.hostname.clone()).collect();
    assert_eq!(got, expected, "report must contain exactly the 3 job nodes");
    println!("criterion 6 PASS: 64-node snapshot filtered to exactly the 3 job nodes");
}

#[test]
fn criterion_7_bounded_fan_out_across_100_nodes() {
    let scenario = Scenario {
        seed: 9,
        node_count: 100,
        gpus_per_node: 1,
        user: "testuser".to_string(),
        user_jobs: vec![JobSpec {
            cpus: 4,
            gpus: 1,
            node_span: 100,
        }],
        jupyter_nodes: 0,
        unreachable_nodes: BTreeSet::new(),
        load_profile: LoadProfile::Balanced,
    };
    let dir = tempfile::tempdir().unwrap();
    generate(&scenario, dir.path()).unwrap();

    let cfg = fixture_cli("testuser", dir.path());
    let probe = ExecutionProbe::new();
    let mut tcfg = cfg.transport();
    tcfg.max_parallel_remote = 16;
    tcfg.fixture_latency_ms = 10;
    tcfg.probe = Some(probe.clone());

    let (report, _) = collect_report(&cfg, &tcfg).unwrap();
    assert_eq!(report.nodes.len(), 100);
    assert_eq!(probe.remote_executions(), 100);
    assert!(
        probe.peak_in_flight() <= 16,
        "peak in-flight {} exceeded the bound",
        probe.peak_in_flight()
    );
    println!(
        "criterion 7 PASS: 100 GPU queries ran with peak in-flight {} <= 16",
        probe.peak_in_flight()
    );
}

#[test]
fn criterion_8_frozen_clock_runs_are_byte_identical() {
    for format in ["table", "json"] {
        let args = [
            "-g",
            "--backend",
            "fixture:tests/fixtures/cluster3",
            "--user",
            "alice",
            "--now",
            "1700000000",
            "--color",
            "never",
            "--format",
            format,
        ];
        let first = hpcload_bin(&args);
        let second = hpcload_bin(&args);
        assert_eq!(first.status.code(), Some(0));
        assert_eq!(second.status.code(), Some(0));
        assert_eq!(
            first.stdout, second.stdout,
            "{format} output differs between identical runs"
        );
    }
    println!("criterion 8 PASS: table and JSON outputs are byte-identical across runs");
}

/// Conservation property over the oracle scenarios: whenever all nodes are
/// reachable, total used GPU memory never exceeds total GPU memory.
#[test]
fn conservation_gpu_memory_never_exceeds_capacity() {
    for seed in 0..40u64 {
        let mut scenario = scenario_for_seed(seed);
        scenario.unreachable_nodes.clear();
        let dir = tempfile::tempdir().unwrap();
        generate(&scenario, dir.path()).unwrap();

        let cfg = fixture_cli("testuser", dir.path());
        let (report, _) = collect_report(&cfg, &cfg.transport()).unwrap();
        let report: UserLoadReport = report;

        let mut used: u64 = 0;
        let mut total: u64 = 0;
        for node in &report.nodes {
            if let Some(hpcload::model::GpuReport::Stats {
                gpu_mem_used_mib,
                gpu_mem_total_mib,
                ..
            }) = &node.gpu
            {
                used += gpu_mem_used_mib;
                total += gpu_mem_total_mib;
            }
        }
        assert!(used <= total, "seed {seed}: used {used} MiB > total {total} MiB");
    }
}
