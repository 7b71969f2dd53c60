//! Remote GPU telemetry collection.
//!
//! Fans out over ssh to the nodes hosting the user's jobs and runs the
//! vendor query once per node. Each call is one instantaneous snapshot;
//! this module never averages over time. A node that cannot answer is
//! reported as unreachable rather than failing the batch: the report must
//! render even when nodes are down.

use std::collections::BTreeMap;

use crate::model::{GpuNodeResult, GpuSample, UNREACHABLE_NO_DATA};
use crate::transport::{run, run_many_remote, CommandSpec, TransportConfig, TransportError};

/// Queried fields, in the exact order the parser expects.
const QUERY_FIELDS: &str = "--query-gpu=index,utilization.gpu,memory.used,memory.total,power.draw";
const QUERY_FORMAT: &str = "--format=csv,noheader,nounits";

fn gpu_query_spec(host: &str) -> CommandSpec {
    CommandSpec::remote(host, "nvidia-smi", &[QUERY_FIELDS, QUERY_FORMAT])
}

fn unreachable_reason(err: &TransportError) -> String {
    match err {
        TransportError::Timeout { .. } => "timeout".to_string(),
        TransportError::FixtureMiss { .. } => UNREACHABLE_NO_DATA.to_string(),
        TransportError::SpawnFailure { reason, .. } => format!("spawn failure: {reason}"),
    }
}

/// Queries one node for per-device telemetry.
pub fn query_node_gpus(host: &str, config: &TransportConfig) -> GpuNodeResult {
    assert!(!host.is_empty(), "host must be non-empty");
    match run(&gpu_query_spec(host), config) {
        Ok(result) => interpret_gpu_result(host, result.exit_code, &result.stdout_text()),
        Err(err) => GpuNodeResult::Unreachable(unreachable_reason(&err)),
    }
}

/// Queries every host with bounded parallelism. The result map covers each
/// input host; per-node failure never aborts sibling queries.
pub fn collect_gpu_usage(
    hosts: &[String],
    config: &TransportConfig,
) -> BTreeMap<String, GpuNodeResult> {
    let specs: Vec<CommandSpec> = hosts.iter().map(|h| gpu_query_spec(h)).collect();
    run_many_remote(specs, config)
        .into_iter()
        .map(|(host, outcome)| {
            let result = match outcome {
                Ok(result) => interpret_gpu_result(&host, result.exit_code, &result.stdout_text()),
                Err(err) => GpuNodeResult::Unreachable(unreachable_reason(&err)),
            };
            (host, result)
        })
        .collect()
}

fn interpret_gpu_result(host: &str, exit_code: i32, stdout: &str) -> GpuNodeResult {
    if exit_code != 0 {
        return GpuNodeResult::Unreachable(format!("exit {exit_code}"));
    }
    match parse_gpu_csv(host, stdout) {
        Ok(samples) => GpuNodeResult::Samples(samples),
        Err(reason) => GpuNodeResult::Unreachable(reason),
    }
}

/// Parses `csv,noheader,nounits` telemetry lines in the order
/// index, utilization.gpu, memory.used, memory.total, power.draw.
///
/// Values outside their domain are a parse failure, never clamped.
pub fn parse_gpu_csv(host: &str, stdout: &str) -> Result<Vec<GpuSample>, String> {
    let mut samples: Vec<GpuSample> = Vec::new();

    for (idx, raw_line) in stdout.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fail = |why: &str| format!("parse: line {line_no}: {why}");

        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(fail("expected 5 comma-separated fields"));
        }

        let index: u32 = fields[0].parse().map_err(|_| fail("bad device index"))?;
        let util_pct: f64 = fields[1].parse().map_err(|_| fail("bad utilization"))?;
        if !(0.0..=100.0).contains(&util_pct) {
            return Err(fail("utilization outside [0,100]"));
        }
        let mem_used_mib: u64 = fields[2].parse().map_err(|_| fail("bad used memory"))?;
        let mem_total_mib: u64 = fields[3].parse().map_err(|_| fail("bad total memory"))?;
        if mem_used_mib > mem_total_mib {
            return Err(fail("used memory exceeds total"));
        }
        // Power reads "N/A" on devices that cannot report a draw.
        let power_w: f64 = if fields[4].eq_ignore_ascii_case("N/A") {
            0.0
        } else {
            let value: f64 = fields[4].parse().map_err(|_| fail("bad power draw"))?;
            if !value.is_finite() || value < 0.0 {
                return Err(fail("bad power draw"));
            }
            value
        };

        if samples.iter().any(|s| s.index == index) {
            return Err(fail("duplicate device index"));
        }
        samples.push(GpuSample {
            node: host.to_string(),
            index,
            util_pct,
            mem_used_mib,
            mem_total_mib,
            power_w,
        });
    }

    samples.sort_by_key(|s| s.index);
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Backend;
    use std::fs;
    use tempfile::TempDir;

    fn fixture_config(root: &TempDir) -> TransportConfig {
        TransportConfig::new(Backend::Fixture(root.path().to_path_buf()))
    }

    #[test]
    fn query_spec_matches_contract() {
        let spec = gpu_query_spec("node01");
        assert_eq!(spec.program, "nvidia-smi");
        assert_eq!(
            spec.args,
            vec![
                "--query-gpu=index,utilization.gpu,memory.used,memory.total,power.draw",
                "--format=csv,noheader,nounits"
            ]
        );
    }

    #[test]
    fn parses_and_reserializes_documented_field_order() {
        let stdout = "0, 100, 4000, 16000, 250.5\n1, 100, 3900, 16000, 249\n";
        let samples = parse_gpu_csv("node01", stdout).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].util_pct, 100.0);
        assert_eq!(samples[1].util_pct, 100.0);

        let round_trip: Vec<String> = samples
            .iter()
            .map(|s| {
                format!(
                    "{}, {}, {}, {}, {}",
                    s.index, s.util_pct, s.mem_used_mib, s.mem_total_mib, s.power_w
                )
            })
            .collect();
        assert_eq!(round_trip, vec!["0, 100, 4000, 16000, 250.5", "1, 100, 3900, 16000, 249"]);
    }

    #[test]
    fn na_power_parses_as_zero() {
        let samples = parse_gpu_csv("n", "0, 50, 10, 100, N/A\n").unwrap();
        assert_eq!(samples[0].power_w, 0.0);
    }

    #[test]
    fn samples_come_back_ordered_by_index() {
        let samples = parse_gpu_csv("n", "1, 10, 0, 100, 1.0\n0, 20, 0, 100, 1.0\n").unwrap();
        assert_eq!(samples[0].index, 0);
        assert_eq!(samples[1].index, 1);
    }

    #[test]
    fn out_of_domain_values_fail_instead_of_clamping() {
        assert!(parse_gpu_csv("n", "0, 101, 0, 100, 1.0\n").is_err());
        assert!(parse_gpu_csv("n", "0, -1, 0, 100, 1.0\n").is_err());
        assert!(parse_gpu_csv("n", "0, 50, 200, 100, 1.0\n").is_err());
        assert!(parse_gpu_csv("n", "0, 50, 0, 100, 1.0\n0, 60, 0, 100, 1.0\n").is_err());
    }

    #[test]
    fn garbage_maps_to_positioned_parse_reason() {
        let dir = TempDir::new().unwrap();
        fs::create_dir(dir.path().join("gpu")).unwrap();
        fs::write(dir.path().join("gpu/n1.out"), b"garbage\n").unwrap();
        match query_node_gpus("n1", &fixture_config(&dir)) {
            GpuNodeResult::Unreachable(reason) => assert!(reason.starts_with("parse: line 1")),
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    #[test]
    fn transport_errors_map_to_stable_reasons() {
        assert_eq!(
            unreachable_reason(&TransportError::Timeout { seconds: 5 }),
            "timeout"
        );
        assert_eq!(
            unreachable_reason(&TransportError::FixtureMiss {
                path: "gpu/n1.out".into()
            }),
            UNREACHABLE_NO_DATA
        );
    }

    #[test]
    fn missing_fixture_maps_to_no_data() {
        let dir = TempDir::new().unwrap();
        match query_node_gpus("n1", &fixture_config(&dir)) {
            GpuNodeResult::Unreachable(reason) => assert_eq!(reason, UNREACHABLE_NO_DATA),
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    #[test]
    fn nonzero_exit_maps_to_unreachable() {
        let dir = TempDir::new().unwrap();
        fs::create_dir(dir.path().join("gpu")).unwrap();
        fs::write(dir.path().join("gpu/n1.out"), b"").unwrap();
        fs::write(dir.path().join("gpu/n1.exit"), b"127").unwrap();
        match query_node_gpus("n1", &fixture_config(&dir)) {
            GpuNodeResult::Unreachable(reason) => assert_eq!(reason, "exit 127"),
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    #[test]
    fn batch_isolates_missing_nodes_and_covers_all_hosts() {
        let dir = TempDir::new().unwrap();
        fs::create_dir(dir.path().join("gpu")).unwrap();
        fs::write(dir.path().join("gpu/a.out"), b"0, 30, 10, 100, 50.0\n").unwrap();
        fs::write(dir.path().join("gpu/b.out"), b"0, 40, 10, 100, 50.0\n").unwrap();

        let hosts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let results = collect_gpu_usage(&hosts, &fixture_config(&dir));
        assert_eq!(results.keys().cloned().collect::<Vec<_>>(), hosts);
        assert!(matches!(results["a"], GpuNodeResult::Samples(_)));
        assert!(matches!(results["b"], GpuNodeResult::Samples(_)));
        assert_eq!(
            results["c"],
            GpuNodeResult::Unreachable(UNREACHABLE_NO_DATA.to_string())
        );
    }

    #[test]
    fn empty_host_list_yields_empty_map() {
        let dir = TempDir::new().unwrap();
        assert!(collect_gpu_usage(&[], &fixture_config(&dir)).is_empty());
    }

    #[test]
    fn same_fixture_queried_twice_gives_identical_maps() {
        let dir = TempDir::new().unwrap();
        fs::create_dir(dir.path().join("gpu")).unwrap();
        fs::write(dir.path().join("gpu/a.out"), b"0, 30, 10, 100, 50.0\n").unwrap();
        let hosts = vec!["a".to_string(), "b".to_string()];
        let config = fixture_config(&dir);
        assert_eq!(
            collect_gpu_usage(&hosts, &config),
            collect_gpu_usage(&hosts, &config)
        );
    }
}
