//! Report rendering: the aligned human-readable table and the stable
//! machine-readable JSON document.
//!
//! Both renderings are pure functions of the report; every number shown is
//! traceable to a report field. Layout is frozen by golden files in the
//! test suite.

use std::io::IsTerminal;

use chrono::{DateTime, Utc};

use crate::model::{AdvisoryKind, GpuReport, NodeReport, UserLoadReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorMode {
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    pub gpu_mode: bool,
    pub format: OutputFormat,
    pub color: ColorMode,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            gpu_mode: false,
            format: OutputFormat::Table,
            color: ColorMode::Auto,
        }
    }
}

const ANSI_YELLOW: &str = "\x1b[33m";
const ANSI_RED: &str = "\x1b[31m";
const ANSI_RESET: &str = "\x1b[0m";

/// Renders per the requested format. Color never appears in JSON.
pub fn render(report: &UserLoadReport, options: &RenderOptions) -> String {
    match options.format {
        OutputFormat::Table => render_table(report, options),
        OutputFormat::Json => render_json(report),
    }
}

/// Seconds since the epoch as ISO-8601 UTC.
pub fn format_timestamp(epoch_s: u64) -> String {
    let ts = DateTime::<Utc>::from_timestamp(epoch_s as i64, 0)
        .unwrap_or_else(|| DateTime::<Utc>::from_timestamp(0, 0).expect("epoch"));
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// MiB rendered as GiB-scaled gigabytes, one decimal, half-up.
fn gb_1dp(mib: u64) -> String {
    let gb = mib as f64 / 1024.0;
    let rounded = (gb * 10.0).round() / 10.0;
    format!("{rounded:.1}")
}

fn load_pct(node: &NodeReport) -> String {
    if node.load_known {
        format!("{}", (node.load_ratio * 100.0).round() as i64)
    } else {
        "n/a".to_string()
    }
}

fn gpu_cells(node: &NodeReport) -> [String; 3] {
    match &node.gpu {
        Some(GpuReport::Stats {
            gpus_total,
            gpus_used,
            gpu_load,
            gpu_mem_used_mib,
            gpu_mem_total_mib,
            ..
        }) => [
            format!("{gpus_used}/{gpus_total}"),
            format!("{gpu_load:.2}"),
            format!("{}/{}", gb_1dp(*gpu_mem_used_mib), gb_1dp(*gpu_mem_total_mib)),
        ],
        Some(GpuReport::Unreachable { .. }) | None => {
            ["n/a".to_string(), "n/a".to_string(), "n/a".to_string()]
        }
    }
}

fn use_color(mode: ColorMode) -> bool {
    match mode {
        ColorMode::Always => true,
        ColorMode::Never => false,
        ColorMode::Auto => std::io::stdout().is_terminal(),
    }
}

/// Renders the aligned table: a header line, one row per node, and the
/// advisory hints. An empty report renders the fixed no-jobs line.
pub fn render_table(report: &UserLoadReport, options: &RenderOptions) -> String {
    if report.jobs.is_empty() {
        return format!("No running jobs for user {}.\n", report.user);
    }

    let color = use_color(options.color);
    let mut out = String::new();
    out.push_str(&format!(
        "user {}: {} running job(s) on {} node(s) at {}\n\n",
        report.user,
        report.jobs.len(),
        report.nodes.len(),
        format_timestamp(report.collected_at),
    ));

    let mut header: Vec<String> = ["NODE", "CPUS", "LOAD", "LOAD%", "MEM(GB)"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if options.gpu_mode {
        header.extend(["GPUS", "GPULOAD", "GPUMEM(GB)"].iter().map(|s| s.to_string()));
    }

    // The LOAD% cell index, highlighted when the node carries a CPU advisory.
    let load_pct_col = 3;
    let mut rows: Vec<(Vec<String>, bool, bool)> = Vec::new();
    for node in &report.nodes {
        let mut cells = vec![
            node.hostname.clone(),
            format!("{}/{}", node.cpus_alloc, node.cpus_total),
            if node.load_known {
                format!("{:.2}", node.load_5min)
            } else {
                "n/a".to_string()
            },
            load_pct(node),
            format!(
                "{}/{}",
                gb_1dp(node.mem_used_plus_cache_mib),
                gb_1dp(node.mem_total_mib)
            ),
        ];
        if options.gpu_mode {
            cells.extend(gpu_cells(node));
        }
        let out_of_band = report.advisories.iter().any(|a| {
            a.hostname == node.hostname
                && matches!(
                    a.kind,
                    AdvisoryKind::CpuUnderutilized | AdvisoryKind::CpuOverloaded
                )
        });
        rows.push((cells, node.jupyter, out_of_band));
    }

    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for (cells, _, _) in &rows {
        for (i, cell) in cells.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }

    let format_line = |cells: &[String], highlight_pct: bool| -> String {
        let mut parts = Vec::with_capacity(cells.len());
        for (i, cell) in cells.iter().enumerate() {
            let padded = format!("{cell:<width$}", width = widths[i]);
            if highlight_pct && i == load_pct_col && color {
                parts.push(format!("{ANSI_RED}{padded}{ANSI_RESET}"));
            } else {
                parts.push(padded);
            }
        }
        parts.join("  ").trim_end().to_string()
    };

    out.push_str(&format_line(&header, false));
    out.push('\n');
    for (cells, jupyter, out_of_band) in &rows {
        let mut line = format_line(cells, *out_of_band);
        if *jupyter {
            line.push_str(" [jupyter]");
        }
        out.push_str(&line);
        out.push('\n');
    }

    if !report.advisories.is_empty() {
        out.push('\n');
        for advisory in &report.advisories {
            let line = format!("hint: {}", advisory.message);
            if color {
                out.push_str(&format!("{ANSI_YELLOW}{line}{ANSI_RESET}\n"));
            } else {
                out.push_str(&line);
                out.push('\n');
            }
        }
    }

    out
}

/// Renders the report as one pretty-printed JSON document with fixed key
/// order (user, collected_at, jobs, nodes, advisories) and a trailing
/// newline. Re-rendering the same report is byte-identical.
pub fn render_json(report: &UserLoadReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}
