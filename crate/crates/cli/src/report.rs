use std::fmt::{self, Write as _};
use std::ops::Range;

use clap::ValueEnum;
use qstream::engine::{CycleReport, PartitionReport, RunResult};
use qstream::netdesc::ResourceReport;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Json,
}

/// Rendered command output.
pub enum Report {
    Text(String),
    Json(Value),
}

impl Report {
    pub fn text(s: String) -> Self {
        Report::Text(s)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Report::Text(s) => f.write_str(s),
            Report::Json(v) => writeln!(f, "{}", serde_json::to_string_pretty(v).map_err(|_| fmt::Error)?),
        }
    }
}

#[derive(Serialize)]
pub struct DeviceRow {
    pub layers: Range<usize>,
    pub stages: Vec<String>,
    pub bram_blocks: u64,
    pub ff_bits: u64,
}

fn stage_table(out: &mut String, cycles: &CycleReport) {
    let width = cycles.stages.iter().map(|s| s.name.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(
        out,
        "{:<width$} {:>10} {:>10} {:>8} {:>10} {:>8}",
        "stage", "busy", "stall", "fill", "valid pos", "outputs"
    );
    for s in &cycles.stages {
        let _ = writeln!(
            out,
            "{:<width$} {:>10} {:>10} {:>8} {:>10} {:>8}",
            s.name, s.busy, s.stall, s.fill, s.valid_positions, s.outputs
        );
    }
}

fn model_name(cycles: &CycleReport) -> &'static str {
    match cycles.model.input_cost {
        qstream::stream::InputCost::Pixel => "pixel",
        qstream::stream::InputCost::Element => "element",
    }
}

pub fn run_report(format: Format, name: &str, class: usize, result: &RunResult) -> Report {
    let cycles = &result.cycles;
    match format {
        Format::Json => Report::Json(json!({
            "network": name,
            "class": class,
            "output": result.output.data(),
            "stages": cycles.stages,
            "total_cycles": cycles.total_cycles,
            "bottleneck": cycles.bottleneck_name(),
            "clock_mhz": cycles.clock_mhz,
            "wall_ms": cycles.wall_ms,
            "cin_mode": model_name(cycles),
        })),
        Format::Human => {
            let mut out = String::new();
            let _ = writeln!(out, "network      {name}");
            let _ = writeln!(out, "class        {class}");
            let _ = writeln!(out, "total cycles {} (bottleneck {})", cycles.total_cycles, cycles.bottleneck_name());
            let _ = writeln!(out, "wall time    {:.3} ms at {} MHz", cycles.wall_ms, cycles.clock_mhz);
            let _ = writeln!(out);
            stage_table(&mut out, cycles);
            Report::Text(out)
        }
    }
}

pub fn compare_report(format: Format, name: &str, streamed: &[i32], reference: &[i32], mismatch: Option<usize>) -> Report {
    match format {
        Format::Json => Report::Json(json!({
            "network": name,
            "verdict": if mismatch.is_some() { "MISMATCH" } else { "MATCH" },
            "elements": reference.len(),
            "first_mismatch": mismatch.map(|i| json!({
                "index": i,
                "engine": streamed[i],
                "oracle": reference[i],
            })),
        })),
        Format::Human => Report::Text(match mismatch {
            None => format!("MATCH {name}: {} output elements identical\n", reference.len()),
            Some(i) => format!(
                "MISMATCH {name}: element {i} is {} from the engine, {} from the oracle\n",
                streamed[i], reference[i]
            ),
        }),
    }
}

pub fn estimate_report(
    format: Format,
    name: &str,
    cycles: &CycleReport,
    clocks: &[f64],
    resources: &ResourceReport,
    reference: Option<f64>,
) -> Report {
    let sweep: Vec<CycleReport> = clocks.iter().map(|&mhz| cycles.at_clock(mhz)).collect();
    let delta = reference.map(|r| (cycles.total_cycles as f64 - r) / r);
    match format {
        Format::Json => Report::Json(json!({
            "network": name,
            "stages": cycles.stages,
            "total_cycles": cycles.total_cycles,
            "bottleneck": cycles.bottleneck_name(),
            "clock_mhz": cycles.clock_mhz,
            "wall_ms": cycles.wall_ms,
            "cin_mode": model_name(cycles),
            "sweep": sweep.iter().map(|r| json!({"clock_mhz": r.clock_mhz, "wall_ms": r.wall_ms})).collect::<Vec<_>>(),
            "calibration": reference.map(|r| json!({"reference_cycles": r, "delta": delta})),
            "resources": {
                "layers": resources.layers,
                "weight_raw_bits": resources.weight_raw_bits,
                "weight_granular_bits": resources.weight_granular_bits,
                "bn_bits": resources.bn_bits,
                "linebuf_bits": resources.linebuf_bits,
                "skip_bits": resources.skip_bits,
                "bram_blocks": resources.bram_blocks,
                "bram_bits": resources.bram_bits(),
                "ff_bits": resources.ff_bits(),
                "alm": resources.alm,
            },
        })),
        Format::Human => {
            let mut out = String::new();
            let _ = writeln!(out, "network      {name}");
            let _ = writeln!(
                out,
                "total cycles {} (bottleneck {}, input cost per {}, 1 cycle per output channel)",
                cycles.total_cycles,
                cycles.bottleneck_name(),
                model_name(cycles)
            );
            if let (Some(r), Some(d)) = (reference, delta) {
                let _ = writeln!(out, "calibration  {:+.1}% vs {r:.3e} reference cycles", d * 100.0);
            }
            for r in &sweep {
                let _ = writeln!(out, "wall time    {:.3} ms at {} MHz", r.wall_ms, r.clock_mhz);
            }
            let _ = writeln!(out);
            stage_table(&mut out, cycles);
            let _ = writeln!(out);
            let _ = writeln!(out, "memory");
            let _ = writeln!(
                out,
                "  weights    {} bits ({} allocated)",
                resources.weight_raw_bits, resources.weight_granular_bits
            );
            let _ = writeln!(out, "  batch norm {} bits", resources.bn_bits);
            let _ = writeln!(out, "  block RAM  {} blocks, {} Kbits", resources.bram_blocks, resources.bram_bits() / 1024);
            let _ = writeln!(
                out,
                "  registers  {} bits (line buffers {}, skip buffers {})",
                resources.ff_bits(),
                resources.linebuf_bits,
                resources.skip_bits
            );
            Report::Text(out)
        }
    }
}

pub fn partition_report(format: Format, name: &str, devices: &[DeviceRow], links: &PartitionReport) -> Report {
    match format {
        Format::Json => Report::Json(json!({
            "network": name,
            "devices": devices,
            "links": links.links,
            "all_ok": links.all_ok,
            "added_latency": links.added_latency,
        })),
        Format::Human => {
            let mut out = String::new();
            let _ = writeln!(out, "network {name}: {} device(s)", devices.len());
            for (i, d) in devices.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "device {i}: layers {}..{}, {} BRAM blocks, {} FF bits, stages {}",
                    d.layers.start,
                    d.layers.end,
                    d.bram_blocks,
                    d.ff_bits,
                    d.stages.join(" ")
                );
            }
            for l in &links.links {
                let _ = writeln!(
                    out,
                    "link {}->{}: {} Mbps of {} Mbps {} ({})",
                    l.from_device,
                    l.to_device,
                    l.required_bps / 1_000_000,
                    l.capacity_bps / 1_000_000,
                    if l.ok { "PASS" } else { "FAIL" },
                    l.edges.join(", ")
                );
            }
            Report::Text(out)
        }
    }
}

pub fn infeasible_report(format: Format, name: &str, reason: &str) -> Report {
    match format {
        Format::Json => Report::Json(json!({"network": name, "feasible": false, "reason": reason})),
        Format::Human => Report::Text(format!("INFEASIBLE {name}: {reason}\n")),
    }
}
