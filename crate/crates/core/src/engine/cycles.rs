use serde::Serialize;

use super::graph::{build_topology, Endpoint, GraphOptions, StageOp, Topology};
use crate::netdesc::NetworkSpec;
use crate::stream::{CycleModel, KernelStats, Shape};
use crate::EngineError;

pub const DEFAULT_CLOCK_MHZ: f64 = 105.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageCycles {
    pub name: String,
    pub busy: u64,
    pub stall: u64,
    pub skip_stall: u64,
    /// Latency the stage adds to the pipeline: cycles between the last
    /// output of the stage feeding port 0 and this stage's last output.
    pub fill: u64,
    pub first_output: u64,
    pub last_output: u64,
    pub in_positions: u64,
    pub valid_positions: u64,
    pub outputs: u64,
}

/// Per-stage and pipeline cycle accounting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub stages: Vec<StageCycles>,
    /// Largest busy count plus the sum of fill latencies.
    pub total_cycles: u64,
    /// Cycle at which the last stage output appears.
    pub makespan: u64,
    pub bottleneck: usize,
    pub clock_mhz: f64,
    pub wall_ms: f64,
    pub model: CycleModel,
}

impl CycleReport {
    pub fn from_stats(topology: &Topology, stats: &[KernelStats], model: CycleModel, clock_mhz: f64) -> Self {
        let first = |s: &KernelStats| s.first_output.unwrap_or(0);
        let last = |s: &KernelStats| s.last_output.unwrap_or(0);
        let stages: Vec<StageCycles> = topology
            .stages
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let s = &stats[i];
                let producer = topology
                    .in_edge(i, 0)
                    .map(|e| topology.edges[e].from)
                    .and_then(|from| match from {
                        Endpoint::Stage { stage, .. } => Some(last(&stats[stage])),
                        _ => None,
                    })
                    .unwrap_or(0);
                StageCycles {
                    name: node.name.clone(),
                    busy: s.busy,
                    stall: s.stall,
                    skip_stall: s.skip_stall,
                    fill: last(s).saturating_sub(producer),
                    first_output: first(s),
                    last_output: last(s),
                    in_positions: s.in_positions,
                    valid_positions: s.valid_positions,
                    outputs: s.outputs,
                }
            })
            .collect();
        let bottleneck = (0..stages.len()).fold(0, |b, i| if stages[i].busy > stages[b].busy { i } else { b });
        let max_busy = stages.iter().map(|s| s.busy).max().unwrap_or(0);
        let total_cycles = max_busy + stages.iter().map(|s| s.fill).sum::<u64>();
        let makespan = stages.iter().map(|s| s.last_output).max().unwrap_or(0);
        Self {
            stages,
            total_cycles,
            makespan,
            bottleneck,
            clock_mhz,
            wall_ms: wall_ms(total_cycles, clock_mhz),
            model,
        }
    }

    pub fn bottleneck_name(&self) -> &str {
        self.stages.get(self.bottleneck).map_or("-", |s| s.name.as_str())
    }

    /// Same report at another clock frequency.
    pub fn at_clock(&self, clock_mhz: f64) -> Self {
        Self {
            clock_mhz,
            wall_ms: wall_ms(self.total_cycles, clock_mhz),
            ..self.clone()
        }
    }
}

fn wall_ms(cycles: u64, clock_mhz: f64) -> f64 {
    cycles as f64 / (clock_mhz * 1000.0)
}

/// Local clock of the schedule, mirroring a stage's accounting.
#[derive(Default)]
struct Timer {
    t: u64,
    busy: u64,
    stall: u64,
}

impl Timer {
    fn take(&mut self, ready: u64) {
        if ready > self.t {
            self.stall += ready - self.t;
            self.t = ready;
        }
        self.tick(1);
    }

    fn tick(&mut self, n: u64) {
        self.t += n;
        self.busy += n;
    }

    fn stats(&self, in_positions: u64, valid_positions: u64) -> KernelStats {
        KernelStats {
            busy: self.busy,
            stall: self.stall,
            in_positions,
            valid_positions,
            ..KernelStats::default()
        }
    }
}

/// Times at which one input pixel is taken in, per channel.
fn take_pixel(timer: &mut Timer, ready: Option<&[u64]>, times: &mut [u64], model: &CycleModel) {
    match (ready, model.element_mode()) {
        (Some(r), true) => {
            for (t, &ts) in times.iter_mut().zip(r) {
                timer.take(ts);
                *t = timer.t;
            }
        }
        (Some(r), false) => {
            timer.take(r.iter().copied().max().unwrap_or(0));
            times.fill(timer.t);
        }
        (None, true) => {
            for t in times.iter_mut() {
                timer.tick(1);
                *t = timer.t;
            }
        }
        (None, false) => {
            timer.tick(1);
            times.fill(timer.t);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn window_schedule(
    input: &[u64],
    shape: Shape,
    k: usize,
    stride: usize,
    pad: usize,
    conv_out: Option<usize>,
    model: &CycleModel,
) -> (Vec<u64>, KernelStats) {
    let c = shape.c;
    let (rows, cols) = (shape.h + 2 * pad, shape.w + 2 * pad);
    let mut timer = Timer::default();
    let mut times = vec![0; c];
    let mut out = Vec::new();
    let (mut positions, mut valid) = (0, 0);
    for r in 0..rows {
        for col in 0..cols {
            let real = (pad..pad + shape.h).contains(&r) && (pad..pad + shape.w).contains(&col);
            let ready = real.then(|| {
                let base = ((r - pad) * shape.w + col - pad) * c;
                &input[base..base + c]
            });
            take_pixel(&mut timer, ready, &mut times, model);
            positions += 1;
            if r + 1 < k || col + 1 < k || !(r + 1 - k).is_multiple_of(stride) || !(col + 1 - k).is_multiple_of(stride) {
                continue;
            }
            valid += 1;
            match conv_out {
                Some(o) => {
                    for _ in 0..o {
                        timer.tick(model.mac_cycles);
                        out.push(timer.t);
                    }
                }
                None => out.extend_from_slice(&times),
            }
        }
    }
    (out, timer.stats(positions, valid))
}

fn fc_schedule(input: &[u64], shape: Shape, out_ch: usize, model: &CycleModel) -> (Vec<u64>, KernelStats) {
    let mut timer = Timer::default();
    let mut times = vec![0; shape.c];
    for px in input.chunks(shape.c) {
        take_pixel(&mut timer, Some(px), &mut times, model);
    }
    let out = (0..out_ch)
        .map(|_| {
            timer.tick(model.mac_cycles);
            timer.t
        })
        .collect();
    (out, timer.stats(shape.pixels() as u64, 1))
}

fn add_schedule(reg: &[u64], skip: &[u64], shape: Shape, model: &CycleModel) -> (Vec<u64>, KernelStats) {
    let mut timer = Timer::default();
    let mut skip_stall = 0;
    let mut out = Vec::with_capacity(reg.len());
    let mut wait = |timer: &mut Timer, r: u64, s: u64| {
        skip_stall += r.max(s).saturating_sub(timer.t) - r.saturating_sub(timer.t);
        timer.take(r.max(s));
    };
    for (rp, sp) in reg.chunks(shape.c).zip(skip.chunks(shape.c)) {
        if model.element_mode() {
            for (&r, &s) in rp.iter().zip(sp) {
                wait(&mut timer, r, s);
                out.push(timer.t);
            }
        } else {
            let (r, s) = (rp.iter().copied().max().unwrap_or(0), sp.iter().copied().max().unwrap_or(0));
            wait(&mut timer, r, s);
            out.extend(std::iter::repeat_n(timer.t, shape.c));
        }
    }
    let mut stats = timer.stats(shape.pixels() as u64, shape.pixels() as u64);
    stats.skip_stall = skip_stall;
    (out, stats)
}

/// Cycle report of a topology computed from shapes alone. Every stage is
/// timed with the same firing rules the streaming kernels use, element by
/// element, so the result equals the report of an actual run.
pub fn estimate_topology(topology: &Topology, model: CycleModel, clock_mhz: f64) -> CycleReport {
    let mut edge_ts: Vec<Vec<u64>> = vec![Vec::new(); topology.edges.len()];
    let deliver = |edge_ts: &mut Vec<Vec<u64>>, from: Endpoint, ts: &[u64]| {
        for e in topology.out_edges(from) {
            let lat = topology.edges[e].latency;
            edge_ts[e] = ts.iter().map(|t| t + lat).collect();
        }
    };
    deliver(&mut edge_ts, Endpoint::Source, &vec![0; topology.input.shape.len()]);
    let mut stats = Vec::with_capacity(topology.stages.len());
    for (i, node) in topology.stages.iter().enumerate() {
        let mut take = |port: usize| {
            topology
                .in_edge(i, port)
                .map(|e| std::mem::take(&mut edge_ts[e]))
                .unwrap_or_default()
        };
        let shape = node.inputs[0].shape;
        let (outs, mut s): (Vec<Vec<u64>>, KernelStats) = match node.op {
            StageOp::Conv { k, stride, pad, out, .. } => {
                let (o, s) = window_schedule(&take(0), shape, k, stride, pad, Some(out), &model);
                (vec![o], s)
            }
            StageOp::MaxPool { k, stride, pad } => {
                let (o, s) = window_schedule(&take(0), shape, k, stride, pad, None, &model);
                (vec![o], s)
            }
            StageOp::AvgPool { k, stride } => {
                let (o, s) = window_schedule(&take(0), shape, k, stride, 0, None, &model);
                (vec![o], s)
            }
            StageOp::Fc { out, .. } => {
                let (o, s) = fc_schedule(&take(0), shape, out, &model);
                (vec![o], s)
            }
            StageOp::Add { .. } => {
                let (reg, skip) = (take(0), take(1));
                let (o, s) = add_schedule(&reg, &skip, shape, &model);
                (vec![o.clone(), o], s)
            }
        };
        let all = outs.iter().flatten();
        s.outputs = outs.iter().map(|o| o.len() as u64).sum();
        s.first_output = all.clone().min().copied();
        s.last_output = all.max().copied();
        for (port, ts) in outs.iter().enumerate() {
            deliver(&mut edge_ts, Endpoint::Stage { stage: i, port }, ts);
        }
        stats.push(s);
    }
    CycleReport::from_stats(topology, &stats, model, clock_mhz)
}

/// Analytic cycle report of a network.
pub fn estimate_cycles(
    net: &NetworkSpec,
    model: CycleModel,
    clock_mhz: f64,
    opts: &GraphOptions,
) -> Result<CycleReport, EngineError> {
    Ok(estimate_topology(&build_topology(net, opts)?, model, clock_mhz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdesc::parse_netdesc;
    use crate::stream::InputCost;

    #[test]
    fn single_conv_busy() {
        let net = parse_netdesc("input 4 4 1 2\nconv k=3 o=2 d=1\n").unwrap();
        let r = estimate_cycles(&net, CycleModel::default(), DEFAULT_CLOCK_MHZ, &GraphOptions::default()).unwrap();
        assert_eq!(r.stages[0].busy, 16 + 4 * 2);
        assert_eq!(r.stages[0].valid_positions, 4);
        assert!(r.total_cycles >= r.stages[0].busy);
    }

    #[test]
    fn element_mode_scales_input_cost() {
        let net = parse_netdesc("input 4 4 3 2\nconv k=3 o=2 d=1\n").unwrap();
        let model = CycleModel {
            input_cost: InputCost::Element,
            mac_cycles: 1,
        };
        let r = estimate_cycles(&net, model, DEFAULT_CLOCK_MHZ, &GraphOptions::default()).unwrap();
        assert_eq!(r.stages[0].busy, 16 * 3 + 4 * 2);
    }

    #[test]
    fn wall_time_scales_with_clock() {
        let net = parse_netdesc("input 8 8 1 2\nconv k=3 o=4 d=1\nmaxpool k=2 s=2\n").unwrap();
        let r = estimate_cycles(&net, CycleModel::default(), 105.0, &GraphOptions::default()).unwrap();
        assert_eq!(r.wall_ms, r.total_cycles as f64 / 105_000.0);
        let fast = r.at_clock(525.0);
        assert!((fast.wall_ms * 5.0 - r.wall_ms).abs() < 1e-12);
    }
}
