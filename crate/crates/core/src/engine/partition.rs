use std::ops::Range;

use serde::Serialize;

use super::graph::{Endpoint, Topology};
use crate::EngineError;

/// Default capacity of one device-to-device link.
pub const DEFAULT_LINK_BPS: u64 = 2_000_000_000;
/// Cycles added to every element for each link it crosses.
pub const DEFAULT_LINK_LATENCY: u64 = 64;

/// Contiguous stage ranges, one per device, along a daisy chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub ranges: Vec<Range<usize>>,
}

impl Partition {
    /// Checks that the ranges are non-empty, in order and cover `0..stages`.
    pub fn new(ranges: Vec<Range<usize>>, stages: usize) -> Result<Self, EngineError> {
        if ranges.is_empty() {
            return Err(EngineError::Partition("no devices".into()));
        }
        let mut next = 0;
        for (d, r) in ranges.iter().enumerate() {
            if r.start != next {
                return Err(EngineError::Partition(format!(
                    "device {d} starts at stage {} but stage {next} is unassigned or repeated",
                    r.start
                )));
            }
            if r.is_empty() {
                return Err(EngineError::Partition(format!("device {d} holds no stages")));
            }
            next = r.end;
        }
        if next != stages {
            return Err(EngineError::Partition(format!("ranges end at {next}, graph has {stages} stages")));
        }
        Ok(Self { ranges })
    }

    /// All stages on one device.
    pub fn single(stages: usize) -> Result<Self, EngineError> {
        Self::new(std::iter::once(0..stages).collect(), stages)
    }

    /// Converts contiguous network-layer ranges into stage ranges.
    pub fn from_layers(topology: &Topology, layers: &[Range<usize>]) -> Result<Self, EngineError> {
        let mut ranges = Vec::with_capacity(layers.len());
        let mut start = 0;
        for lr in layers {
            let end = start
                + topology.stages[start..]
                    .iter()
                    .take_while(|s| lr.contains(&s.layer))
                    .count();
            ranges.push(start..end);
            start = end;
        }
        Self::new(ranges, topology.stages.len())
    }

    /// Splits stages into `devices` ranges of near-equal length.
    pub fn even(stages: usize, devices: usize) -> Result<Self, EngineError> {
        if devices == 0 || devices > stages {
            return Err(EngineError::Partition(format!("cannot split {stages} stages over {devices} devices")));
        }
        let ranges = (0..devices)
            .map(|d| d * stages / devices..(d + 1) * stages / devices)
            .collect();
        Self::new(ranges, stages)
    }

    pub fn devices(&self) -> usize {
        self.ranges.len()
    }

    pub fn device_of(&self, stage: usize) -> Option<usize> {
        self.ranges.iter().position(|r| r.contains(&stage))
    }

    fn endpoint_device(&self, ep: Endpoint) -> usize {
        match ep {
            Endpoint::Source => 0,
            Endpoint::Sink => self.ranges.len() - 1,
            Endpoint::Stage { stage, .. } => self.device_of(stage).unwrap_or(0),
        }
    }

    /// Links an edge traverses, as the index of the lower device of each.
    fn links_of(&self, topology: &Topology, edge: usize) -> Range<usize> {
        let e = &topology.edges[edge];
        let (a, b) = (self.endpoint_device(e.from), self.endpoint_device(e.to));
        a.min(b)..a.max(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceReport {
    pub stages: Vec<String>,
}

/// Load of the link between device `from_device` and `from_device + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub from_device: usize,
    pub to_device: usize,
    /// Names of the FIFOs crossing the link, as `producer->consumer`.
    pub edges: Vec<String>,
    pub required_bps: u64,
    pub capacity_bps: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    pub devices: Vec<DeviceReport>,
    pub links: Vec<LinkReport>,
    pub all_ok: bool,
    /// Link latency summed over every crossing, an upper bound on the added
    /// pipeline fill.
    pub added_latency: u64,
}

/// Bandwidth check of every link. A FIFO carries at most one element per
/// cycle, so each crossing edge needs its element width times the clock.
pub fn simulate_partition(
    topology: &Topology,
    partition: &Partition,
    clock_mhz: f64,
    link_bps: u64,
) -> Result<PartitionReport, EngineError> {
    let checked = Partition::new(partition.ranges.clone(), topology.stages.len())?;
    let clock_hz = (clock_mhz * 1e6).round() as u64;
    let mut links: Vec<LinkReport> = (1..checked.devices())
        .map(|d| LinkReport {
            from_device: d - 1,
            to_device: d,
            edges: Vec::new(),
            required_bps: 0,
            capacity_bps: link_bps,
            ok: true,
        })
        .collect();
    let mut added_latency = 0;
    for (i, edge) in topology.edges.iter().enumerate() {
        for l in checked.links_of(topology, i) {
            let link = &mut links[l];
            link.edges.push(format!(
                "{}->{}",
                topology.endpoint_name(edge.from),
                topology.endpoint_name(edge.to)
            ));
            link.required_bps += edge.ty.kind.bits() as u64 * clock_hz;
            added_latency += DEFAULT_LINK_LATENCY;
        }
    }
    for link in &mut links {
        link.ok = link.required_bps <= link.capacity_bps;
    }
    Ok(PartitionReport {
        devices: checked
            .ranges
            .iter()
            .map(|r| DeviceReport {
                stages: topology.stages[r.clone()].iter().map(|s| s.name.clone()).collect(),
            })
            .collect(),
        all_ok: links.iter().all(|l| l.ok),
        links,
        added_latency,
    })
}

/// Adds `cycles_per_link` of latency to every edge for each link it crosses.
/// Returns the total latency added.
pub fn apply_link_latency(topology: &mut Topology, partition: &Partition, cycles_per_link: u64) -> Result<u64, EngineError> {
    let checked = Partition::new(partition.ranges.clone(), topology.stages.len())?;
    let mut total = 0;
    for i in 0..topology.edges.len() {
        let added = checked.links_of(topology, i).len() as u64 * cycles_per_link;
        topology.edges[i].latency += added;
        total += added;
    }
    Ok(total)
}
