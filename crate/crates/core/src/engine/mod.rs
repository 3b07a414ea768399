//! Pipeline graphs of streaming stages, their deterministic concurrent
//! execution, cycle accounting and multi-device placement.

mod cycles;
mod fifo;
mod graph;
mod partition;
mod run;

pub use cycles::{estimate_cycles, estimate_topology, CycleReport, StageCycles, DEFAULT_CLOCK_MHZ};
pub use fifo::{Fifo, FifoStats};
pub use graph::{
    build_graph, build_topology, Edge, Endpoint, GraphOptions, StageGraph, StageNode, StageOp,
    StageParams, Topology,
};
pub use partition::{
    apply_link_latency, simulate_partition, LinkReport, Partition, PartitionReport,
    DEFAULT_LINK_BPS, DEFAULT_LINK_LATENCY,
};
pub use run::{run, EdgeReport, RunOptions, RunResult};
