use std::sync::Arc;

use serde::Serialize;

use crate::netdesc::{LayerParams, LayerSpec, NetworkParams, NetworkSpec, StreamType};
use crate::quant::{ThresholdSet, WeightBlock};
use crate::stream::{
    depth_first_capacity, AdderKernel, CycleModel, ElemKind, FcKernel, Kernel, WindowKernel, WindowOp,
};
use crate::EngineError;

/// Shape-level description of what a stage computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StageOp {
    Conv {
        k: usize,
        stride: usize,
        pad: usize,
        out: usize,
        /// Activation bit-width when fused.
        act: Option<u8>,
    },
    MaxPool { k: usize, stride: usize, pad: usize },
    AvgPool { k: usize, stride: usize },
    Fc { out: usize, act: Option<u8> },
    /// Residual adder: port 0 regular path, port 1 skip path.
    Add { bits: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageNode {
    pub name: String,
    /// Network layer the stage belongs to.
    pub layer: usize,
    pub op: StageOp,
    pub inputs: Vec<StreamType>,
    pub outputs: Vec<StreamType>,
}

/// FIFO endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Endpoint {
    /// Host feeding the input image.
    Source,
    Stage { stage: usize, port: usize },
    /// Host collecting the network output.
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub from: Endpoint,
    pub to: Endpoint,
    pub ty: StreamType,
    /// Capacity in elements.
    pub capacity: usize,
    /// Carries a residual skip path.
    pub skip: bool,
    /// Cycles added to every element crossing the edge.
    pub latency: u64,
}

/// Stages in topological order and the FIFOs between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    pub stages: Vec<StageNode>,
    pub edges: Vec<Edge>,
    pub input: StreamType,
    pub output: StreamType,
}

impl Topology {
    /// Edge feeding input `port` of `stage`.
    pub fn in_edge(&self, stage: usize, port: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| e.to == Endpoint::Stage { stage, port })
    }

    /// Edges leaving `from`.
    pub fn out_edges(&self, from: Endpoint) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].from == from).collect()
    }

    pub fn skip_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.skip).count()
    }

    pub fn endpoint_name(&self, ep: Endpoint) -> &str {
        match ep {
            Endpoint::Source => "input",
            Endpoint::Sink => "output",
            Endpoint::Stage { stage, .. } => &self.stages[stage].name,
        }
    }
}

/// FIFO sizing overrides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GraphOptions {
    /// Capacity of every regular FIFO instead of one scan line.
    pub fifo_capacity: Option<usize>,
    /// Capacity of every skip FIFO instead of the line-buffer formula.
    pub skip_capacity: Option<usize>,
}

struct Builder<'a> {
    topo: Topology,
    opts: &'a GraphOptions,
}

impl Builder<'_> {
    fn stage(&mut self, name: String, layer: usize, op: StageOp, inputs: Vec<StreamType>, outputs: Vec<StreamType>) -> usize {
        self.topo.stages.push(StageNode {
            name,
            layer,
            op,
            inputs,
            outputs,
        });
        self.topo.stages.len() - 1
    }

    fn connect(&mut self, from: Endpoint, to: Endpoint, ty: StreamType) {
        let capacity = self.opts.fifo_capacity.unwrap_or((ty.shape.w * ty.shape.c).max(1));
        self.topo.edges.push(Edge {
            from,
            to,
            ty,
            capacity,
            skip: false,
            latency: 0,
        });
    }

    fn connect_skip(&mut self, from: Endpoint, to: Endpoint, ty: StreamType) {
        let capacity = self
            .opts
            .skip_capacity
            .unwrap_or_else(|| depth_first_capacity(ty.shape.c, ty.shape.w + 2, 3));
        self.topo.edges.push(Edge {
            from,
            to,
            ty,
            capacity,
            skip: true,
            latency: 0,
        });
    }
}

fn at(stage: usize, port: usize) -> Endpoint {
    Endpoint::Stage { stage, port }
}

/// Expands a network into stages: one per layer, and for a residual block
/// two convolutions, an optional projection and the adder.
pub fn build_topology(net: &NetworkSpec, opts: &GraphOptions) -> Result<Topology, EngineError> {
    let io = net.layer_io().map_err(|e| EngineError::Graph(e.to_string()))?;
    let output = net.output().map_err(|e| EngineError::Graph(e.to_string()))?;
    let mut b = Builder {
        topo: Topology {
            stages: Vec::new(),
            edges: Vec::new(),
            input: io[0].output,
            output,
        },
        opts,
    };
    let mut reg = (Endpoint::Source, io[0].output);
    let mut skip: Option<(Endpoint, StreamType)> = None;
    for (idx, layer) in net.layers.iter().enumerate().skip(1) {
        let lio = io[idx];
        let single = |b: &mut Builder, name: String, op: StageOp, src: Endpoint| {
            let s = b.stage(name, idx, op, vec![lio.input], vec![lio.output]);
            b.connect(src, at(s, 0), lio.input);
            (at(s, 0), lio.output)
        };
        match *layer {
            LayerSpec::Input { .. } => return Err(EngineError::Graph("second input layer".into())),
            LayerSpec::Conv(c) => {
                let op = StageOp::Conv {
                    k: c.k,
                    stride: c.stride,
                    pad: c.pad,
                    out: c.out,
                    act: net.act_width(c.act),
                };
                reg = single(&mut b, format!("conv{idx}"), op, reg.0);
                skip = None;
            }
            LayerSpec::Fc(f) => {
                let op = StageOp::Fc {
                    out: f.out,
                    act: net.act_width(f.act),
                };
                reg = single(&mut b, format!("fc{idx}"), op, reg.0);
                skip = None;
            }
            LayerSpec::MaxPool { k, stride, pad } => {
                reg = single(&mut b, format!("maxpool{idx}"), StageOp::MaxPool { k, stride, pad }, reg.0);
                skip = None;
            }
            LayerSpec::AvgPool { k, stride } => {
                let src = skip.take().map_or(reg.0, |s| s.0);
                reg = single(&mut b, format!("avgpool{idx}"), StageOp::AvgPool { k, stride }, src);
            }
            LayerSpec::ResBlock { out, stride, proj, .. } => {
                let bits = net.act_bits;
                let shape = lio.output.shape;
                let code = StreamType {
                    shape,
                    kind: ElemKind::Code(bits),
                };
                let sum = StreamType {
                    shape,
                    kind: ElemKind::Accum,
                };
                let a = b.stage(
                    format!("res{idx}.a"),
                    idx,
                    StageOp::Conv {
                        k: 3,
                        stride,
                        pad: 1,
                        out,
                        act: Some(bits),
                    },
                    vec![lio.input],
                    vec![code],
                );
                b.connect(reg.0, at(a, 0), lio.input);
                let conv_b = b.stage(
                    format!("res{idx}.b"),
                    idx,
                    StageOp::Conv {
                        k: 3,
                        stride: 1,
                        pad: 1,
                        out,
                        act: None,
                    },
                    vec![code],
                    vec![sum],
                );
                b.connect(at(a, 0), at(conv_b, 0), code);
                let shortcut = if proj {
                    let p = b.stage(
                        format!("res{idx}.proj"),
                        idx,
                        StageOp::Conv {
                            k: 1,
                            stride,
                            pad: 0,
                            out,
                            act: None,
                        },
                        vec![lio.input],
                        vec![sum],
                    );
                    b.connect(reg.0, at(p, 0), lio.input);
                    at(p, 0)
                } else {
                    skip.take().map_or(reg.0, |s| s.0)
                };
                let add = b.stage(format!("res{idx}.add"), idx, StageOp::Add { bits }, vec![sum, sum], vec![sum, code]);
                b.connect(at(conv_b, 0), at(add, 0), sum);
                b.connect_skip(shortcut, at(add, 1), sum);
                reg = (at(add, 1), code);
                skip = Some((at(add, 0), sum));
            }
        }
    }
    let last = match net.layers.last() {
        Some(LayerSpec::ResBlock { .. }) => skip.map_or(reg.0, |s| s.0),
        _ => reg.0,
    };
    b.connect(last, Endpoint::Sink, output);
    Ok(b.topo)
}

/// Loaded parameters of one stage.
#[derive(Debug, Clone, PartialEq)]
pub enum StageParams {
    None,
    Conv {
        weights: Arc<WeightBlock>,
        thresholds: Option<Arc<ThresholdSet>>,
    },
    Add {
        thresholds: Arc<ThresholdSet>,
    },
}

/// A topology with parameters bound to every stage.
#[derive(Debug, Clone)]
pub struct StageGraph {
    pub topology: Topology,
    pub params: Vec<StageParams>,
}

pub fn build_graph(net: &NetworkSpec, params: &NetworkParams, opts: &GraphOptions) -> Result<StageGraph, EngineError> {
    let topology = build_topology(net, opts)?;
    if params.layers.len() != net.layers.len() {
        return Err(EngineError::Graph(format!(
            "{} parameter entries for {} layers",
            params.layers.len(),
            net.layers.len()
        )));
    }
    let missing = |name: &str| EngineError::Graph(format!("no parameters for stage {name}"));
    let mut stage_params = Vec::with_capacity(topology.stages.len());
    for node in &topology.stages {
        let p = match (&node.op, &params.layers[node.layer]) {
            (StageOp::MaxPool { .. } | StageOp::AvgPool { .. }, _) => StageParams::None,
            (StageOp::Conv { .. } | StageOp::Fc { .. }, LayerParams::Conv(c)) => StageParams::Conv {
                weights: c.weights.clone(),
                thresholds: c.act.as_ref().map(|q| q.thresholds.clone()),
            },
            (StageOp::Conv { .. }, LayerParams::Block(bp)) => {
                let (weights, thresholds) = match node.name.rsplit('.').next() {
                    Some("a") => (bp.conv_a.clone(), Some(bp.act_a.thresholds.clone())),
                    Some("b") => (bp.conv_b.clone(), None),
                    Some("proj") => (bp.proj.clone().ok_or_else(|| missing(&node.name))?, None),
                    _ => return Err(missing(&node.name)),
                };
                StageParams::Conv { weights, thresholds }
            }
            (StageOp::Add { .. }, LayerParams::Block(bp)) => StageParams::Add {
                thresholds: bp.sum.thresholds.clone(),
            },
            _ => return Err(missing(&node.name)),
        };
        stage_params.push(p);
    }
    Ok(StageGraph {
        topology,
        params: stage_params,
    })
}

impl StageGraph {
    /// Fresh kernel for one stage.
    pub fn instantiate(&self, stage: usize, model: CycleModel) -> Result<Box<dyn Kernel>, EngineError> {
        let node = &self.topology.stages[stage];
        let wrap = |source| EngineError::Kernel {
            stage: node.name.clone(),
            source,
        };
        let input = node.inputs[0];
        let window = |op: WindowOp, k, stride, pad| {
            WindowKernel::new(node.name.clone(), op, k, stride, pad, input.shape, input.kind, model)
        };
        let kernel: Box<dyn Kernel> = match (node.op, &self.params[stage]) {
            (StageOp::Conv { k, stride, pad, .. }, StageParams::Conv { weights, thresholds }) => Box::new(
                window(
                    WindowOp::Conv {
                        weights: weights.clone(),
                        thresholds: thresholds.clone(),
                    },
                    k,
                    stride,
                    pad,
                )
                .map_err(wrap)?,
            ),
            (StageOp::Fc { .. }, StageParams::Conv { weights, thresholds }) => Box::new(
                FcKernel::new(node.name.clone(), weights.clone(), thresholds.clone(), input.shape, input.kind, model)
                    .map_err(wrap)?,
            ),
            (StageOp::MaxPool { k, stride, pad }, _) => Box::new(window(WindowOp::MaxPool, k, stride, pad).map_err(wrap)?),
            (StageOp::AvgPool { k, stride }, _) => Box::new(window(WindowOp::AvgPool, k, stride, 0).map_err(wrap)?),
            (StageOp::Add { .. }, StageParams::Add { thresholds }) => Box::new(
                AdderKernel::new(node.name.clone(), input.shape, thresholds.clone(), model).map_err(wrap)?,
            ),
            _ => return Err(EngineError::Graph(format!("stage {} has mismatched parameters", node.name))),
        };
        Ok(kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdesc::{build_resnet18, build_vgg_like, parse_netdesc};

    #[test]
    fn single_conv_graph() {
        let net = parse_netdesc("input 4 4 1 2\nconv k=3 o=2 d=1\n").unwrap();
        let t = build_topology(&net, &GraphOptions::default()).unwrap();
        assert_eq!(t.stages.len(), 1);
        assert_eq!(t.edges.len(), 2);
        assert_eq!(t.edges[0].from, Endpoint::Source);
        assert_eq!(t.edges[1].to, Endpoint::Sink);
        assert_eq!(t.edges[0].capacity, 4);
    }

    #[test]
    fn resnet18_structure() {
        let t = build_topology(&build_resnet18(), &GraphOptions::default()).unwrap();
        assert_eq!(t.skip_edges(), 8);
        assert_eq!(t.stages.len(), 31);
        let adders = t.stages.iter().filter(|s| matches!(s.op, StageOp::Add { .. })).count();
        assert_eq!(adders, 8);
        let avg = t.stages.iter().position(|s| matches!(s.op, StageOp::AvgPool { .. })).unwrap();
        let feed = &t.edges[t.in_edge(avg, 0).unwrap()];
        assert_eq!(feed.ty.kind, ElemKind::Accum);
        assert!(matches!(feed.from, Endpoint::Stage { port: 0, .. }));
    }

    #[test]
    fn vgg_stage_counts() {
        let t = build_topology(&build_vgg_like(32), &GraphOptions::default()).unwrap();
        let count = |f: fn(&StageOp) -> bool| t.stages.iter().filter(|s| f(&s.op)).count();
        assert_eq!(count(|o| matches!(o, StageOp::Conv { .. })), 6);
        assert_eq!(count(|o| matches!(o, StageOp::MaxPool { .. })), 3);
        assert_eq!(count(|o| matches!(o, StageOp::Fc { .. })), 3);
    }

    #[test]
    fn skip_capacity_formula() {
        let net = parse_netdesc("input 8 8 4 2\nresblock o=4 d=1\n").unwrap();
        let t = build_topology(&net, &GraphOptions::default()).unwrap();
        let skip = t.edges.iter().find(|e| e.skip).unwrap();
        assert_eq!(skip.capacity, 4 * (10 * 2 + 3));
        assert_eq!(skip.from, Endpoint::Source);
        assert_eq!(t.output.kind, ElemKind::Accum);
    }
}
