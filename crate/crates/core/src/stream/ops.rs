//! Single-stage entry points that run one kernel over a whole stream.

use std::sync::Arc;

use super::{
    AdderKernel, CycleModel, ElemKind, Element, Emitter, FcKernel, Kernel, KernelStats,
    PixelStream, Shape, WindowKernel, WindowOp,
};
use crate::quant::{ThresholdSet, WeightBlock};
use crate::KernelError;

/// Parameters of one convolution stage.
#[derive(Debug, Clone)]
pub struct ConvStageSpec {
    pub weights: Arc<WeightBlock>,
    /// `None` leaves the output as 16-bit accumulators.
    pub thresholds: Option<Arc<ThresholdSet>>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvStageSpec {
    pub fn new(weights: WeightBlock, thresholds: Option<ThresholdSet>, stride: usize, pad: usize) -> Self {
        Self {
            weights: Arc::new(weights),
            thresholds: thresholds.map(Arc::new),
            stride,
            pad,
        }
    }

    pub fn kernel(&self, label: &str, in_shape: Shape, in_kind: ElemKind, model: CycleModel) -> Result<WindowKernel, KernelError> {
        WindowKernel::new(
            label,
            WindowOp::Conv {
                weights: self.weights.clone(),
                thresholds: self.thresholds.clone(),
            },
            self.weights.k(),
            self.stride,
            self.pad,
            in_shape,
            in_kind,
            model,
        )
    }
}

/// Output stream of a stage and its cycle counters.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub stream: PixelStream,
    pub stats: KernelStats,
}

/// Runs `kernel` to completion over per-port input element lists and
/// returns the per-port outputs.
pub fn drive(
    kernel: &mut dyn Kernel,
    inputs: &[&[Element]],
) -> Result<(Vec<Vec<Element>>, KernelStats), KernelError> {
    let mut outputs = vec![Vec::new(); kernel.out_ports()];
    let mut cursor = vec![0usize; inputs.len()];
    let mut emitter = Emitter::new();
    kernel.start(&mut emitter)?;
    loop {
        while let Some((port, e)) = emitter.pop() {
            outputs[port].push(e);
        }
        let Some(port) = kernel.next_port() else {
            break;
        };
        let e = *inputs
            .get(port)
            .and_then(|s| s.get(cursor[port]))
            .ok_or_else(|| KernelError::Shape(format!("input port {port} ran out of elements")))?;
        cursor[port] += 1;
        kernel.accept(port, e, &mut emitter)?;
    }
    if let Some(p) = (0..inputs.len()).find(|&p| cursor[p] != inputs[p].len()) {
        return Err(KernelError::Shape(format!(
            "input port {p} has {} surplus elements",
            inputs[p].len() - cursor[p]
        )));
    }
    let mut stats = kernel.stats();
    emitter.annotate(&mut stats);
    Ok((outputs, stats))
}

fn collect(elements: &[Element], shape: Shape, kind: ElemKind) -> Result<PixelStream, KernelError> {
    PixelStream::new(shape, kind, elements.iter().map(|e| e.value).collect())
}

fn run_single(mut kernel: impl Kernel, input: &PixelStream, shape: Shape, kind: ElemKind) -> Result<StageOutput, KernelError> {
    let elems = input.elements();
    let (out, stats) = drive(&mut kernel, &[&elems])?;
    Ok(StageOutput {
        stream: collect(&out[0], shape, kind)?,
        stats,
    })
}

/// Streaming ±1 convolution over any element kind. Code inputs use bit-plane
/// popcounts, other kinds add or subtract each element.
pub fn conv_stage(spec: &ConvStageSpec, input: &PixelStream, model: CycleModel) -> Result<StageOutput, KernelError> {
    let kernel = spec.kernel("conv", input.shape(), input.kind(), model)?;
    let (shape, kind) = (kernel.out_shape(), kernel.out_kind());
    run_single(kernel, input, shape, kind)
}

/// Convolution over raw 8-bit image pixels.
pub fn first_conv_stage(spec: &ConvStageSpec, input: &PixelStream, model: CycleModel) -> Result<StageOutput, KernelError> {
    if input.kind() != ElemKind::Uint8 {
        return Err(KernelError::Shape(format!("first layer expects uint8 input, got {}", input.kind())));
    }
    conv_stage(spec, input, model)
}

pub fn max_pool_stage(k: usize, stride: usize, pad: usize, input: &PixelStream, model: CycleModel) -> Result<StageOutput, KernelError> {
    let kernel = WindowKernel::new("maxpool", WindowOp::MaxPool, k, stride, pad, input.shape(), input.kind(), model)?;
    let (shape, kind) = (kernel.out_shape(), kernel.out_kind());
    run_single(kernel, input, shape, kind)
}

pub fn avg_pool_stage(k: usize, stride: usize, input: &PixelStream, model: CycleModel) -> Result<StageOutput, KernelError> {
    let kernel = WindowKernel::new("avgpool", WindowOp::AvgPool, k, stride, 0, input.shape(), input.kind(), model)?;
    let (shape, kind) = (kernel.out_shape(), kernel.out_kind());
    run_single(kernel, input, shape, kind)
}

/// Fully connected layer as a 1×1 convolution over the flattened input.
pub fn fc_as_conv(
    weights: Arc<WeightBlock>,
    thresholds: Option<Arc<ThresholdSet>>,
    input: &PixelStream,
    model: CycleModel,
) -> Result<StageOutput, KernelError> {
    let kernel = FcKernel::new("fc", weights, thresholds, input.shape(), input.kind(), model)?;
    let (shape, kind) = (kernel.out_shape(), kernel.out_kind());
    run_single(kernel, input, shape, kind)
}

/// Outputs of [`residual_block`].
#[derive(Debug, Clone)]
pub struct ResidualOutput {
    /// 16-bit sums, the next block's skip input.
    pub skip_out: PixelStream,
    /// Thresholded sums, the next block's regular input.
    pub reg_out: PixelStream,
    /// Counters of the first convolution, second convolution and adder.
    pub stats: [KernelStats; 3],
}

/// Two-convolution residual block: `sum = conv_b(conv_a(reg_in)) + skip_in`,
/// split into the raw sum and its thresholded activation.
pub fn residual_block(
    conv_a: &ConvStageSpec,
    conv_b: &ConvStageSpec,
    sum_thresholds: Arc<ThresholdSet>,
    skip_in: &PixelStream,
    reg_in: &PixelStream,
    model: CycleModel,
) -> Result<ResidualOutput, KernelError> {
    if conv_a.thresholds.is_none() || conv_b.thresholds.is_some() {
        return Err(KernelError::Shape(
            "residual block needs a fused first convolution and an unfused second".into(),
        ));
    }
    let mut ka = conv_a.kernel("block.conv_a", reg_in.shape(), reg_in.kind(), model)?;
    let mut kb = conv_b.kernel("block.conv_b", ka.out_shape(), ka.out_kind(), model)?;
    let shape = kb.out_shape();
    if skip_in.shape() != shape {
        return Err(KernelError::Shape(format!(
            "skip input {} does not match block output {shape}",
            skip_in.shape()
        )));
    }
    let mut adder = AdderKernel::new("block.add", shape, sum_thresholds, model)?;
    let [sum_kind, code_kind] = adder.out_kinds();

    let (a_out, a_stats) = drive(&mut ka, &[&reg_in.elements()])?;
    let (b_out, b_stats) = drive(&mut kb, &[&a_out[0]])?;
    let (sums, add_stats) = drive(&mut adder, &[&b_out[0], &skip_in.elements()])?;
    Ok(ResidualOutput {
        skip_out: collect(&sums[0], shape, sum_kind)?,
        reg_out: collect(&sums[1], shape, code_kind)?,
        stats: [a_stats, b_stats, add_stats],
    })
}
