use std::sync::Arc;

use super::dot::WindowDot;
use super::kernel::{check_accum, Clock, PixelGather};
use super::linebuf::{depth_first_capacity, LineBuffer};
use super::{out_dim, CycleModel, ElemKind, Element, Emitter, Kernel, KernelStats, Shape};
use crate::quant::{ThresholdSet, WeightBlock};
use crate::KernelError;

/// What a sliding-window stage computes at each valid position.
#[derive(Debug, Clone)]
pub enum WindowOp {
    /// ±1 convolution, optionally fused with threshold activation.
    Conv {
        weights: Arc<WeightBlock>,
        thresholds: Option<Arc<ThresholdSet>>,
    },
    /// Channelwise maximum; padded positions never win.
    MaxPool,
    /// Channelwise mean rounded half away from zero; no padding.
    AvgPool,
}

/// Line-buffered stage over a depth-first stream: convolution or pooling.
///
/// The kernel walks the padded raster in order. Border positions are
/// generated internally as soon as the preceding real pixel has arrived.
#[derive(Debug)]
pub struct WindowKernel {
    label: String,
    op: WindowOp,
    k: usize,
    stride: usize,
    pad: usize,
    in_shape: Shape,
    out_shape: Shape,
    out_kind: ElemKind,
    model: CycleModel,
    line_len: usize,
    positions: usize,
    pad_value: i32,
    lb: LineBuffer,
    gather: PixelGather,
    window: Vec<i32>,
    dot: Option<WindowDot>,
    pos: usize,
    real_done: usize,
    clock: Clock,
    in_positions: u64,
    valid: u64,
}

impl WindowKernel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: impl Into<String>,
        op: WindowOp,
        k: usize,
        stride: usize,
        pad: usize,
        in_shape: Shape,
        in_kind: ElemKind,
        model: CycleModel,
    ) -> Result<Self, KernelError> {
        let shape_err = |msg: String| Err(KernelError::Shape(msg));
        if in_shape.is_empty() {
            return shape_err(format!("empty input {in_shape}"));
        }
        let (Some(oh), Some(ow)) = (
            out_dim(in_shape.h, k, stride, pad),
            out_dim(in_shape.w, k, stride, pad),
        ) else {
            return shape_err(format!("window k={k} s={stride} p={pad} does not fit {in_shape}"));
        };
        let (out_c, out_kind, pad_value) = match &op {
            WindowOp::Conv { weights, thresholds } => {
                if weights.k() != k || weights.in_ch() != in_shape.c {
                    return shape_err(format!(
                        "weights are {}x{}x{} but layer is k={k} over {in_shape}",
                        weights.k(),
                        weights.k(),
                        weights.in_ch()
                    ));
                }
                let kind = match thresholds {
                    Some(t) if t.len() != weights.out_ch() => {
                        return shape_err(format!(
                            "{} threshold channels for {} outputs",
                            t.len(),
                            weights.out_ch()
                        ))
                    }
                    Some(t) => ElemKind::Code(t.bits()),
                    None => ElemKind::Accum,
                };
                (weights.out_ch(), kind, 0)
            }
            WindowOp::MaxPool => {
                if pad >= k {
                    return shape_err(format!("max pool padding {pad} must be below k={k}"));
                }
                (in_shape.c, in_kind, i32::MIN)
            }
            WindowOp::AvgPool => {
                if pad != 0 {
                    return shape_err("average pool takes no padding".into());
                }
                (in_shape.c, ElemKind::Accum, 0)
            }
        };
        let line_len = in_shape.w + 2 * pad;
        let window_len = k * k * in_shape.c;
        let dot = matches!(op, WindowOp::Conv { .. }).then(|| WindowDot::new(in_kind, window_len));
        Ok(Self {
            label: label.into(),
            op,
            k,
            stride,
            pad,
            in_shape,
            out_shape: Shape::new(oh, ow, out_c),
            out_kind,
            model,
            line_len,
            positions: (in_shape.h + 2 * pad) * line_len,
            pad_value,
            lb: LineBuffer::new(depth_first_capacity(in_shape.c, line_len, k)),
            gather: PixelGather::new(in_shape.c),
            window: vec![0; window_len],
            dot,
            pos: 0,
            real_done: 0,
            clock: Clock::default(),
            in_positions: 0,
            valid: 0,
        })
    }

    /// Replaces the line buffer with one of a different capacity.
    pub fn with_buffer_capacity(mut self, capacity: usize) -> Self {
        self.lb = LineBuffer::new(capacity);
        self
    }

    pub fn buffer_capacity(&self) -> usize {
        self.lb.capacity()
    }

    pub fn out_shape(&self) -> Shape {
        self.out_shape
    }

    pub fn out_kind(&self) -> ElemKind {
        self.out_kind
    }

    fn is_pad(&self, pos: usize) -> bool {
        let (r, c) = (pos / self.line_len, pos % self.line_len);
        r < self.pad || r >= self.pad + self.in_shape.h || c < self.pad || c >= self.pad + self.in_shape.w
    }

    fn run_pads(&mut self, out: &mut Emitter) -> Result<(), KernelError> {
        while self.pos < self.positions && self.is_pad(self.pos) {
            self.gather.pad(self.pad_value, &mut self.clock, &self.model);
            self.position(out)?;
        }
        Ok(())
    }

    /// Handles the pixel currently in `gather` at raster position `pos`.
    fn position(&mut self, out: &mut Emitter) -> Result<(), KernelError> {
        for &v in &self.gather.values {
            self.lb.push(v);
        }
        self.in_positions += 1;
        let (r, c) = (self.pos / self.line_len, self.pos % self.line_len);
        self.pos += 1;
        let k = self.k;
        if r + 1 < k || c + 1 < k || !(r + 1 - k).is_multiple_of(self.stride) || !(c + 1 - k).is_multiple_of(self.stride) {
            return Ok(());
        }
        self.valid += 1;
        let ch = self.in_shape.c;
        let (r0, c0) = (r + 1 - k, c + 1 - k);
        let row = k * ch;
        for ky in 0..k {
            let start = (((r0 + ky) * self.line_len + c0) * ch) as u64;
            self.lb.read_into(start, &mut self.window[ky * row..(ky + 1) * row])?;
        }
        match &self.op {
            WindowOp::Conv { weights, thresholds } => {
                let dot = self.dot.as_mut().expect("conv has dot scratch");
                dot.load(&self.window);
                for o in 0..weights.out_ch() {
                    let acc = dot.dot(weights, o, &self.window);
                    self.clock.advance(self.model.mac_cycles);
                    let value = match thresholds {
                        Some(t) => t.code(o, acc) as i32,
                        None => check_accum(&self.label, acc)?,
                    };
                    out.emit(0, value, self.clock.t);
                }
            }
            WindowOp::MaxPool => {
                for i in 0..ch {
                    let m = self.window.iter().skip(i).step_by(ch).copied().max().unwrap_or(0);
                    out.emit(0, m, self.gather.times[i]);
                }
            }
            WindowOp::AvgPool => {
                let n = (k * k) as i64;
                for i in 0..ch {
                    let sum: i64 = self.window.iter().skip(i).step_by(ch).map(|&v| v as i64).sum();
                    let mean = sum.signum() * ((2 * sum.abs() + n) / (2 * n));
                    out.emit(0, check_accum(&self.label, mean)?, self.gather.times[i]);
                }
            }
        }
        Ok(())
    }
}

impl Kernel for WindowKernel {
    fn out_ports(&self) -> usize {
        1
    }

    fn next_port(&self) -> Option<usize> {
        (self.real_done < self.in_shape.pixels()).then_some(0)
    }

    fn start(&mut self, out: &mut Emitter) -> Result<(), KernelError> {
        self.run_pads(out)
    }

    fn accept(&mut self, port: usize, e: Element, out: &mut Emitter) -> Result<(), KernelError> {
        if port != 0 || self.next_port().is_none() {
            return Err(KernelError::Exhausted);
        }
        if self.gather.push(e, &mut self.clock, &self.model) {
            self.real_done += 1;
            self.position(out)?;
            self.run_pads(out)?;
        }
        Ok(())
    }

    fn stats(&self) -> KernelStats {
        KernelStats {
            busy: self.clock.busy,
            stall: self.clock.stall,
            in_positions: self.in_positions,
            valid_positions: self.valid,
            ..KernelStats::default()
        }
    }
}
