use std::sync::Arc;

use super::dot::WindowDot;
use super::kernel::{check_accum, Clock, PixelGather};
use super::{CycleModel, ElemKind, Element, Emitter, Kernel, KernelStats, Shape};
use crate::quant::{ThresholdSet, WeightBlock};
use crate::KernelError;

/// Fully connected stage: a 1×1 convolution over the flattened input.
///
/// The weight block has `k = 1` and `in_ch = H·W·C`; the whole input vector
/// is held before the single output pixel is computed.
#[derive(Debug)]
pub struct FcKernel {
    label: String,
    weights: Arc<WeightBlock>,
    thresholds: Option<Arc<ThresholdSet>>,
    in_shape: Shape,
    out_kind: ElemKind,
    model: CycleModel,
    values: Vec<i32>,
    gather: PixelGather,
    dot: WindowDot,
    pixels_done: usize,
    clock: Clock,
    in_positions: u64,
    valid: u64,
}

impl FcKernel {
    pub fn new(
        label: impl Into<String>,
        weights: Arc<WeightBlock>,
        thresholds: Option<Arc<ThresholdSet>>,
        in_shape: Shape,
        in_kind: ElemKind,
        model: CycleModel,
    ) -> Result<Self, KernelError> {
        if in_shape.is_empty() || weights.k() != 1 || weights.in_ch() != in_shape.len() {
            return Err(KernelError::Shape(format!(
                "fc weights ({}x{}x{}) do not flatten input {in_shape}",
                weights.k(),
                weights.k(),
                weights.in_ch()
            )));
        }
        let out_kind = match &thresholds {
            Some(t) if t.len() != weights.out_ch() => {
                return Err(KernelError::Shape(format!(
                    "{} threshold channels for {} outputs",
                    t.len(),
                    weights.out_ch()
                )))
            }
            Some(t) => ElemKind::Code(t.bits()),
            None => ElemKind::Accum,
        };
        Ok(Self {
            label: label.into(),
            dot: WindowDot::new(in_kind, in_shape.len()),
            weights,
            thresholds,
            in_shape,
            out_kind,
            model,
            values: Vec::with_capacity(in_shape.len()),
            gather: PixelGather::new(in_shape.c),
            pixels_done: 0,
            clock: Clock::default(),
            in_positions: 0,
            valid: 0,
        })
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(1, 1, self.weights.out_ch())
    }

    pub fn out_kind(&self) -> ElemKind {
        self.out_kind
    }
}

impl Kernel for FcKernel {
    fn out_ports(&self) -> usize {
        1
    }

    fn next_port(&self) -> Option<usize> {
        (self.pixels_done < self.in_shape.pixels()).then_some(0)
    }

    fn start(&mut self, _out: &mut Emitter) -> Result<(), KernelError> {
        Ok(())
    }

    fn accept(&mut self, port: usize, e: Element, out: &mut Emitter) -> Result<(), KernelError> {
        if port != 0 || self.next_port().is_none() {
            return Err(KernelError::Exhausted);
        }
        if !self.gather.push(e, &mut self.clock, &self.model) {
            return Ok(());
        }
        self.values.extend_from_slice(&self.gather.values);
        self.pixels_done += 1;
        self.in_positions += 1;
        if self.pixels_done < self.in_shape.pixels() {
            return Ok(());
        }
        self.valid = 1;
        self.dot.load(&self.values);
        for o in 0..self.weights.out_ch() {
            let acc = self.dot.dot(&self.weights, o, &self.values);
            self.clock.advance(self.model.mac_cycles);
            let value = match &self.thresholds {
                Some(t) => t.code(o, acc) as i32,
                None => check_accum(&self.label, acc)?,
            };
            out.emit(0, value, self.clock.t);
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
