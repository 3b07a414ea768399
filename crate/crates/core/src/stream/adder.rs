use std::sync::Arc;

use super::kernel::{check_accum, Clock};
use super::{CycleModel, ElemKind, Element, Emitter, Kernel, KernelStats, Shape};
use crate::quant::ThresholdSet;
use crate::KernelError;

/// Input port of the regular-path accumulator.
pub const REG_PORT: usize = 0;
/// Input port of the skip path.
pub const SKIP_PORT: usize = 1;

/// Residual adder. Sums the regular path with the skip path and splits the
/// result into a 16-bit skip output (port 0) and a thresholded activation
/// output (port 1), both from the same sum.
///
/// Inputs are taken alternately, one regular element then the matching skip
/// element.
#[derive(Debug)]
pub struct AdderKernel {
    label: String,
    shape: Shape,
    thresholds: Arc<ThresholdSet>,
    model: CycleModel,
    reg: Vec<Element>,
    skip: Vec<Element>,
    ch: usize,
    want_skip: bool,
    done: usize,
    clock: Clock,
    skip_stall: u64,
}

impl AdderKernel {
    pub fn new(
        label: impl Into<String>,
        shape: Shape,
        thresholds: Arc<ThresholdSet>,
        model: CycleModel,
    ) -> Result<Self, KernelError> {
        if shape.is_empty() || thresholds.len() != shape.c {
            return Err(KernelError::Shape(format!(
                "adder over {shape} with {} threshold channels",
                thresholds.len()
            )));
        }
        let blank = Element { value: 0, ts: 0 };
        Ok(Self {
            label: label.into(),
            shape,
            thresholds,
            model,
            reg: vec![blank; shape.c],
            skip: vec![blank; shape.c],
            ch: 0,
            want_skip: false,
            done: 0,
            clock: Clock::default(),
            skip_stall: 0,
        })
    }

    pub fn out_kinds(&self) -> [ElemKind; 2] {
        [ElemKind::Accum, ElemKind::Code(self.thresholds.bits())]
    }

    fn wait(&mut self, reg_ready: u64, skip_ready: u64) {
        let t = self.clock.t;
        let total = reg_ready.max(skip_ready).saturating_sub(t);
        self.skip_stall += total - reg_ready.saturating_sub(t);
        self.clock.consume(reg_ready.max(skip_ready), 1);
    }

    fn combine(&mut self, ch: usize, out: &mut Emitter) -> Result<(), KernelError> {
        let sum = self.reg[ch].value as i64 + self.skip[ch].value as i64;
        let sum = check_accum(&self.label, sum)?;
        let t = self.clock.t;
        out.emit(0, sum, t);
        out.emit(1, self.thresholds.code(ch, sum as i64) as i32, t);
        Ok(())
    }
}

impl Kernel for AdderKernel {
    fn out_ports(&self) -> usize {
        2
    }

    fn next_port(&self) -> Option<usize> {
        if self.done == self.shape.pixels() {
            None
        } else if self.want_skip {
            Some(SKIP_PORT)
        } else {
            Some(REG_PORT)
        }
    }

    fn start(&mut self, _out: &mut Emitter) -> Result<(), KernelError> {
        Ok(())
    }

    fn accept(&mut self, port: usize, e: Element, out: &mut Emitter) -> Result<(), KernelError> {
        if self.next_port() != Some(port) {
            return Err(KernelError::Exhausted);
        }
        let ch = self.ch;
        if port == REG_PORT {
            self.reg[ch] = e;
            self.want_skip = true;
            return Ok(());
        }
        self.skip[ch] = e;
        self.want_skip = false;
        if self.model.element_mode() {
            self.wait(self.reg[ch].ts, e.ts);
            self.combine(ch, out)?;
        } else if ch + 1 == self.shape.c {
            let reg_ready = self.reg.iter().map(|e| e.ts).max().unwrap_or(0);
            let skip_ready = self.skip.iter().map(|e| e.ts).max().unwrap_or(0);
            self.wait(reg_ready, skip_ready);
            for c in 0..self.shape.c {
                self.combine(c, out)?;
            }
        }
        self.ch += 1;
        if self.ch == self.shape.c {
            self.ch = 0;
            self.done += 1;
        }
        Ok(())
    }

    fn stats(&self) -> KernelStats {
        KernelStats {
            busy: self.clock.busy,
            stall: self.clock.stall,
            skip_stall: self.skip_stall,
            in_positions: self.done as u64,
            valid_positions: self.done as u64,
            ..KernelStats::default()
        }
    }
}
