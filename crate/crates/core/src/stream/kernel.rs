use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::KernelError;

/// One stream element together with the logical cycle at which it becomes
/// available to the consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub value: i32,
    pub ts: u64,
}

/// How many cycles a stage spends taking in one input pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputCost {
    /// One cycle per pixel, all channels at once.
    #[default]
    Pixel,
    /// One cycle per channel element.
    Element,
}

/// Cycle-model knobs shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleModel {
    pub input_cost: InputCost,
    /// Cycles per output channel at a valid window position.
    pub mac_cycles: u64,
}

impl Default for CycleModel {
    fn default() -> Self {
        Self {
            input_cost: InputCost::Pixel,
            mac_cycles: 1,
        }
    }
}

impl CycleModel {
    pub fn element_mode(&self) -> bool {
        self.input_cost == InputCost::Element
    }

    /// Cycles to take in one pixel of `channels` elements.
    pub fn pixel_cost(&self, channels: usize) -> u64 {
        match self.input_cost {
            InputCost::Pixel => 1,
            InputCost::Element => channels as u64,
        }
    }
}

/// Per-stage cycle accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelStats {
    /// Input and compute cycles.
    pub busy: u64,
    /// Cycles spent waiting for input.
    pub stall: u64,
    /// Part of `stall` caused only by the skip input arriving late.
    pub skip_stall: u64,
    /// Input positions taken in, padding included.
    pub in_positions: u64,
    /// Positions that produced output.
    pub valid_positions: u64,
    pub outputs: u64,
    pub first_output: Option<u64>,
    pub last_output: Option<u64>,
}

/// Output side of a kernel: elements waiting to be pushed downstream.
#[derive(Debug, Default)]
pub struct Emitter {
    items: VecDeque<(usize, Element)>,
    first: Option<u64>,
    last: Option<u64>,
    count: u64,
}

impl Emitter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(&mut self, port: usize, value: i32, ts: u64) {
        self.first.get_or_insert(ts);
        self.last = Some(self.last.map_or(ts, |l| l.max(ts)));
        self.count += 1;
        self.items.push_back((port, Element { value, ts }));
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn front(&self) -> Option<&(usize, Element)> {
        self.items.front()
    }

    pub fn pop(&mut self) -> Option<(usize, Element)> {
        self.items.pop_front()
    }

    /// Fills the output fields of `stats` from what has been emitted.
    pub fn annotate(&self, stats: &mut KernelStats) {
        stats.outputs = self.count;
        stats.first_output = self.first;
        stats.last_output = self.last;
    }
}

/// A streaming stage. The driver repeatedly asks which input port the kernel
/// needs next and hands it one element from that port.
pub trait Kernel: Send {
    /// Number of output ports.
    fn out_ports(&self) -> usize;

    /// Input port the next element must come from, or `None` once the whole
    /// input has been consumed.
    fn next_port(&self) -> Option<usize>;

    /// Called once before any input; may emit output (e.g. from padding).
    fn start(&mut self, out: &mut Emitter) -> Result<(), KernelError>;

    fn accept(&mut self, port: usize, e: Element, out: &mut Emitter) -> Result<(), KernelError>;

    /// Cycle counters; output fields are filled in by the driver.
    fn stats(&self) -> KernelStats;
}

/// Local logical clock of one stage.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Clock {
    pub t: u64,
    pub busy: u64,
    pub stall: u64,
}

impl Clock {
    /// Waits until `ready`, then spends `cost` cycles.
    pub fn consume(&mut self, ready: u64, cost: u64) {
        if ready > self.t {
            self.stall += ready - self.t;
            self.t = ready;
        }
        self.advance(cost);
    }

    pub fn advance(&mut self, cost: u64) {
        self.t += cost;
        self.busy += cost;
    }
}

/// Collects the elements of one input pixel and the cycle at which each was
/// taken in.
#[derive(Debug, Clone)]
pub(crate) struct PixelGather {
    pub values: Vec<i32>,
    pub times: Vec<u64>,
    ready: u64,
    filled: usize,
}

impl PixelGather {
    pub fn new(channels: usize) -> Self {
        Self {
            values: vec![0; channels],
            times: vec![0; channels],
            ready: 0,
            filled: 0,
        }
    }

    /// Adds one element; returns true once the pixel is complete, at which
    /// point `times` holds the consumption cycles.
    pub fn push(&mut self, e: Element, clock: &mut Clock, model: &CycleModel) -> bool {
        let ch = self.filled;
        self.values[ch] = e.value;
        if model.element_mode() {
            clock.consume(e.ts, 1);
            self.times[ch] = clock.t;
        } else {
            self.ready = if ch == 0 { e.ts } else { self.ready.max(e.ts) };
        }
        self.filled += 1;
        if self.filled < self.values.len() {
            return false;
        }
        if !model.element_mode() {
            clock.consume(self.ready, 1);
            self.times.fill(clock.t);
        }
        self.filled = 0;
        true
    }

    /// Charges one padded position and records per-channel times.
    pub fn pad(&mut self, value: i32, clock: &mut Clock, model: &CycleModel) {
        self.values.fill(value);
        if model.element_mode() {
            for t in self.times.iter_mut() {
                clock.advance(1);
                *t = clock.t;
            }
        } else {
            clock.advance(1);
            self.times.fill(clock.t);
        }
    }
}

pub(crate) fn check_accum(stage: &str, value: i64) -> Result<i32, KernelError> {
    if (i16::MIN as i64..=i16::MAX as i64).contains(&value) {
        Ok(value as i32)
    } else {
        Err(KernelError::Overflow {
            stage: stage.to_string(),
            value,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_tracks_stall() {
        let mut c = Clock::default();
        c.consume(5, 1);
        assert_eq!((c.t, c.busy, c.stall), (6, 1, 5));
        c.consume(2, 1);
        assert_eq!((c.t, c.busy, c.stall), (7, 2, 5));
    }

    #[test]
    fn gather_pixel_mode_uses_latest_element() {
        let model = CycleModel::default();
        let mut clock = Clock::default();
        let mut g = PixelGather::new(2);
        assert!(!g.push(Element { value: 1, ts: 3 }, &mut clock, &model));
        assert!(g.push(Element { value: 2, ts: 7 }, &mut clock, &model));
        assert_eq!(clock.t, 8);
        assert_eq!(g.times, vec![8, 8]);
    }

    #[test]
    fn gather_element_mode_charges_each() {
        let model = CycleModel {
            input_cost: InputCost::Element,
            mac_cycles: 1,
        };
        let mut clock = Clock::default();
        let mut g = PixelGather::new(2);
        g.push(Element { value: 1, ts: 3 }, &mut clock, &model);
        g.push(Element { value: 2, ts: 0 }, &mut clock, &model);
        assert_eq!(g.times, vec![4, 5]);
        g.pad(0, &mut clock, &model);
        assert_eq!(g.times, vec![6, 7]);
        assert_eq!(clock.busy, 4);
    }

    #[test]
    fn emitter_logs_outputs() {
        let mut e = Emitter::new();
        e.emit(0, 1, 4);
        e.emit(1, 2, 9);
        let mut s = KernelStats::default();
        e.annotate(&mut s);
        assert_eq!((s.outputs, s.first_output, s.last_output), (2, Some(4), Some(9)));
    }
}
