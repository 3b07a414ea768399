use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use crossbeam_queue::ArrayQueue;
use serde::Serialize;

use crate::stream::Element;

/// Bounded single-producer single-consumer channel between two stages.
#[derive(Debug)]
pub struct Fifo {
    queue: ArrayQueue<Element>,
    element_bits: u32,
    pushed: AtomicU64,
    popped: AtomicU64,
    peak: AtomicUsize,
}

/// Counters of one FIFO after a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FifoStats {
    pub capacity: usize,
    pub element_bits: u32,
    pub pushed: u64,
    pub popped: u64,
    /// Highest occupancy observed.
    pub peak: usize,
}

impl Fifo {
    pub fn new(capacity: usize, element_bits: u32) -> Self {
        Self {
            queue: ArrayQueue::new(capacity.max(1)),
            element_bits,
            pushed: AtomicU64::new(0),
            popped: AtomicU64::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.queue.capacity()
    }

    /// Returns false without blocking when the FIFO is full.
    pub fn try_push(&self, e: Element) -> bool {
        if self.queue.push(e).is_err() {
            return false;
        }
        self.pushed.fetch_add(1, Ordering::Relaxed);
        self.peak.fetch_max(self.queue.len(), Ordering::Relaxed);
        true
    }

    pub fn try_pop(&self) -> Option<Element> {
        let e = self.queue.pop()?;
        self.popped.fetch_add(1, Ordering::Relaxed);
        Some(e)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn stats(&self) -> FifoStats {
        FifoStats {
            capacity: self.capacity(),
            element_bits: self.element_bits,
            pushed: self.pushed.load(Ordering::Relaxed),
            popped: self.popped.load(Ordering::Relaxed),
            peak: self.peak.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_counted() {
        let f = Fifo::new(2, 2);
        let e = |v| Element { value: v, ts: 0 };
        assert!(f.try_push(e(1)));
        assert!(f.try_push(e(2)));
        assert!(!f.try_push(e(3)));
        assert_eq!(f.try_pop(), Some(e(1)));
        assert!(f.try_push(e(3)));
        assert_eq!(f.try_pop(), Some(e(2)));
        assert_eq!(f.try_pop(), Some(e(3)));
        assert_eq!(f.try_pop(), None);
        let s = f.stats();
        assert_eq!((s.pushed, s.popped, s.peak, s.capacity), (3, 3, 2, 2));
    }
}
