use crate::KernelError;

/// Elements a depth-first line buffer must hold to form every `k×k×channels`
/// window over scan lines of `line_len` pixels.
pub fn depth_first_capacity(channels: usize, line_len: usize, k: usize) -> usize {
    channels * line_len * (k - 1) + channels * k
}

/// Buffer size needed when the same tensor is scanned channel plane by
/// channel plane instead.
pub fn width_first_capacity(h: usize, w: usize, channels: usize, k: usize) -> usize {
    h * w * (channels - 1) + h * (k - 1) + k
}

/// Fixed-capacity sliding window over a stream, addressed by absolute
/// element index. Pushing beyond capacity evicts the oldest element.
#[derive(Debug, Clone)]
pub struct LineBuffer {
    data: Vec<i32>,
    pushed: u64,
}

impl LineBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "line buffer capacity must be positive");
        Self {
            data: vec![0; capacity],
            pushed: 0,
        }
    }

    pub fn depth_first(channels: usize, line_len: usize, k: usize) -> Self {
        Self::new(depth_first_capacity(channels, line_len, k))
    }

    pub fn capacity(&self) -> usize {
        self.data.len()
    }

    /// Number of elements pushed so far.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Absolute index of the oldest element still held.
    pub fn oldest(&self) -> u64 {
        self.pushed.saturating_sub(self.data.len() as u64)
    }

    pub fn push(&mut self, value: i32) {
        let cap = self.data.len() as u64;
        self.data[(self.pushed % cap) as usize] = value;
        self.pushed += 1;
    }

    fn check(&self, start: u64, len: usize) -> Result<(), KernelError> {
        if start < self.oldest() {
            return Err(KernelError::Evicted {
                index: start,
                oldest: self.oldest(),
            });
        }
        if start + len as u64 > self.pushed {
            return Err(KernelError::Shape(format!(
                "line buffer read of element {} before it arrived",
                start + len as u64 - 1
            )));
        }
        Ok(())
    }

    pub fn get(&self, index: u64) -> Result<i32, KernelError> {
        self.check(index, 1)?;
        Ok(self.data[(index % self.data.len() as u64) as usize])
    }

    /// Copies `dst.len()` consecutive elements starting at `start`.
    pub fn read_into(&self, start: u64, dst: &mut [i32]) -> Result<(), KernelError> {
        self.check(start, dst.len())?;
        let cap = self.data.len();
        let mut pos = (start % cap as u64) as usize;
        let mut done = 0;
        while done < dst.len() {
            let n = (cap - pos).min(dst.len() - done);
            dst[done..done + n].copy_from_slice(&self.data[pos..pos + n]);
            done += n;
            pos = 0;
        }
        Ok(())
    }
}
