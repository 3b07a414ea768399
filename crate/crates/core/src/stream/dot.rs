//! Dot products of one packed ±1 weight entry against a gathered window.

use super::ElemKind;
use crate::quant::{plane_dot_words, WeightBlock};

/// Reusable bit-plane storage for one window of activation codes.
#[derive(Debug, Clone)]
pub(crate) struct WindowDot {
    kind: ElemKind,
    len: usize,
    words: usize,
    planes: Vec<u64>,
}

impl WindowDot {
    pub fn new(kind: ElemKind, len: usize) -> Self {
        let words = len.div_ceil(64);
        let nplanes = match kind {
            ElemKind::Code(n) => n as usize,
            _ => 0,
        };
        Self {
            kind,
            len,
            words,
            planes: vec![0; words * nplanes],
        }
    }

    /// Prepares bit planes for `values` (only used for code inputs).
    pub fn load(&mut self, values: &[i32]) {
        debug_assert_eq!(values.len(), self.len);
        let ElemKind::Code(n) = self.kind else {
            return;
        };
        self.planes.fill(0);
        for (j, &v) in values.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let (word, bit) = (j / 64, 1u64 << (j % 64));
            for b in 0..n as usize {
                if (v >> b) & 1 == 1 {
                    self.planes[b * self.words + word] |= bit;
                }
            }
        }
    }

    /// `Σ_j w_j·x_j` for output channel `o` over the last loaded window.
    pub fn dot(&self, weights: &WeightBlock, o: usize, values: &[i32]) -> i64 {
        let entry = weights.entry_words(o);
        match self.kind {
            ElemKind::Code(n) => (0..n as usize)
                .map(|b| plane_dot_words(entry, &self.planes[b * self.words..(b + 1) * self.words]) << b)
                .sum(),
            ElemKind::Uint8 | ElemKind::Accum => values
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    if (entry[j / 64] >> (j % 64)) & 1 == 1 {
                        v as i64
                    } else {
                        -(v as i64)
                    }
                })
                .sum(),
        }
    }
}
