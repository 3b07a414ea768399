use serde::{Deserialize, Serialize};

use super::check_bits;
use crate::QuantError;

/// An activation level in `0..2^bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActCode {
    code: u8,
    bits: u8,
}

impl ActCode {
    pub fn new(code: u32, bits: u8) -> Result<Self, QuantError> {
        check_bits(bits)?;
        if code >= 1u32 << bits {
            return Err(QuantError::CodeRange { code, bits });
        }
        Ok(Self {
            code: code as u8,
            bits,
        })
    }

    pub fn code(self) -> u8 {
        self.code
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    /// Highest level representable at `bits`.
    pub fn max_code(bits: u8) -> u32 {
        (1u32 << bits) - 1
    }
}

/// Signed accumulator checked against a fixed bit-width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Accum {
    value: i32,
    width: u8,
}

impl Accum {
    pub const SKIP_WIDTH: u8 = 16;

    pub fn new(value: i64, width: u8) -> Result<Self, QuantError> {
        assert!((2..=32).contains(&width), "accumulator width {width}");
        let lo = -(1i64 << (width - 1));
        let hi = (1i64 << (width - 1)) - 1;
        if value < lo || value > hi {
            return Err(QuantError::AccumOverflow { value, width });
        }
        Ok(Self {
            value: value as i32,
            width,
        })
    }

    pub fn value(self) -> i32 {
        self.value
    }

    pub fn width(self) -> u8 {
        self.width
    }
}

/// Fixed-length bit vector packed little-endian into `u64` words.
///
/// Bits past `len` in the last word are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedBits {
    words: Vec<u64>,
    len: usize,
}

impl PackedBits {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if b {
                words[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        Self { words, len }
    }

    /// Builds from raw words, clearing anything past `len`.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Result<Self, QuantError> {
        if words.len() != len.div_ceil(64) {
            return Err(QuantError::LengthMismatch {
                left: words.len(),
                right: len.div_ceil(64),
            });
        }
        if !len.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
        Ok(Self { words, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

/// Activation codes split into `bits` binary planes, plane `b` holding bit `b`
/// of every code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlanes {
    planes: Vec<PackedBits>,
}

impl BitPlanes {
    pub fn from_codes(codes: &[ActCode]) -> Result<Self, QuantError> {
        let bits = match codes.first() {
            Some(c) => c.bits(),
            None => 1,
        };
        let mut planes = vec![PackedBits::zeros(codes.len()); bits as usize];
        for (j, c) in codes.iter().enumerate() {
            if c.bits() != bits {
                return Err(QuantError::MixedWidths(bits, c.bits()));
            }
            for (b, plane) in planes.iter_mut().enumerate() {
                if c.code() >> b & 1 == 1 {
                    plane.set(j, true);
                }
            }
        }
        Ok(Self { planes })
    }

    pub fn planes(&self) -> &[PackedBits] {
        &self.planes
    }
}

/// Σ wⱼ·bⱼ for ±1 weights (bit 1 = +1) against a {0,1} plane, computed as
/// `2·popcount(w ∧ b) − popcount(b)`.
pub fn plane_dot(weights: &PackedBits, plane: &PackedBits) -> Result<i64, QuantError> {
    if weights.len() != plane.len() {
        return Err(QuantError::LengthMismatch {
            left: weights.len(),
            right: plane.len(),
        });
    }
    Ok(plane_dot_words(weights.words(), plane.words()))
}

#[inline]
pub(crate) fn plane_dot_words(weights: &[u64], plane: &[u64]) -> i64 {
    debug_assert_eq!(weights.len(), plane.len());
    let mut both = 0u32;
    let mut ones = 0u32;
    for (w, b) in weights.iter().zip(plane) {
        both += (w & b).count_ones();
        ones += b.count_ones();
    }
    2 * both as i64 - ones as i64
}

/// Σ wⱼ·codeⱼ for ±1 weights against n-bit codes, as a shift-add over the
/// code bit planes.
pub fn quantized_dot(weights: &PackedBits, codes: &[ActCode]) -> Result<Accum, QuantError> {
    if weights.len() != codes.len() {
        return Err(QuantError::LengthMismatch {
            left: weights.len(),
            right: codes.len(),
        });
    }
    let planes = BitPlanes::from_codes(codes)?;
    let mut acc = 0i64;
    for (b, plane) in planes.planes().iter().enumerate() {
        acc += plane_dot(weights, plane)? << b;
    }
    Accum::new(acc, 32)
}

/// Σ wⱼ·aⱼ when both operands are ±1 vectors (bit 1 = +1): the classic
/// XNOR-popcount form `2·popcount(¬(w ⊕ a)) − N`.
pub fn xnor_dot(weights: &PackedBits, acts: &PackedBits) -> Result<i64, QuantError> {
    if weights.len() != acts.len() {
        return Err(QuantError::LengthMismatch {
            left: weights.len(),
            right: acts.len(),
        });
    }
    let n = weights.len();
    let mut matches = 0u32;
    for (i, (w, a)) in weights.words().iter().zip(acts.words()).enumerate() {
        let mut m = !(w ^ a);
        let used = n - i * 64;
        if used < 64 {
            m &= (1u64 << used) - 1;
        }
        matches += m.count_ones();
    }
    Ok(2 * matches as i64 - n as i64)
}
