//! Depth-first pixel streams and the streaming layer kernels.
//!
//! A stream carries `H·W·C` integer elements ordered channel fastest, then
//! along the scan line, then across lines. Kernels consume one element at a
//! time, keep only a line buffer of recent input, and emit output elements
//! stamped with the logical cycle at which they are produced.

mod adder;
mod dot;
mod fc;
mod kernel;
mod linebuf;
mod ops;
mod window;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::KernelError;

pub use adder::AdderKernel;
pub use fc::FcKernel;
pub use kernel::{CycleModel, Element, Emitter, InputCost, Kernel, KernelStats};
pub use linebuf::{depth_first_capacity, width_first_capacity, LineBuffer};
pub use ops::{
    avg_pool_stage, conv_stage, drive, fc_as_conv, first_conv_stage, max_pool_stage,
    residual_block, ConvStageSpec, ResidualOutput, StageOutput,
};
pub use window::{WindowKernel, WindowOp};

/// Element type carried by a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemKind {
    /// Unsigned activation level with the given bit-width.
    Code(u8),
    /// Raw 8-bit unsigned image pixel.
    Uint8,
    /// Signed 16-bit pre-activation accumulator.
    Accum,
}

impl ElemKind {
    pub const ACCUM_BITS: u32 = 16;

    pub fn bits(self) -> u32 {
        match self {
            ElemKind::Code(n) => n as u32,
            ElemKind::Uint8 => 8,
            ElemKind::Accum => Self::ACCUM_BITS,
        }
    }

    /// Inclusive value range.
    pub fn range(self) -> (i32, i32) {
        match self {
            ElemKind::Code(n) => (0, (1i32 << n) - 1),
            ElemKind::Uint8 => (0, 255),
            ElemKind::Accum => (i16::MIN as i32, i16::MAX as i32),
        }
    }

    pub fn contains(self, v: i32) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&v)
    }

    pub fn is_code(self) -> bool {
        matches!(self, ElemKind::Code(_))
    }
}

impl fmt::Display for ElemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElemKind::Code(n) => write!(f, "code{n}"),
            ElemKind::Uint8 => f.write_str("uint8"),
            ElemKind::Accum => f.write_str("accum16"),
        }
    }
}

/// Height, width and channel count of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

/// Spatial output size of a windowed layer, or `None` if the window does not
/// fit or the stride is zero.
pub fn out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// A fully materialized depth-first stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelStream {
    shape: Shape,
    kind: ElemKind,
    data: Vec<i32>,
}

impl PixelStream {
    pub fn new(shape: Shape, kind: ElemKind, data: Vec<i32>) -> Result<Self, KernelError> {
        if data.len() != shape.len() {
            return Err(KernelError::Shape(format!(
                "stream {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(&v) = data.iter().find(|&&v| !kind.contains(v)) {
            return Err(KernelError::ValueRange {
                value: v,
                kind: kind.to_string(),
            });
        }
        Ok(Self { shape, kind, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn kind(&self) -> ElemKind {
        self.kind
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[i32] {
        let base = (r * self.shape.w + c) * self.shape.c;
        &self.data[base..base + self.shape.c]
    }

    /// Elements stamped as available from cycle 0.
    pub fn elements(&self) -> Vec<Element> {
        self.data.iter().map(|&value| Element { value, ts: 0 }).collect()
    }

    /// Uniformly random values over the full range of `kind`.
    pub fn random(shape: Shape, kind: ElemKind, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = kind.range();
        let data = (0..shape.len()).map(|_| rng.gen_range(lo..=hi)).collect();
        Self { shape, kind, data }
    }
}

/// Default value injected at padded border positions: the lowest level, 0.
pub fn default_pad_code(_kind: ElemKind) -> i32 {
    0
}

/// Surrounds a stream with `pad` border pixels whose elements all hold
/// `pad_code`.
pub fn pad_stream(input: &PixelStream, pad: usize, pad_code: i32) -> PixelStream {
    if pad == 0 {
        return input.clone();
    }
    let Shape { h, w, c } = input.shape;
    let out = Shape::new(h + 2 * pad, w + 2 * pad, c);
    let mut data = vec![pad_code; out.len()];
    for r in 0..h {
        let dst = ((r + pad) * out.w + pad) * c;
        let src = r * w * c;
        data[dst..dst + w * c].copy_from_slice(&input.data[src..src + w * c]);
    }
    PixelStream {
        shape: out,
        kind: input.kind,
        data,
    }
}
