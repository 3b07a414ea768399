//! Network descriptions: the text format, parameter blobs, builtin models,
//! resource estimates and device partitioning.

mod builtin;
mod params;
mod parse;
mod resources;

use serde::{Deserialize, Serialize};

use crate::quant::MAX_ACT_BITS;
use crate::stream::{out_dim, ElemKind, Shape};
use crate::NetError;

pub use builtin::{build_alexnet, build_resnet18, build_vgg_like, builtin};
pub use params::{
    census, load_params, random_params, write_params, BlockParams, ConvParams, LayerCensus,
    LayerParams, NetworkParams, Quantizer, RawParams, BLOB_MAGIC, BLOB_VERSION,
};
pub use parse::{emit_netdesc, parse_netdesc};
pub use resources::{
    estimate_resources, partition_network, DeviceBudget, DeviceLoad, LayerResources,
    NetworkPartition, ResourceReport, BRAM_BLOCK_BITS, BRAM_MIN_DEPTH, BRAM_WIDTH, BN_ENTRY_BITS,
};

/// Default activation bit-width of a network.
pub const DEFAULT_ACT_BITS: u8 = 2;

/// Activation applied after a convolution or fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    /// Threshold activation at the network's default bit-width.
    Default,
    /// Threshold activation at an explicit bit-width.
    Bits(u8),
    /// No activation; the layer emits 16-bit accumulators.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out: usize,
    pub d: f64,
    pub act: Act,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcLayer {
    pub out: usize,
    pub d: f64,
    pub act: Act,
}

/// One line of a network description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Input { h: usize, w: usize, c: usize, bits: u8 },
    Conv(ConvLayer),
    MaxPool { k: usize, stride: usize, pad: usize },
    AvgPool { k: usize, stride: usize },
    /// Two 3×3 convolutions around a skip connection. The first convolution
    /// has the given stride; `proj` adds a strided 1×1 convolution on the
    /// skip path.
    ResBlock { out: usize, stride: usize, d: f64, proj: bool },
    Fc(FcLayer),
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Conv(_) => "conv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::ResBlock { .. } => "resblock",
            LayerSpec::Fc(_) => "fc",
        }
    }

    /// Range size `d` for layers that carry parameters.
    pub fn range(&self) -> Option<f64> {
        match self {
            LayerSpec::Conv(c) => Some(c.d),
            LayerSpec::Fc(f) => Some(f.d),
            LayerSpec::ResBlock { d, .. } => Some(*d),
            _ => None,
        }
    }
}

/// Shape and element kind of a stream between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamType {
    pub shape: Shape,
    pub kind: ElemKind,
}

/// Streams around one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerIo {
    /// Stream the layer reads.
    pub input: StreamType,
    /// Regular output read by the next layer.
    pub output: StreamType,
    /// 16-bit sum output of a residual block.
    pub skip: Option<StreamType>,
}

/// A validated-on-demand layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Bit-width used by activations that do not set their own.
    pub act_bits: u8,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, act_bits: u8, layers: Vec<LayerSpec>) -> Result<Self, NetError> {
        let spec = Self {
            name: name.into(),
            act_bits,
            layers,
        };
        spec.layer_io()?;
        Ok(spec)
    }

    /// Bit-width of an activation, or `None` for a linear layer.
    pub fn act_width(&self, act: Act) -> Option<u8> {
        match act {
            Act::Default => Some(self.act_bits),
            Act::Bits(n) => Some(n),
            Act::Linear => None,
        }
    }

    pub fn input(&self) -> StreamType {
        match self.layers.first() {
            Some(&LayerSpec::Input { h, w, c, bits }) => StreamType {
                shape: Shape::new(h, w, c),
                kind: input_kind(bits),
            },
            _ => panic!("network without input layer; call layer_io() to validate"),
        }
    }

    /// Final output stream: a residual block's sum if it is the last layer,
    /// otherwise the last regular output.
    pub fn output(&self) -> Result<StreamType, NetError> {
        let io = self.layer_io()?;
        let last = io.last().expect("validated network has an input layer");
        Ok(last.skip.unwrap_or(last.output))
    }

    /// Parameterized layers, in order.
    pub fn quantizing_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].range().is_some()).collect()
    }

    /// Validates the whole shape chain and returns the streams around every
    /// layer (index 0 is the input layer, whose input and output coincide).
    pub fn layer_io(&self) -> Result<Vec<LayerIo>, NetError> {
        self.layer_io_with_lines(None)
    }

    pub(crate) fn layer_io_with_lines(&self, lines: Option<&[usize]>) -> Result<Vec<LayerIo>, NetError> {
        let err = |layer: usize, msg: String| NetError::Shape {
            line: lines.and_then(|l| l.get(layer).copied()),
            layer,
            msg,
        };
        check_width(self.act_bits).map_err(|m| err(0, m))?;
        let mut io = Vec::with_capacity(self.layers.len());
        let input = match self.layers.first() {
            Some(&LayerSpec::Input { h, w, c, bits }) => {
                if h == 0 || w == 0 || c == 0 {
                    return Err(err(0, "input dimensions must be positive".into()));
                }
                check_width(bits).map_err(|m| err(0, m))?;
                StreamType {
                    shape: Shape::new(h, w, c),
                    kind: input_kind(bits),
                }
            }
            _ => return Err(err(0, "the first layer must be `input`".into())),
        };
        io.push(LayerIo {
            input,
            output: input,
            skip: None,
        });
        for (idx, layer) in self.layers.iter().enumerate().skip(1) {
            let prev = io.last().expect("input pushed");
            let reg = prev.output;
            let e = |msg: String| err(idx, msg);
            if let Some(d) = layer.range() {
                if !(d.is_finite() && d > 0.0) {
                    return Err(e(format!("range size d={d} must be finite and positive")));
                }
            }
            let window = |k: usize, s: usize, p: usize, src: Shape| -> Result<(usize, usize), NetError> {
                if k == 0 || s == 0 {
                    return Err(e("window size and stride must be positive".into()));
                }
                match (out_dim(src.h, k, s, p), out_dim(src.w, k, s, p)) {
                    (Some(h), Some(w)) => Ok((h, w)),
                    _ => Err(e(format!("k={k} s={s} p={p} does not fit input {src}"))),
                }
            };
            let act_kind = |act: Act| -> Result<ElemKind, NetError> {
                match self.act_width(act) {
                    Some(n) => {
                        check_width(n).map_err(e)?;
                        Ok(ElemKind::Code(n))
                    }
                    None => Ok(ElemKind::Accum),
                }
            };
            let entry = match *layer {
                LayerSpec::Input { .. } => return Err(e("only one `input` layer is allowed".into())),
                LayerSpec::Conv(c) => {
                    if c.out == 0 {
                        return Err(e("conv needs o >= 1".into()));
                    }
                    let (h, w) = window(c.k, c.stride, c.pad, reg.shape)?;
                    LayerIo {
                        input: reg,
                        output: StreamType {
                            shape: Shape::new(h, w, c.out),
                            kind: act_kind(c.act)?,
                        },
                        skip: None,
                    }
                }
                LayerSpec::MaxPool { k, stride, pad } => {
                    if pad >= k {
                        return Err(e(format!("max pool padding {pad} must be below k={k}")));
                    }
                    let (h, w) = window(k, stride, pad, reg.shape)?;
                    LayerIo {
                        input: reg,
                        output: StreamType {
                            shape: Shape::new(h, w, reg.shape.c),
                            kind: reg.kind,
                        },
                        skip: None,
                    }
                }
                LayerSpec::AvgPool { k, stride } => {
                    let src = prev.skip.unwrap_or(reg);
                    let (h, w) = window(k, stride, 0, src.shape)?;
                    LayerIo {
                        input: src,
                        output: StreamType {
                            shape: Shape::new(h, w, src.shape.c),
                            kind: ElemKind::Accum,
                        },
                        skip: None,
                    }
                }
                LayerSpec::ResBlock { out, stride, proj, .. } => {
                    if out == 0 {
                        return Err(e("resblock needs o >= 1".into()));
                    }
                    let (h, w) = window(3, stride, 1, reg.shape)?;
                    let shape = Shape::new(h, w, out);
                    if !proj && shape != reg.shape {
                        return Err(e(format!(
                            "resblock changes shape {} -> {shape}; add `proj`",
                            reg.shape
                        )));
                    }
                    if proj {
                        window(1, stride, 0, reg.shape)
                            .ok()
                            .filter(|&(ph, pw)| ph == h && pw == w)
                            .ok_or_else(|| e("projection does not match block output".into()))?;
                    }
                    LayerIo {
                        input: reg,
                        output: StreamType {
                            shape,
                            kind: ElemKind::Code(self.act_bits),
                        },
                        skip: Some(StreamType {
                            shape,
                            kind: ElemKind::Accum,
                        }),
                    }
                }
                LayerSpec::Fc(f) => {
                    if f.out == 0 {
                        return Err(e("fc needs o >= 1".into()));
                    }
                    LayerIo {
                        input: reg,
                        output: StreamType {
                            shape: Shape::new(1, 1, f.out),
                            kind: act_kind(f.act)?,
                        },
                        skip: None,
                    }
                }
            };
            io.push(entry);
        }
        Ok(io)
    }
}

fn input_kind(bits: u8) -> ElemKind {
    if bits == 8 {
        ElemKind::Uint8
    } else {
        ElemKind::Code(bits)
    }
}

fn check_width(bits: u8) -> Result<(), String> {
    if (1..=MAX_ACT_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(format!("bit-width {bits} outside 1..={MAX_ACT_BITS}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(k: usize, stride: usize, pad: usize, out: usize) -> LayerSpec {
        LayerSpec::Conv(ConvLayer {
            k,
            stride,
            pad,
            out,
            d: 1.0,
            act: Act::Default,
        })
    }

    #[test]
    fn chain_shapes() {
        let net = NetworkSpec::new(
            "t",
            2,
            vec![
                LayerSpec::Input { h: 32, w: 32, c: 3, bits: 8 },
                conv(3, 1, 1, 64),
                LayerSpec::MaxPool { k: 2, stride: 2, pad: 0 },
            ],
        )
        .unwrap();
        let io = net.layer_io().unwrap();
        assert_eq!(io[1].input.kind, ElemKind::Uint8);
        assert_eq!(io[1].output.shape, Shape::new(32, 32, 64));
        assert_eq!(io[2].output.shape, Shape::new(16, 16, 64));
        assert_eq!(io[2].output.kind, ElemKind::Code(2));
    }

    #[test]
    fn resblock_needs_proj_on_shape_change() {
        let layers = vec![
            LayerSpec::Input { h: 8, w: 8, c: 4, bits: 2 },
            LayerSpec::ResBlock { out: 8, stride: 2, d: 1.0, proj: false },
        ];
        assert!(matches!(
            NetworkSpec::new("t", 2, layers),
            Err(NetError::Shape { layer: 1, .. })
        ));
    }

    #[test]
    fn avgpool_reads_block_sum() {
        let net = NetworkSpec::new(
            "t",
            2,
            vec![
                LayerSpec::Input { h: 4, w: 4, c: 2, bits: 2 },
                LayerSpec::ResBlock { out: 2, stride: 1, d: 1.0, proj: false },
                LayerSpec::AvgPool { k: 4, stride: 1 },
            ],
        )
        .unwrap();
        let io = net.layer_io().unwrap();
        assert_eq!(io[2].input.kind, ElemKind::Accum);
        assert_eq!(net.output().unwrap().shape, Shape::new(1, 1, 2));
    }

    #[test]
    fn bad_window_is_reported() {
        let layers = vec![LayerSpec::Input { h: 2, w: 2, c: 1, bits: 2 }, conv(3, 1, 0, 1)];
        assert!(NetworkSpec::new("t", 2, layers).is_err());
    }
}
