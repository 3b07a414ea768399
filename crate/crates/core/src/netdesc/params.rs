use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerSpec, NetworkSpec};
use crate::quant::{binarize_weights, fold_layer, BnParams, FilterTensor, ThresholdSet, WeightBlock};
use crate::stream::ElemKind;
use crate::{NetError, QuantError};

pub const BLOB_MAGIC: &[u8; 4] = b"QNNP";
pub const BLOB_VERSION: u32 = 1;
const HEADER_BYTES: usize = 12;

/// One block of floats in a layer's payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    /// `out_ch·k·k·in_ch` weights in cache order.
    Weights { k: usize, in_ch: usize, out_ch: usize },
    /// `gamma`, `mu`, `inv_std` and `beta` arrays of `channels` floats each.
    BatchNorm { channels: usize },
}

impl Segment {
    pub fn floats(&self) -> usize {
        match *self {
            Segment::Weights { k, in_ch, out_ch } => k * k * in_ch * out_ch,
            Segment::BatchNorm { channels } => 4 * channels,
        }
    }
}

/// Payload layout of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCensus {
    pub layer: usize,
    pub segments: Vec<Segment>,
}

impl LayerCensus {
    pub fn floats(&self) -> usize {
        self.segments.iter().map(Segment::floats).sum()
    }
}

/// Payload layout of every parameterized layer, in network order.
pub fn census(spec: &NetworkSpec) -> Result<Vec<LayerCensus>, NetError> {
    let io = spec.layer_io()?;
    let mut out = Vec::new();
    for (idx, layer) in spec.layers.iter().enumerate() {
        let input = io[idx].input.shape;
        let segments = match *layer {
            LayerSpec::Conv(c) => {
                let mut s = vec![Segment::Weights {
                    k: c.k,
                    in_ch: input.c,
                    out_ch: c.out,
                }];
                if spec.act_width(c.act).is_some() {
                    s.push(Segment::BatchNorm { channels: c.out });
                }
                s
            }
            LayerSpec::Fc(f) => {
                let mut s = vec![Segment::Weights {
                    k: 1,
                    in_ch: input.len(),
                    out_ch: f.out,
                }];
                if spec.act_width(f.act).is_some() {
                    s.push(Segment::BatchNorm { channels: f.out });
                }
                s
            }
            LayerSpec::ResBlock { out, proj, .. } => {
                let mut s = vec![
                    Segment::Weights {
                        k: 3,
                        in_ch: input.c,
                        out_ch: out,
                    },
                    Segment::BatchNorm { channels: out },
                    Segment::Weights {
                        k: 3,
                        in_ch: out,
                        out_ch: out,
                    },
                    Segment::BatchNorm { channels: out },
                ];
                if proj {
                    s.push(Segment::Weights {
                        k: 1,
                        in_ch: input.c,
                        out_ch: out,
                    });
                }
                s
            }
            _ => continue,
        };
        out.push(LayerCensus { layer: idx, segments });
    }
    Ok(out)
}

/// Unprocessed parameter file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct RawParams {
    /// Range size of each parameterized layer.
    pub ranges: Vec<f32>,
    /// Payload floats of each parameterized layer.
    pub layers: Vec<Vec<f32>>,
}

/// Serializes parameters into the little-endian blob format.
pub fn write_params(raw: &RawParams) -> Vec<u8> {
    let floats: usize = raw.layers.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * (raw.ranges.len() + floats));
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(raw.ranges.len() as u32).to_le_bytes());
    for v in raw.ranges.iter().chain(raw.layers.iter().flatten()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn mean_square(kind: ElemKind) -> f64 {
    match kind {
        ElemKind::Code(n) => {
            let top = ((1u32 << n) - 1) as f64;
            top * (2.0 * top + 1.0) / 6.0
        }
        ElemKind::Uint8 => 255.0 * 511.0 / 6.0,
        ElemKind::Accum => 2500.0,
    }
}

/// Random parameters whose batch norms spread accumulators across the
/// activation levels. The same seed always gives the same parameters.
pub fn random_params(spec: &NetworkSpec, seed: u64) -> Result<RawParams, NetError> {
    let io = spec.layer_io()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = RawParams {
        ranges: Vec::new(),
        layers: Vec::new(),
    };
    for entry in census(spec)? {
        let layer = &spec.layers[entry.layer];
        let d = layer.range().expect("census only lists parameterized layers");
        let bits = match *layer {
            LayerSpec::Conv(c) => spec.act_width(c.act),
            LayerSpec::Fc(f) => spec.act_width(f.act),
            _ => Some(spec.act_bits),
        }
        .unwrap_or(spec.act_bits);
        let in_kind = io[entry.layer].input.kind;
        let mut floats = Vec::with_capacity(entry.floats());
        let mut spread = 1.0;
        for seg in &entry.segments {
            match *seg {
                Segment::Weights { k, in_ch, .. } => {
                    let kind = if floats.is_empty() { in_kind } else { ElemKind::Code(bits) };
                    spread = ((k * k * in_ch) as f64 * mean_square(kind)).sqrt().max(1.0);
                    floats.extend((0..seg.floats()).map(|_| rng.gen_range(-1.0f32..1.0)));
                }
                Segment::BatchNorm { channels } => {
                    let levels = (1u32 << bits) as f64;
                    let mut arrays = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
                    for _ in 0..channels {
                        let sign = if rng.gen_bool(0.8) { 1.0 } else { -1.0 };
                        arrays[0].push((sign * d * rng.gen_range(1.0..2.0)) as f32);
                        arrays[1].push((spread * rng.gen_range(-0.3..0.3)) as f32);
                        arrays[2].push((rng.gen_range(0.8..1.25) / spread) as f32);
                        arrays[3].push((d * levels / 2.0 * rng.gen_range(0.7..1.3)) as f32);
                    }
                    floats.extend(arrays.into_iter().flatten());
                }
            }
        }
        raw.ranges.push(d as f32);
        raw.layers.push(floats);
    }
    Ok(raw)
}

/// Batch norm of one layer together with its folded thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    pub d: f64,
    pub bits: u8,
    pub bn: Vec<BnParams>,
    pub thresholds: Arc<ThresholdSet>,
}

impl Quantizer {
    pub fn new(bn: Vec<BnParams>, d: f64, bits: u8) -> Result<Self, QuantError> {
        let thresholds = Arc::new(fold_layer(&bn, d, bits)?);
        Ok(Self {
            d,
            bits,
            bn,
            thresholds,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Arc<WeightBlock>,
    /// `None` for a linear layer.
    pub act: Option<Quantizer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub conv_a: Arc<WeightBlock>,
    pub act_a: Quantizer,
    pub conv_b: Arc<WeightBlock>,
    /// Activation applied to the block sum.
    pub sum: Quantizer,
    pub proj: Option<Arc<WeightBlock>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Empty,
    Conv(ConvParams),
    Block(BlockParams),
}

/// Loaded parameters, one entry per network layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    /// Mutable access to the first weight block, for fault injection.
    pub fn first_weights_mut(&mut self) -> Option<&mut WeightBlock> {
        self.layers.iter_mut().find_map(|l| match l {
            LayerParams::Conv(c) => Some(Arc::make_mut(&mut c.weights)),
            LayerParams::Block(b) => Some(Arc::make_mut(&mut b.conv_a)),
            LayerParams::Empty => None,
        })
    }
}

struct Reader<'a> {
    floats: &'a [f32],
    pos: usize,
    layer: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[f32], NetError> {
        let s = &self.floats[self.pos..self.pos + n];
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(NetError::NonFinite {
                layer: self.layer,
                offset: self.pos + i,
            });
        }
        self.pos += n;
        Ok(s)
    }

    fn weights(&mut self, seg: Segment) -> Result<Arc<WeightBlock>, NetError> {
        let Segment::Weights { k, in_ch, out_ch } = seg else {
            unreachable!("census order")
        };
        let data = self.take(seg.floats())?.to_vec();
        let layer = self.layer;
        let q = |source| NetError::Quant { layer, source };
        let tensor = FilterTensor::new(k, in_ch, out_ch, data).map_err(q)?;
        Ok(Arc::new(binarize_weights(&tensor).map_err(q)?))
    }

    fn quantizer(&mut self, seg: Segment, d: f64, bits: u8) -> Result<Quantizer, NetError> {
        let Segment::BatchNorm { channels } = seg else {
            unreachable!("census order")
        };
        let s = self.take(seg.floats())?;
        let mut bn = Vec::with_capacity(channels);
        for ch in 0..channels {
            let v = |a: usize| s[a * channels + ch] as f64;
            let p = BnParams {
                gamma: v(0),
                mu: v(1),
                inv_std: v(2),
                beta: v(3),
            };
            if p.scale() == 0.0 {
                return Err(NetError::DegenerateChannel {
                    layer: self.layer,
                    channel: ch,
                });
            }
            bn.push(p);
        }
        Quantizer::new(bn, d, bits).map_err(|source| NetError::Quant {
            layer: self.layer,
            source,
        })
    }
}

fn read_u32(blob: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(blob[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a parameter blob for `spec`: binarizes weights and folds every
/// batch norm into thresholds.
pub fn load_params(blob: &[u8], spec: &NetworkSpec) -> Result<NetworkParams, NetError> {
    let layout = census(spec)?;
    if blob.len() < HEADER_BYTES || &blob[..4] != BLOB_MAGIC {
        return Err(NetError::Blob("missing QNNP header".into()));
    }
    let version = read_u32(blob, 4);
    if version != BLOB_VERSION {
        return Err(NetError::Blob(format!("unsupported version {version}")));
    }
    let count = read_u32(blob, 8) as usize;
    if count != layout.len() {
        return Err(NetError::Blob(format!(
            "header lists {count} parameterized layers, network has {}",
            layout.len()
        )));
    }
    let payload: usize = layout.iter().map(LayerCensus::floats).sum();
    let expected = HEADER_BYTES + 4 * (count + payload);
    if blob.len() != expected {
        return Err(NetError::BlobLength {
            expected,
            actual: blob.len(),
        });
    }
    let floats: Vec<f32> = blob[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let (ranges, payload) = floats.split_at(count);

    let mut layers = vec![LayerParams::Empty; spec.layers.len()];
    let mut offset = 0;
    for (entry, &header_d) in layout.iter().zip(ranges) {
        let layer = &spec.layers[entry.layer];
        let spec_d = layer.range().expect("parameterized layer");
        if !header_d.is_finite() || header_d != spec_d as f32 {
            return Err(NetError::RangeMismatch {
                layer: entry.layer,
                header: header_d as f64,
                spec: spec_d,
            });
        }
        let d = header_d as f64;
        let mut r = Reader {
            floats: &payload[offset..offset + entry.floats()],
            pos: 0,
            layer: entry.layer,
        };
        let segs = &entry.segments;
        layers[entry.layer] = match *layer {
            LayerSpec::Conv(_) | LayerSpec::Fc(_) => {
                let act = match *layer {
                    LayerSpec::Conv(c) => spec.act_width(c.act),
                    LayerSpec::Fc(f) => spec.act_width(f.act),
                    _ => unreachable!(),
                };
                let weights = r.weights(segs[0])?;
                let act = match act {
                    Some(bits) => Some(r.quantizer(segs[1], d, bits)?),
                    None => None,
                };
                LayerParams::Conv(ConvParams { weights, act })
            }
            LayerSpec::ResBlock { .. } => {
                let bits = spec.act_bits;
                let conv_a = r.weights(segs[0])?;
                let act_a = r.quantizer(segs[1], d, bits)?;
                let conv_b = r.weights(segs[2])?;
                let sum = r.quantizer(segs[3], d, bits)?;
                let proj = match segs.get(4) {
                    Some(&seg) => Some(r.weights(seg)?),
                    None => None,
                };
                LayerParams::Block(BlockParams {
                    conv_a,
                    act_a,
                    conv_b,
                    sum,
                    proj,
                })
            }
            _ => unreachable!("census only lists parameterized layers"),
        };
        offset += entry.floats();
    }
    Ok(NetworkParams { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdesc::parse_netdesc;

    fn tiny() -> NetworkSpec {
        parse_netdesc("input 4 4 1 2\nconv k=3 o=1 d=2\n").unwrap()
    }

    fn blob_for(spec: &NetworkSpec, weights: Vec<f32>, bn: [f32; 4]) -> Vec<u8> {
        let mut layer = weights;
        layer.extend_from_slice(&bn);
        write_params(&RawParams {
            ranges: vec![spec.layers[1].range().unwrap() as f32],
            layers: vec![layer],
        })
    }

    #[test]
    fn census_counts_weights_and_bn() {
        let c = census(&tiny()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].floats(), 9 + 4);
    }

    #[test]
    fn positive_weights_load_as_ones() {
        let spec = tiny();
        let params = load_params(&blob_for(&spec, vec![0.25; 9], [1.0, 0.0, 1.0, 0.0]), &spec).unwrap();
        let LayerParams::Conv(c) = &params.layers[1] else { panic!() };
        assert_eq!(c.weights.entry(0).count_ones(), 9);
        assert_eq!(c.act.as_ref().unwrap().thresholds.channel(0).levels(), &[2, 4, 6]);
    }

    #[test]
    fn truncated_blob_is_length_error() {
        let spec = tiny();
        let blob = blob_for(&spec, vec![0.25; 9], [1.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            load_params(&blob[..blob.len() - 4], &spec),
            Err(NetError::BlobLength {
                expected: blob.len(),
                actual: blob.len() - 4
            })
        );
        let mut long = blob.clone();
        long.extend_from_slice(&[0; 4]);
        assert!(matches!(load_params(&long, &spec), Err(NetError::BlobLength { .. })));
    }

    #[test]
    fn nan_and_degenerate_rejected() {
        let spec = tiny();
        let mut w = vec![0.25; 9];
        w[4] = f32::NAN;
        assert_eq!(
            load_params(&blob_for(&spec, w, [1.0, 0.0, 1.0, 0.0]), &spec),
            Err(NetError::NonFinite { layer: 1, offset: 4 })
        );
        assert_eq!(
            load_params(&blob_for(&spec, vec![1.0; 9], [0.0, 0.0, 1.0, 0.0]), &spec),
            Err(NetError::DegenerateChannel { layer: 1, channel: 0 })
        );
    }

    #[test]
    fn header_range_must_match() {
        let spec = tiny();
        let mut raw = random_params(&spec, 1).unwrap();
        raw.ranges[0] = 3.0;
        assert!(matches!(
            load_params(&write_params(&raw), &spec),
            Err(NetError::RangeMismatch { layer: 1, .. })
        ));
    }

    #[test]
    fn random_params_round_trip() {
        let spec = parse_netdesc(
            "input 8 8 3 8\nconv k=3 p=1 o=4 d=1\nresblock o=8 s=2 d=1 proj\nfc o=5 d=1 act=none\n",
        )
        .unwrap();
        let raw = random_params(&spec, 9).unwrap();
        assert_eq!(raw, random_params(&spec, 9).unwrap());
        let params = load_params(&write_params(&raw), &spec).unwrap();
        assert!(matches!(params.layers[2], LayerParams::Block(BlockParams { proj: Some(_), .. })));
        let LayerParams::Conv(fc) = &params.layers[3] else { panic!() };
        assert!(fc.act.is_none());
        assert_eq!(fc.weights.in_ch(), 4 * 4 * 8);
    }
}
