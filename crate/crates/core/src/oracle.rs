//! Dense nested-loop reference inference.
//!
//! Everything here works on whole tensors with plain integer loops and the
//! unfolded batch-norm-then-quantize definition, independent of the
//! streaming kernels and of threshold folding.

use crate::netdesc::{LayerParams, LayerSpec, NetworkParams, NetworkSpec, Quantizer};
use crate::quant::{batch_norm, quantize_reference, WeightBlock};
use crate::stream::PixelStream;
use crate::OracleError;

/// Feature map with channel-fastest layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseTensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<i32>,
}

impl DenseTensor {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<i32>) -> Result<Self, OracleError> {
        if data.len() != h * w * c {
            return Err(OracleError::Shape(format!(
                "{h}x{w}x{c} tensor needs {} values, got {}",
                h * w * c,
                data.len()
            )));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0; h * w * c],
        }
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> i32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: i32) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    /// Value at a possibly out-of-range coordinate in the padded frame.
    fn padded(&self, y: isize, x: isize, ch: usize, pad_value: i32) -> i32 {
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            pad_value
        } else {
            self.get(y as usize, x as usize, ch)
        }
    }
}

impl From<&PixelStream> for DenseTensor {
    fn from(s: &PixelStream) -> Self {
        let sh = s.shape();
        Self {
            h: sh.h,
            w: sh.w,
            c: sh.c,
            data: s.data().to_vec(),
        }
    }
}

fn window_dims(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize, OracleError> {
    if stride == 0 || n + 2 * pad < k {
        return Err(OracleError::Shape(format!("window k={k} s={stride} p={pad} over {n}")));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

/// Cross-correlation with ±1 weights and explicit padding.
pub fn dense_conv(
    input: &DenseTensor,
    weights: &WeightBlock,
    stride: usize,
    pad: usize,
    pad_value: i32,
) -> Result<DenseTensor, OracleError> {
    let k = weights.k();
    if weights.in_ch() != input.c {
        return Err(OracleError::Shape(format!(
            "weights expect {} channels, input has {}",
            weights.in_ch(),
            input.c
        )));
    }
    let oh = window_dims(input.h, k, stride, pad)?;
    let ow = window_dims(input.w, k, stride, pad)?;
    let mut out = DenseTensor::zeros(oh, ow, weights.out_ch());
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..weights.out_ch() {
                let mut acc: i64 = 0;
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        let x = (ox * stride + kx) as isize - pad as isize;
                        for i in 0..input.c {
                            let v = input.padded(y, x, i, pad_value) as i64;
                            acc += weights.weight(o, ky, kx, i) as i64 * v;
                        }
                    }
                }
                out.set(oy, ox, o, acc as i32);
            }
        }
    }
    Ok(out)
}

/// Channelwise max; padded positions are ignored.
pub fn dense_maxpool(input: &DenseTensor, k: usize, stride: usize, pad: usize) -> Result<DenseTensor, OracleError> {
    let oh = window_dims(input.h, k, stride, pad)?;
    let ow = window_dims(input.w, k, stride, pad)?;
    let mut out = DenseTensor::zeros(oh, ow, input.c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..input.c {
                let mut best: Option<i32> = None;
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        let x = (ox * stride + kx) as isize - pad as isize;
                        if y >= 0 && x >= 0 && (y as usize) < input.h && (x as usize) < input.w {
                            let v = input.get(y as usize, x as usize, ch);
                            best = Some(best.map_or(v, |b| b.max(v)));
                        }
                    }
                }
                let best = best.ok_or_else(|| OracleError::Shape("max pool window entirely in padding".into()))?;
                out.set(oy, ox, ch, best);
            }
        }
    }
    Ok(out)
}

/// Integer division rounding half away from zero.
pub fn round_div(sum: i64, n: i64) -> i64 {
    let q = sum.abs() / n;
    let r = sum.abs() % n;
    let q = if 2 * r >= n { q + 1 } else { q };
    if sum < 0 {
        -q
    } else {
        q
    }
}

/// Channelwise mean over `k×k` windows, rounded half away from zero.
pub fn dense_avgpool(input: &DenseTensor, k: usize, stride: usize) -> Result<DenseTensor, OracleError> {
    let oh = window_dims(input.h, k, stride, 0)?;
    let ow = window_dims(input.w, k, stride, 0)?;
    let mut out = DenseTensor::zeros(oh, ow, input.c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..input.c {
                let mut sum = 0i64;
                for ky in 0..k {
                    for kx in 0..k {
                        sum += input.get(oy * stride + ky, ox * stride + kx, ch) as i64;
                    }
                }
                out.set(oy, ox, ch, round_div(sum, (k * k) as i64) as i32);
            }
        }
    }
    Ok(out)
}

/// Matrix-vector product over the flattened input.
pub fn dense_fc(input: &DenseTensor, weights: &WeightBlock) -> Result<DenseTensor, OracleError> {
    if weights.k() != 1 || weights.in_ch() != input.data.len() {
        return Err(OracleError::Shape(format!(
            "fc weights take {} inputs, tensor has {}",
            weights.in_ch(),
            input.data.len()
        )));
    }
    let mut out = DenseTensor::zeros(1, 1, weights.out_ch());
    for o in 0..weights.out_ch() {
        let acc: i64 = input
            .data
            .iter()
            .enumerate()
            .map(|(j, &v)| weights.sign(o, j) as i64 * v as i64)
            .sum();
        out.data[o] = acc as i32;
    }
    Ok(out)
}

/// Batch norm followed by the uniform quantizer, per channel.
pub fn dense_bn_quantize(input: &DenseTensor, q: &Quantizer) -> DenseTensor {
    let mut out = input.clone();
    for (idx, v) in out.data.iter_mut().enumerate() {
        let p = &q.bn[idx % input.c];
        *v = quantize_reference(batch_norm(*v as f64, p), q.d, q.bits).code() as i32;
    }
    out
}

/// Fails if any value does not fit a signed 16-bit accumulator.
pub fn check_accum16(t: &DenseTensor, layer: usize) -> Result<(), OracleError> {
    match t.data.iter().find(|&&v| v < i16::MIN as i32 || v > i16::MAX as i32) {
        Some(&v) => Err(OracleError::Overflow { layer, value: v as i64 }),
        None => Ok(()),
    }
}

fn add(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor, OracleError> {
    if (a.h, a.w, a.c) != (b.h, b.w, b.c) {
        return Err(OracleError::Shape("residual operands differ in shape".into()));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(DenseTensor { data, ..*a })
}

/// Result of a dense inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inference {
    pub output: DenseTensor,
    /// Index of the first maximum of the output.
    pub class: usize,
}

pub fn argmax(values: &[i32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the whole network layer by layer.
pub fn dense_infer(spec: &NetworkSpec, params: &NetworkParams, image: &DenseTensor) -> Result<Inference, OracleError> {
    let io = spec.layer_io().map_err(|e| OracleError::Params(e.to_string()))?;
    if params.layers.len() != spec.layers.len() {
        return Err(OracleError::Params(format!(
            "{} parameter entries for {} layers",
            params.layers.len(),
            spec.layers.len()
        )));
    }
    let inp = io[0].input.shape;
    if (image.h, image.w, image.c) != (inp.h, inp.w, inp.c) {
        return Err(OracleError::Shape(format!(
            "image is {}x{}x{}, network expects {inp}",
            image.h, image.w, image.c
        )));
    }
    let missing = |layer: usize| OracleError::Params(format!("layer {layer} has no matching parameters"));
    let mut reg = image.clone();
    let mut skip: Option<DenseTensor> = None;
    for (idx, layer) in spec.layers.iter().enumerate().skip(1) {
        let p = &params.layers[idx];
        match (*layer, p) {
            (LayerSpec::Conv(c), LayerParams::Conv(cp)) => {
                let acc = dense_conv(&reg, &cp.weights, c.stride, c.pad, 0)?;
                reg = match &cp.act {
                    Some(q) => dense_bn_quantize(&acc, q),
                    None => {
                        check_accum16(&acc, idx)?;
                        acc
                    }
                };
                skip = None;
            }
            (LayerSpec::Fc(_), LayerParams::Conv(cp)) => {
                let acc = dense_fc(&reg, &cp.weights)?;
                reg = match &cp.act {
                    Some(q) => dense_bn_quantize(&acc, q),
                    None => {
                        check_accum16(&acc, idx)?;
                        acc
                    }
                };
                skip = None;
            }
            (LayerSpec::MaxPool { k, stride, pad }, LayerParams::Empty) => {
                reg = dense_maxpool(&reg, k, stride, pad)?;
                skip = None;
            }
            (LayerSpec::AvgPool { k, stride }, LayerParams::Empty) => {
                let src = skip.take().unwrap_or(reg);
                reg = dense_avgpool(&src, k, stride)?;
                check_accum16(&reg, idx)?;
            }
            (LayerSpec::ResBlock { stride, .. }, LayerParams::Block(b)) => {
                let a = dense_bn_quantize(&dense_conv(&reg, &b.conv_a, stride, 1, 0)?, &b.act_a);
                let main = dense_conv(&a, &b.conv_b, 1, 1, 0)?;
                check_accum16(&main, idx)?;
                let shortcut = match &b.proj {
                    Some(w) => {
                        let s = dense_conv(&reg, w, stride, 0, 0)?;
                        check_accum16(&s, idx)?;
                        s
                    }
                    None => skip.take().unwrap_or_else(|| reg.clone()),
                };
                check_accum16(&shortcut, idx)?;
                let sum = add(&main, &shortcut)?;
                check_accum16(&sum, idx)?;
                reg = dense_bn_quantize(&sum, &b.sum);
                skip = Some(sum);
            }
            _ => return Err(missing(idx)),
        }
    }
    let output = match spec.layers.last() {
        Some(LayerSpec::ResBlock { .. }) => skip.expect("block sets skip"),
        _ => reg,
    };
    let class = argmax(&output.data);
    Ok(Inference { output, class })
}
