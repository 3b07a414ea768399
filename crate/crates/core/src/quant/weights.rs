use super::bits::PackedBits;
use crate::QuantError;

/// Real-valued filter tensor in weight-cache order: output channel outermost,
/// then kernel row, kernel column and input channel (fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTensor {
    k: usize,
    in_ch: usize,
    out_ch: usize,
    data: Vec<f32>,
}

impl FilterTensor {
    pub fn new(k: usize, in_ch: usize, out_ch: usize, data: Vec<f32>) -> Result<Self, QuantError> {
        if k == 0 || in_ch == 0 || out_ch == 0 {
            return Err(QuantError::Dimension(format!(
                "filter dims must be positive, got k={k} in={in_ch} out={out_ch}"
            )));
        }
        let expected = k * k * in_ch * out_ch;
        if data.len() != expected {
            return Err(QuantError::Dimension(format!(
                "{k}x{k}x{in_ch}x{out_ch} filter needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            k,
            in_ch,
            out_ch,
            data,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.out_ch
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, o: usize, ky: usize, kx: usize, i: usize) -> f32 {
        self.data[((o * self.k + ky) * self.k + kx) * self.in_ch + i]
    }
}

/// Binarized weight cache of one layer: `out_ch` entries, each
/// `k·k·in_ch` bits in (row, column, channel) order with the channel fastest.
/// Bit 1 encodes +1 and bit 0 encodes −1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightBlock {
    k: usize,
    in_ch: usize,
    out_ch: usize,
    entry_len: usize,
    stride: usize,
    words: Vec<u64>,
}

impl WeightBlock {
    /// Builds a block from one ±1 sign per weight, in cache order.
    pub fn from_signs(k: usize, in_ch: usize, out_ch: usize, signs: &[i8]) -> Result<Self, QuantError> {
        let entry_len = k * k * in_ch;
        if k == 0 || in_ch == 0 || out_ch == 0 || signs.len() != entry_len * out_ch {
            return Err(QuantError::Dimension(format!(
                "{k}x{k}x{in_ch}x{out_ch} block cannot take {} signs",
                signs.len()
            )));
        }
        let mut block = Self::all_negative(k, in_ch, out_ch);
        for (idx, &s) in signs.iter().enumerate() {
            if s > 0 {
                block.set(idx / entry_len, idx % entry_len, true);
            } else if s != -1 {
                return Err(QuantError::Dimension(format!("sign {s} is not ±1")));
            }
        }
        Ok(block)
    }

    fn all_negative(k: usize, in_ch: usize, out_ch: usize) -> Self {
        let entry_len = k * k * in_ch;
        let stride = entry_len.div_ceil(64);
        Self {
            k,
            in_ch,
            out_ch,
            entry_len,
            stride,
            words: vec![0; stride * out_ch],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.out_ch
    }

    /// Bits per cache entry (`k·k·in_ch`).
    pub fn entry_len(&self) -> usize {
        self.entry_len
    }

    /// Packed words of entry `o`.
    pub fn entry_words(&self, o: usize) -> &[u64] {
        &self.words[o * self.stride..(o + 1) * self.stride]
    }

    pub fn entry(&self, o: usize) -> PackedBits {
        PackedBits::from_words(self.entry_words(o).to_vec(), self.entry_len)
            .expect("entry stride matches length")
    }

    pub fn bit(&self, o: usize, j: usize) -> bool {
        self.words[o * self.stride + j / 64] >> (j % 64) & 1 == 1
    }

    /// Weight `o, j` as +1 or −1.
    pub fn sign(&self, o: usize, j: usize) -> i32 {
        if self.bit(o, j) {
            1
        } else {
            -1
        }
    }

    pub fn weight(&self, o: usize, ky: usize, kx: usize, i: usize) -> i32 {
        self.sign(o, (ky * self.k + kx) * self.in_ch + i)
    }

    fn set(&mut self, o: usize, j: usize, value: bool) {
        let w = &mut self.words[o * self.stride + j / 64];
        if value {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    /// Inverts one weight. Used to inject faults when cross-checking paths.
    pub fn flip(&mut self, o: usize, j: usize) {
        let v = self.bit(o, j);
        self.set(o, j, !v);
    }

    /// The ±1 tensor this block encodes.
    pub fn to_filter(&self) -> FilterTensor {
        let data = (0..self.out_ch)
            .flat_map(|o| (0..self.entry_len).map(move |j| (o, j)))
            .map(|(o, j)| self.sign(o, j) as f32)
            .collect();
        FilterTensor::new(self.k, self.in_ch, self.out_ch, data).expect("dims already validated")
    }
}

/// Sign-binarizes a real filter tensor. Zero maps to +1.
pub fn binarize_weights(raw: &FilterTensor) -> Result<WeightBlock, QuantError> {
    let mut block = WeightBlock::all_negative(raw.k, raw.in_ch, raw.out_ch);
    let entry_len = block.entry_len;
    for (idx, &v) in raw.data.iter().enumerate() {
        if !v.is_finite() {
            return Err(QuantError::NonFinite("weight"));
        }
        if v >= 0.0 {
            block.set(idx / entry_len, idx % entry_len, true);
        }
    }
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positive_filter_is_all_ones() {
        let raw = FilterTensor::new(3, 1, 1, vec![0.5; 9]).unwrap();
        let wb = binarize_weights(&raw).unwrap();
        assert_eq!(wb.entry(0).count_ones(), 9);
    }

    #[test]
    fn zero_binarizes_to_plus_one() {
        let raw = FilterTensor::new(1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(binarize_weights(&raw).unwrap().sign(0, 0), 1);
        let neg_zero = FilterTensor::new(1, 1, 1, vec![-0.0]).unwrap();
        assert_eq!(binarize_weights(&neg_zero).unwrap().sign(0, 0), 1);
    }

    #[test]
    fn random_tensor_matches_scalar_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..3 * 3 * 4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let raw = FilterTensor::new(3, 4, 2, data).unwrap();
        let wb = binarize_weights(&raw).unwrap();
        for o in 0..2 {
            for ky in 0..3 {
                for kx in 0..3 {
                    for i in 0..4 {
                        let expect = if raw.get(o, ky, kx, i) >= 0.0 { 1 } else { -1 };
                        assert_eq!(wb.weight(o, ky, kx, i), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn binarize_is_idempotent_under_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f32> = (0..5 * 5 * 3 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wb = binarize_weights(&FilterTensor::new(5, 3, 7, data).unwrap()).unwrap();
        assert_eq!(binarize_weights(&wb.to_filter()).unwrap(), wb);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            FilterTensor::new(3, 1, 1, vec![0.0; 8]),
            Err(QuantError::Dimension(_))
        ));
        assert!(FilterTensor::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn nan_weight_rejected() {
        let raw = FilterTensor::new(1, 1, 2, vec![1.0, f32::NAN]).unwrap();
        assert_eq!(binarize_weights(&raw), Err(QuantError::NonFinite("weight")));
    }

    #[test]
    fn entry_layout_has_channel_fastest() {
        let signs: Vec<i8> = (0..2 * 2 * 3).map(|j| if j == 4 { 1 } else { -1 }).collect();
        let wb = WeightBlock::from_signs(2, 3, 1, &signs).unwrap();
        // j = 4 is row 0, column 1, channel 1
        assert_eq!(wb.weight(0, 0, 1, 1), 1);
        assert_eq!(wb.entry(0).count_ones(), 1);
    }
}
