//! Quantized arithmetic: packed ±1 weights, bit-plane popcount dot products
//! and batch-norm threshold folding.

mod bits;
mod threshold;
mod weights;

pub use bits::{plane_dot, quantized_dot, xnor_dot, Accum, ActCode, BitPlanes, PackedBits};
pub(crate) use bits::plane_dot_words;
pub use threshold::{
    apply_threshold, batch_norm, fold_batchnorm, fold_layer, quantize_reference, BnParams,
    ChannelThresholds, ThresholdSet,
};
pub use weights::{binarize_weights, FilterTensor, WeightBlock};

/// Largest supported activation bit-width.
pub const MAX_ACT_BITS: u8 = 8;

pub(crate) fn check_bits(bits: u8) -> Result<(), crate::QuantError> {
    if (1..=MAX_ACT_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(crate::QuantError::BitWidth(bits))
    }
}
