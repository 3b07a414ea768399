use serde::{Deserialize, Serialize};

use super::bits::ActCode;
use super::check_bits;
use crate::QuantError;

/// Per-channel batch normalization parameters.
///
/// `BatchNorm(a) = gamma · (a − mu) · inv_std + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub gamma: f64,
    pub mu: f64,
    pub inv_std: f64,
    pub beta: f64,
}

impl BnParams {
    pub fn new(gamma: f64, mu: f64, inv_std: f64, beta: f64) -> Result<Self, QuantError> {
        let p = Self {
            gamma,
            mu,
            inv_std,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), QuantError> {
        if ![self.gamma, self.mu, self.inv_std, self.beta]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(QuantError::NonFinite("batch-norm parameter"));
        }
        if self.scale() == 0.0 {
            return Err(QuantError::DegenerateChannel);
        }
        Ok(())
    }

    /// `gamma · inv_std`, the slope of the normalization.
    pub fn scale(&self) -> f64 {
        self.gamma * self.inv_std
    }
}

pub fn batch_norm(a: f64, p: &BnParams) -> f64 {
    p.gamma * (a - p.mu) * p.inv_std + p.beta
}

/// Uniform n-bit activation over `[0, 2ⁿ·d)`: `clamp(floor(y/d), 0, 2ⁿ−1)`.
pub fn quantize_reference(y: f64, d: f64, bits: u8) -> ActCode {
    debug_assert!(d > 0.0);
    let max = ActCode::max_code(bits);
    let level = (y / d).floor();
    let code = if level.is_nan() || level <= 0.0 {
        0
    } else if level >= max as f64 {
        max
    } else {
        level as u32
    };
    ActCode::new(code, bits).expect("clamped code fits")
}

// Thresholds further out than this are saturated instead of snapped.
const EXACT_LIMIT: f64 = (1u64 << 52) as f64;
const SATURATED: i64 = 1 << 62;

/// Folded batch-norm plus n-bit activation for one output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelThresholds {
    tau: f64,
    step: f64,
    ascending: bool,
    bits: u8,
    /// Integer thresholds, non-decreasing. For an ascending channel entry
    /// `α−1` is the smallest accumulator reaching code `α`; for a descending
    /// one the list is reversed and holds the largest accumulator reaching
    /// each code.
    levels: Vec<i64>,
}

impl ChannelThresholds {
    /// Point where the normalized value crosses zero.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Accumulator distance between consecutive range endpoints, `d/(γ·i)`.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn ascending(&self) -> bool {
        self.ascending
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> &[i64] {
        &self.levels
    }

    /// Real endpoints `τ + α·step` for `α = 1..2ⁿ−1`, sorted ascending.
    pub fn real_thresholds(&self) -> Vec<f64> {
        let n = ActCode::max_code(self.bits) as usize;
        let mut t: Vec<f64> = (1..=n).map(|a| self.tau + a as f64 * self.step).collect();
        if !self.ascending {
            t.reverse();
        }
        t
    }

    /// Code for accumulator `a`; see [`apply_threshold`].
    pub fn code(&self, a: i64) -> u8 {
        let n = self.levels.len();
        let c = if self.ascending {
            self.levels.partition_point(|&t| t <= a)
        } else {
            n - self.levels.partition_point(|&t| t < a)
        };
        c as u8
    }
}

/// Folds batch normalization and an n-bit uniform activation with range size
/// `d` into per-channel thresholds.
///
/// Thresholds are computed in `f64` as `τ + α·d/(γ·i)` and then snapped to the
/// integer accumulator where the normalized value first reaches `α·d`, so
/// that comparing integer accumulators reproduces normalize-then-quantize
/// exactly.
pub fn fold_batchnorm(p: &BnParams, d: f64, bits: u8) -> Result<ChannelThresholds, QuantError> {
    check_bits(bits)?;
    p.validate()?;
    if !(d.is_finite() && d > 0.0) {
        return Err(QuantError::InvalidRange(d));
    }
    let scale = p.scale();
    let tau = p.mu - p.beta / scale;
    let step = d / scale;
    let ascending = scale > 0.0;
    let n = ActCode::max_code(bits);
    let reaches = |a: i64, alpha: u32| batch_norm(a as f64, p) / d >= alpha as f64;

    let mut levels = Vec::with_capacity(n as usize);
    for alpha in 1..=n {
        let t = tau + alpha as f64 * step;
        let level = if t.is_nan() {
            return Err(QuantError::NonFinite("threshold"));
        } else if t >= EXACT_LIMIT {
            SATURATED
        } else if t <= -EXACT_LIMIT {
            -SATURATED
        } else if ascending {
            let mut x = t.ceil() as i64;
            for _ in 0..64 {
                if reaches(x - 1, alpha) {
                    x -= 1;
                } else if !reaches(x, alpha) {
                    x += 1;
                } else {
                    break;
                }
            }
            x
        } else {
            let mut x = t.floor() as i64;
            for _ in 0..64 {
                if reaches(x + 1, alpha) {
                    x += 1;
                } else if !reaches(x, alpha) {
                    x -= 1;
                } else {
                    break;
                }
            }
            x
        };
        levels.push(level);
    }
    if !ascending {
        levels.reverse();
    }
    Ok(ChannelThresholds {
        tau,
        step,
        ascending,
        bits,
        levels,
    })
}

/// Activation code for accumulator `a`: the number of thresholds at or below
/// `a` (ascending) or at or above it (descending). An accumulator equal to a
/// threshold gets the higher code.
pub fn apply_threshold(a: i64, ts: &ChannelThresholds) -> ActCode {
    ActCode::new(ts.code(a) as u32, ts.bits).expect("code bounded by threshold count")
}

/// Thresholds for every output channel of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    bits: u8,
    channels: Vec<ChannelThresholds>,
}

impl ThresholdSet {
    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channel(&self, o: usize) -> &ChannelThresholds {
        &self.channels[o]
    }

    pub fn code(&self, o: usize, a: i64) -> u8 {
        self.channels[o].code(a)
    }
}

pub fn fold_layer(params: &[BnParams], d: f64, bits: u8) -> Result<ThresholdSet, QuantError> {
    let channels = params
        .iter()
        .map(|p| fold_batchnorm(p, d, bits))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ThresholdSet { bits, channels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn(gamma: f64, mu: f64, inv_std: f64, beta: f64) -> BnParams {
        BnParams::new(gamma, mu, inv_std, beta).unwrap()
    }

    #[test]
    fn identity_normalization_tau() {
        let ts = fold_batchnorm(&bn(1.0, 10.0, 1.0, 0.0), 1.0, 2).unwrap();
        assert_eq!(ts.tau(), 10.0);
    }

    #[test]
    fn worked_fold() {
        // tau = 10 - (-3)/(2*0.5) = 13, step = 4/1 = 4
        let ts = fold_batchnorm(&bn(2.0, 10.0, 0.5, -3.0), 4.0, 2).unwrap();
        assert_eq!(ts.tau(), 13.0);
        assert_eq!(ts.real_thresholds(), vec![17.0, 21.0, 25.0]);
        assert_eq!(ts.levels(), &[17, 21, 25]);
        assert!(ts.ascending());
    }

    #[test]
    fn apply_examples() {
        let ts = fold_batchnorm(&bn(2.0, 10.0, 0.5, -3.0), 4.0, 2).unwrap();
        assert_eq!(apply_threshold(-100, &ts).code(), 0);
        assert_eq!(apply_threshold(16, &ts).code(), 0);
        assert_eq!(apply_threshold(17, &ts).code(), 1);
        assert_eq!(apply_threshold(18, &ts).code(), 1);
        assert_eq!(apply_threshold(21, &ts).code(), 2);
        assert_eq!(apply_threshold(1000, &ts).code(), 3);
    }

    #[test]
    fn boundary_agrees_with_reference() {
        let p = bn(2.0, 10.0, 0.5, -3.0);
        let ts = fold_batchnorm(&p, 4.0, 2).unwrap();
        for a in 0..40 {
            let expect = quantize_reference(batch_norm(a as f64, &p), 4.0, 2);
            assert_eq!(apply_threshold(a, &ts), expect, "a = {a}");
        }
    }

    #[test]
    fn negative_scale_inverts() {
        let p = bn(-2.0, 10.0, 0.5, 5.0);
        let ts = fold_batchnorm(&p, 1.0, 2).unwrap();
        assert!(!ts.ascending());
        for a in -20..40 {
            let expect = quantize_reference(batch_norm(a as f64, &p), 1.0, 2);
            assert_eq!(apply_threshold(a, &ts), expect, "a = {a}");
        }
    }

    #[test]
    fn reference_quantizer_examples() {
        assert_eq!(quantize_reference(-1.0, 3.0, 2).code(), 0);
        assert_eq!(quantize_reference(4.0 * 3.0 + 5.0, 3.0, 2).code(), 3);
        assert_eq!(quantize_reference(9.5, 4.0, 2).code(), 2);
    }

    #[test]
    fn degenerate_and_invalid_range() {
        let p = BnParams {
            gamma: 0.0,
            mu: 0.0,
            inv_std: 1.0,
            beta: 0.0,
        };
        assert_eq!(fold_batchnorm(&p, 1.0, 2), Err(QuantError::DegenerateChannel));
        assert!(BnParams::new(1.0, 0.0, 0.0, 0.0).is_err());
        let ok = bn(1.0, 0.0, 1.0, 0.0);
        assert_eq!(fold_batchnorm(&ok, 0.0, 2), Err(QuantError::InvalidRange(0.0)));
        assert_eq!(fold_batchnorm(&ok, -1.0, 2), Err(QuantError::InvalidRange(-1.0)));
        assert_eq!(fold_batchnorm(&ok, 1.0, 0), Err(QuantError::BitWidth(0)));
    }

    #[test]
    fn scaling_gamma_and_beta_keeps_tau() {
        let p = bn(0.7, 3.25, 1.9, -0.4);
        let base = fold_batchnorm(&p, 1.0, 2).unwrap().tau();
        for c in [0.1, 2.0, 17.5] {
            let scaled = bn(p.gamma * c, p.mu, p.inv_std, p.beta * c);
            let tau = fold_batchnorm(&scaled, 1.0, 2).unwrap().tau();
            assert!((tau - base).abs() <= 1e-12 * base.abs().max(1.0));
        }
    }

    #[test]
    fn huge_steps_saturate() {
        let p = bn(1e-30, 0.0, 1.0, 0.0);
        let ts = fold_batchnorm(&p, 1.0, 2).unwrap();
        assert_eq!(apply_threshold(i32::MAX as i64, &ts).code(), 0);
    }
}
