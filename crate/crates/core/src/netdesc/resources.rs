use std::ops::Range;

use serde::Serialize;

use super::{LayerSpec, NetworkSpec};
use crate::stream::{depth_first_capacity, ElemKind, Shape};
use crate::NetError;

/// Minimum usable depth of one block RAM.
pub const BRAM_MIN_DEPTH: usize = 512;
/// Width of one block RAM at minimum depth.
pub const BRAM_WIDTH: usize = 40;
/// Bits in one M20K block.
pub const BRAM_BLOCK_BITS: u64 = 20 * 1024;
/// Bits per batch-norm cache entry.
pub const BN_ENTRY_BITS: u64 = 64;

/// Memory needs of one weight cache with `depth` entries of `width` bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CacheUse {
    pub raw_bits: u64,
    pub granular_bits: u64,
    pub blocks: u64,
}

impl CacheUse {
    pub fn new(depth: usize, width: usize) -> Self {
        let tiers = depth.div_ceil(BRAM_MIN_DEPTH);
        Self {
            raw_bits: (depth * width) as u64,
            granular_bits: (tiers * BRAM_MIN_DEPTH * width) as u64,
            blocks: (width.div_ceil(BRAM_WIDTH) * tiers) as u64,
        }
    }

    fn add(&mut self, other: CacheUse) {
        self.raw_bits += other.raw_bits;
        self.granular_bits += other.granular_bits;
        self.blocks += other.blocks;
    }
}

/// On-chip memory estimate for one layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LayerResources {
    pub layer: usize,
    pub kind: String,
    /// Weight caches, one entry per output channel.
    pub weights: CacheUse,
    /// Batch-norm caches.
    pub bn_bits: u64,
    pub bn_blocks: u64,
    /// Line buffer flip-flops.
    pub linebuf_bits: u64,
    /// Skip-path delay buffer flip-flops.
    pub skip_bits: u64,
}

impl LayerResources {
    /// Share of the block RAM reserved for weights that holds no weight.
    pub fn weight_waste(&self) -> f64 {
        if self.weights.granular_bits == 0 {
            0.0
        } else {
            1.0 - self.weights.raw_bits as f64 / self.weights.granular_bits as f64
        }
    }

    pub fn bram_blocks(&self) -> u64 {
        self.weights.blocks + self.bn_blocks
    }

    pub fn ff_bits(&self) -> u64 {
        self.linebuf_bits + self.skip_bits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceReport {
    pub layers: Vec<LayerResources>,
    pub weight_raw_bits: u64,
    pub weight_granular_bits: u64,
    pub bn_bits: u64,
    pub linebuf_bits: u64,
    pub skip_bits: u64,
    pub bram_blocks: u64,
    /// Logic usage is not modeled.
    pub alm: &'static str,
}

impl ResourceReport {
    /// Block RAM capacity in bits occupied by the allocated blocks.
    pub fn bram_bits(&self) -> u64 {
        self.bram_blocks * BRAM_BLOCK_BITS
    }

    pub fn ff_bits(&self) -> u64 {
        self.linebuf_bits + self.skip_bits
    }
}

fn linebuf(shape: Shape, kind: ElemKind, k: usize, pad: usize) -> u64 {
    (depth_first_capacity(shape.c, shape.w + 2 * pad, k) as u64) * kind.bits() as u64
}

fn bn(channels: usize) -> (u64, u64) {
    (
        channels as u64 * BN_ENTRY_BITS,
        (BN_ENTRY_BITS as usize).div_ceil(BRAM_WIDTH) as u64 * channels.div_ceil(BRAM_MIN_DEPTH) as u64,
    )
}

/// Block RAM and flip-flop estimate of every layer.
pub fn estimate_resources(spec: &NetworkSpec) -> Result<ResourceReport, NetError> {
    let io = spec.layer_io()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let input = io[idx].input;
        let out = io[idx].output;
        let mut r = LayerResources {
            layer: idx,
            kind: layer.kind_name().to_string(),
            ..LayerResources::default()
        };
        match *layer {
            LayerSpec::Input { .. } => {}
            LayerSpec::Conv(c) => {
                r.weights = CacheUse::new(c.out, c.k * c.k * input.shape.c);
                if spec.act_width(c.act).is_some() {
                    (r.bn_bits, r.bn_blocks) = bn(c.out);
                }
                r.linebuf_bits = linebuf(input.shape, input.kind, c.k, c.pad);
            }
            LayerSpec::MaxPool { k, pad, .. } => {
                r.linebuf_bits = linebuf(input.shape, input.kind, k, pad);
            }
            LayerSpec::AvgPool { k, .. } => {
                r.linebuf_bits = linebuf(input.shape, input.kind, k, 0);
            }
            LayerSpec::ResBlock { out: o, proj, .. } => {
                let code = out.kind;
                r.weights = CacheUse::new(o, 9 * input.shape.c);
                r.weights.add(CacheUse::new(o, 9 * o));
                r.linebuf_bits = linebuf(input.shape, input.kind, 3, 1) + linebuf(out.shape, code, 3, 1);
                if proj {
                    r.weights.add(CacheUse::new(o, input.shape.c));
                    r.linebuf_bits += linebuf(input.shape, input.kind, 1, 0);
                }
                let (bits, blocks) = bn(o);
                r.bn_bits = 2 * bits;
                r.bn_blocks = 2 * blocks;
                r.skip_bits = depth_first_capacity(o, out.shape.w + 2, 3) as u64 * ElemKind::ACCUM_BITS as u64;
            }
            LayerSpec::Fc(f) => {
                r.weights = CacheUse::new(f.out, input.shape.len());
                if spec.act_width(f.act).is_some() {
                    (r.bn_bits, r.bn_blocks) = bn(f.out);
                }
                r.linebuf_bits = input.shape.len() as u64 * input.kind.bits() as u64;
            }
        }
        layers.push(r);
    }
    let sum = |f: fn(&LayerResources) -> u64| layers.iter().map(f).sum::<u64>();
    Ok(ResourceReport {
        weight_raw_bits: sum(|l| l.weights.raw_bits),
        weight_granular_bits: sum(|l| l.weights.granular_bits),
        bn_bits: sum(|l| l.bn_bits),
        linebuf_bits: sum(|l| l.linebuf_bits),
        skip_bits: sum(|l| l.skip_bits),
        bram_blocks: sum(|l| l.bram_blocks()),
        alm: "not modeled",
        layers,
    })
}

/// Capacity of one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeviceBudget {
    pub bram_blocks: u64,
    pub ff_bits: u64,
    /// Informational only; logic usage is not modeled.
    pub alm_count: u64,
}

impl DeviceBudget {
    /// Stratix V 5SGSD8.
    pub const STRATIX_V: DeviceBudget = DeviceBudget {
        bram_blocks: 2567,
        ff_bits: 1_050_000,
        alm_count: 262_400,
    };
}

impl Default for DeviceBudget {
    fn default() -> Self {
        Self::STRATIX_V
    }
}

/// Layers placed on one device and what they use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeviceLoad {
    pub layers: Range<usize>,
    pub bram_blocks: u64,
    pub ff_bits: u64,
}

/// Contiguous assignment of layers to daisy-chained devices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkPartition {
    pub devices: Vec<DeviceLoad>,
}

impl NetworkPartition {
    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        self.devices.iter().map(|d| d.layers.clone()).collect()
    }
}

fn first_fit(loads: &[(u64, u64)], bram_cap: u64, ff_cap: u64) -> Vec<DeviceLoad> {
    let mut devices: Vec<DeviceLoad> = Vec::new();
    for (idx, &(bram, ff)) in loads.iter().enumerate() {
        match devices.last_mut() {
            Some(d) if d.bram_blocks + bram <= bram_cap && d.ff_bits + ff <= ff_cap => {
                d.layers.end = idx + 1;
                d.bram_blocks += bram;
                d.ff_bits += ff;
            }
            _ => devices.push(DeviceLoad {
                layers: idx..idx + 1,
                bram_blocks: bram,
                ff_bits: ff,
            }),
        }
    }
    devices
}

/// Splits a network into the fewest contiguous device ranges that fit the
/// budget, filling devices greedily in layer order. Among splits with that
/// device count, the one with the smallest per-device block RAM cap found by
/// the greedy fill is returned. Residual blocks are never split.
pub fn partition_network(
    spec: &NetworkSpec,
    budget: &DeviceBudget,
    max_devices: usize,
) -> Result<NetworkPartition, NetError> {
    let report = estimate_resources(spec)?;
    let loads: Vec<(u64, u64)> = report.layers.iter().map(|l| (l.bram_blocks(), l.ff_bits())).collect();
    for (idx, &(bram, ff)) in loads.iter().enumerate() {
        if bram > budget.bram_blocks || ff > budget.ff_bits {
            return Err(NetError::LayerTooLarge {
                layer: idx,
                needed: format!("{bram} BRAM blocks and {ff} FF bits"),
                available: format!("{} BRAM blocks and {} FF bits", budget.bram_blocks, budget.ff_bits),
            });
        }
    }
    let greedy = first_fit(&loads, budget.bram_blocks, budget.ff_bits);
    if greedy.len() > max_devices {
        return Err(NetError::TooManyDevices {
            needed: greedy.len(),
            max: max_devices,
        });
    }
    let (mut lo, mut hi) = (loads.iter().map(|l| l.0).max().unwrap_or(0), budget.bram_blocks);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if first_fit(&loads, mid, budget.ff_bits).len() <= greedy.len() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(NetworkPartition {
        devices: first_fit(&loads, hi, budget.ff_bits),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdesc::{build_alexnet, build_resnet18, parse_netdesc};

    #[test]
    fn waste_for_384_channels() {
        let c = CacheUse::new(384, 9 * 256);
        assert_eq!(c.granular_bits, 512 * 9 * 256);
        let spec = parse_netdesc("input 13 13 256 2\nconv k=3 p=1 o=384 d=1\n").unwrap();
        let r = estimate_resources(&spec).unwrap();
        assert_eq!(r.layers[1].weight_waste(), 0.25);
    }

    #[test]
    fn conv_64_spot_values() {
        let spec = parse_netdesc("input 56 56 64 2\nconv k=3 p=1 o=64 d=1\nmaxpool k=2 s=2\n").unwrap();
        let r = estimate_resources(&spec).unwrap();
        assert_eq!(r.layers[1].weights.raw_bits, 36_864);
        assert_eq!(r.layers[1].bn_bits, 4_096);
        assert_eq!(r.layers[2].weights.raw_bits, 0);
        assert_eq!(r.layers[2].bn_bits, 0);
    }

    #[test]
    fn tiny_net_fits_one_device() {
        let spec = parse_netdesc("input 8 8 1 2\nconv k=3 o=4 d=1\n").unwrap();
        let p = partition_network(&spec, &DeviceBudget::default(), 4).unwrap();
        assert_eq!(p.devices.len(), 1);
        assert_eq!(p.devices[0].layers, 0..2);
    }

    #[test]
    fn half_budget_gives_two_devices() {
        let spec = parse_netdesc("input 16 16 64 2\nconv k=3 p=1 o=64 d=1\nconv k=3 p=1 o=64 d=1\n").unwrap();
        let r = estimate_resources(&spec).unwrap();
        let budget = DeviceBudget {
            bram_blocks: r.bram_blocks / 2,
            ff_bits: u64::MAX,
            alm_count: 1,
        };
        let p = partition_network(&spec, &budget, 4).unwrap();
        assert_eq!(p.layer_ranges(), vec![0..2, 2..3]);
        for d in &p.devices {
            assert!(d.bram_blocks <= budget.bram_blocks);
        }
    }

    #[test]
    fn oversized_layer_and_device_limit() {
        let spec = build_alexnet();
        let tiny = DeviceBudget {
            bram_blocks: 10,
            ff_bits: u64::MAX,
            alm_count: 1,
        };
        assert!(matches!(partition_network(&spec, &tiny, 8), Err(NetError::LayerTooLarge { .. })));
        assert!(matches!(
            partition_network(&spec, &DeviceBudget::default(), 1),
            Err(NetError::TooManyDevices { .. })
        ));
    }

    #[test]
    fn builtin_device_counts() {
        let b = DeviceBudget::default();
        let alex = partition_network(&build_alexnet(), &b, 8).unwrap().devices.len();
        let res = partition_network(&build_resnet18(), &b, 8).unwrap().devices.len();
        assert!((2..=3).contains(&alex), "alexnet on {alex} devices");
        assert!((2..=3).contains(&res), "resnet18 on {res} devices");
    }
}
