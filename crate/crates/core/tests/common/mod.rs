#![allow(dead_code)]

use qstream::engine::{build_graph, run, GraphOptions, RunOptions, RunResult};
use qstream::netdesc::{load_params, random_params, write_params, NetworkParams, NetworkSpec};
use qstream::oracle::{dense_infer, DenseTensor, Inference};
use qstream::stream::PixelStream;

/// Random parameters pushed through the binary blob format.
pub fn params_for(net: &NetworkSpec, seed: u64) -> NetworkParams {
    let raw = random_params(net, seed).expect("random params");
    load_params(&write_params(&raw), net).expect("blob loads")
}

pub fn image_for(net: &NetworkSpec, seed: u64) -> PixelStream {
    let ty = net.input();
    PixelStream::random(ty.shape, ty.kind, seed)
}

pub fn stream(net: &NetworkSpec, params: &NetworkParams, image: &PixelStream, opts: &RunOptions) -> RunResult {
    let graph = build_graph(net, params, &GraphOptions::default()).expect("graph");
    run(&graph, image, opts).expect("run")
}

pub fn oracle(net: &NetworkSpec, params: &NetworkParams, image: &PixelStream) -> Inference {
    dense_infer(net, params, &DenseTensor::from(image)).expect("oracle")
}

use qstream::netdesc::{Act, ConvLayer, FcLayer, LayerSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACCUM_LIMIT: u64 = i16::MAX as u64;

/// Knobs of the random network generator.
#[derive(Clone, Copy)]
pub struct NetGen {
    pub max_depth: usize,
    pub max_side: usize,
    pub max_channels: usize,
    pub residual: bool,
}

impl Default for NetGen {
    fn default() -> Self {
        Self {
            max_depth: 8,
            max_side: 16,
            max_channels: 8,
            residual: true,
        }
    }
}

/// Magnitude bounds of the streams after the layers generated so far.
#[derive(Clone, Copy)]
struct Bounds {
    reg: u64,
    skip: Option<u64>,
}

fn top_code(bits: u8) -> u64 {
    (1u64 << bits) - 1
}

impl NetGen {
    /// A valid network whose accumulators provably stay within 16 bits.
    pub fn generate(&self, seed: u64) -> NetworkSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act_bits = rng.gen_range(1..=3);
        let side = |rng: &mut ChaCha8Rng| rng.gen_range(1..=self.max_side);
        let in_bits = *[1u8, 2, 3, 8].choose(&mut rng).unwrap();
        let input = LayerSpec::Input {
            h: side(&mut rng),
            w: side(&mut rng),
            c: rng.gen_range(1..=self.max_channels),
            bits: in_bits,
        };
        let mut layers = vec![input];
        let mut bounds = Bounds {
            reg: if in_bits == 8 { 255 } else { top_code(in_bits) },
            skip: None,
        };
        let depth = rng.gen_range(1..=self.max_depth);
        let mut attempts = 0;
        while layers.len() <= depth && attempts < 400 {
            attempts += 1;
            let candidate = self.layer(&mut rng);
            layers.push(candidate);
            let fits = NetworkSpec::new("random", act_bits, layers.clone())
                .ok()
                .and_then(|net| next_bounds(&net, bounds));
            match fits {
                Some(b) => bounds = b,
                None => {
                    layers.pop();
                }
            }
        }
        NetworkSpec::new(format!("random{seed}"), act_bits, layers).expect("generated network is valid")
    }

    fn layer(&self, rng: &mut ChaCha8Rng) -> LayerSpec {
        let d = *[0.5, 1.0, 2.0, 4.0].choose(rng).unwrap();
        let act = match rng.gen_range(0..8) {
            0 => Act::Linear,
            1 => Act::Bits(rng.gen_range(1..=3)),
            _ => Act::Default,
        };
        let out = rng.gen_range(1..=self.max_channels);
        let kinds = if self.residual { 6 } else { 5 };
        match rng.gen_range(0..kinds) {
            0 | 1 => LayerSpec::Conv(ConvLayer {
                k: *[1, 3, 5, 7, 11].choose(rng).unwrap(),
                stride: *[1, 2, 4].choose(rng).unwrap(),
                pad: *[0, 1, 3].choose(rng).unwrap(),
                out,
                d,
                act,
            }),
            2 => {
                let k = rng.gen_range(2..=3);
                LayerSpec::MaxPool {
                    k,
                    stride: rng.gen_range(1..=2),
                    pad: rng.gen_range(0..k.min(2)),
                }
            }
            3 => LayerSpec::AvgPool {
                k: rng.gen_range(1..=3),
                stride: rng.gen_range(1..=2),
            },
            4 => LayerSpec::Fc(FcLayer { out, d, act }),
            _ => {
                LayerSpec::ResBlock {
                    out,
                    stride: rng.gen_range(1..=2),
                    d,
                    proj: rng.gen_bool(0.5),
                }
            }
        }
    }
}

/// Bounds after the last layer of `net`, or `None` if some accumulator could
/// leave the 16-bit range.
fn next_bounds(net: &NetworkSpec, prev: Bounds) -> Option<Bounds> {
    let io = net.layer_io().ok()?;
    let idx = net.layers.len() - 1;
    let input = io[idx].input;
    let fan = |k: usize| (k * k * input.shape.c) as u64;
    let act = |a: Act, acc: u64| net.act_width(a).map_or(acc, top_code);
    let ok = |v: u64| (v <= ACCUM_LIMIT).then_some(v);
    let next = match net.layers[idx] {
        LayerSpec::Conv(c) => Bounds {
            reg: act(c.act, ok(fan(c.k) * prev.reg)?),
            skip: None,
        },
        LayerSpec::Fc(f) => Bounds {
            reg: act(f.act, ok(input.shape.len() as u64 * prev.reg)?),
            skip: None,
        },
        LayerSpec::MaxPool { .. } => Bounds { skip: None, ..prev },
        LayerSpec::AvgPool { .. } => Bounds {
            reg: prev.skip.unwrap_or(prev.reg),
            skip: None,
        },
        LayerSpec::ResBlock { out, proj, .. } => {
            let code = top_code(net.act_bits);
            ok(fan(3) * prev.reg)?;
            let conv_b = (9 * out) as u64 * code;
            let skip = if proj {
                ok(input.shape.c as u64 * prev.reg)?
            } else {
                prev.skip.unwrap_or(prev.reg)
            };
            Bounds {
                reg: code,
                skip: Some(ok(conv_b + skip)?),
            }
        }
        LayerSpec::Input { .. } => return None,
    };
    Some(next)
}
