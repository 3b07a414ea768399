mod common;

use common::{image_for, params_for, NetGen};
use proptest::prelude::*;
use qstream::engine::{build_graph, run, GraphOptions, RunOptions};
use qstream::netdesc::{
    census, emit_netdesc, estimate_resources, parse_netdesc, partition_network, random_params,
    write_params, load_params, DeviceBudget, NetworkSpec,
};
use qstream::oracle::{dense_conv, dense_maxpool, DenseTensor};
use qstream::quant::{
    apply_threshold, batch_norm, binarize_weights, fold_batchnorm, quantize_reference, quantized_dot,
    ActCode, BnParams, FilterTensor, PackedBits,
};
use qstream::stream::{
    conv_stage, depth_first_capacity, drive, max_pool_stage, width_first_capacity, ConvStageSpec,
    CycleModel, ElemKind, PixelStream, Shape,
};
use qstream::KernelError;
use qstream::quant::WeightBlock;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn bn_params() -> impl Strategy<Value = BnParams> {
    (
        prop_oneof![-4.0f64..-0.05, 0.05f64..4.0],
        -50.0f64..50.0,
        0.01f64..2.0,
        -10.0f64..10.0,
    )
        .prop_map(|(g, m, i, b)| BnParams::new(g, m, i, b).unwrap())
}

fn signs(n: usize) -> impl Strategy<Value = Vec<i8>> {
    proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], n)
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn popcount_dot_equals_scalar(
        (n, bits, w, codes) in (1usize..=4704, 1u8..=3).prop_flat_map(|(n, bits)| (
            Just(n),
            Just(bits),
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(0u32..(1 << bits), n),
        ))
    ) {
        let acts: Vec<ActCode> = codes.iter().map(|&c| ActCode::new(c, bits).unwrap()).collect();
        let packed = PackedBits::from_bools(w.iter().copied());
        let want: i64 = w.iter().zip(&codes).map(|(&b, &c)| if b { c as i64 } else { -(c as i64) }).sum();
        prop_assert_eq!(quantized_dot(&packed, &acts).unwrap().value() as i64, want);
        prop_assert!(n > 0);
    }

    #[test]
    fn folded_thresholds_equal_reference(p in bn_params(), d in 0.1f64..8.0, bits in 1u8..=3, a in i16::MIN..=i16::MAX) {
        let t = fold_batchnorm(&p, d, bits).unwrap();
        let a = a as i64;
        prop_assert_eq!(apply_threshold(a, &t), quantize_reference(batch_norm(a as f64, &p), d, bits));
    }

    #[test]
    fn folded_thresholds_hold_at_boundaries(p in bn_params(), d in 0.1f64..8.0, bits in 1u8..=3) {
        let t = fold_batchnorm(&p, d, bits).unwrap();
        for &level in t.levels() {
            for a in [level - 1, level, level + 1] {
                if (i16::MIN as i64..=i16::MAX as i64).contains(&a) {
                    prop_assert_eq!(apply_threshold(a, &t), quantize_reference(batch_norm(a as f64, &p), d, bits));
                }
            }
        }
    }

    #[test]
    fn positive_rescale_keeps_tau(p in bn_params(), c in 0.1f64..10.0, d in 0.1f64..4.0) {
        let scaled = BnParams::new(c * p.gamma, p.mu, p.inv_std, c * p.beta).unwrap();
        let (a, b) = (fold_batchnorm(&p, d, 2).unwrap(), fold_batchnorm(&scaled, d, 2).unwrap());
        prop_assert!((a.tau() - b.tau()).abs() <= 1e-9 * a.tau().abs().max(1.0));
    }

    #[test]
    fn binarize_is_idempotent(k in 1usize..=3, i in 1usize..=4, o in 1usize..=4, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..k * k * i * o).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let block = binarize_weights(&FilterTensor::new(k, i, o, data).unwrap()).unwrap();
        prop_assert_eq!(binarize_weights(&block.to_filter()).unwrap(), block);
    }

    #[test]
    fn conv_stage_equals_dense(
        (h, w, c, o, k, s, p, bits, ws) in (1usize..=16, 1usize..=16, 1usize..=8, 1usize..=8,
            prop::sample::select(vec![1usize, 3, 5, 7, 11]), prop::sample::select(vec![1usize, 2, 4]),
            prop::sample::select(vec![0usize, 1, 3]), 1u8..=3)
            .prop_filter("window fits", |&(h, w, _, _, k, _, p, _)| h + 2 * p >= k && w + 2 * p >= k)
            .prop_flat_map(|(h, w, c, o, k, s, p, bits)| (Just(h), Just(w), Just(c), Just(o), Just(k), Just(s), Just(p), Just(bits), signs(k * k * c * o))),
        seed in any::<u64>()
    ) {
        let input = PixelStream::random(Shape::new(h, w, c), ElemKind::Code(bits), seed);
        let block = WeightBlock::from_signs(k, c, o, &ws).unwrap();
        let want = dense_conv(&DenseTensor::from(&input), &block, s, p, 0).unwrap();
        let out = conv_stage(&ConvStageSpec::new(block, None, s, p), &input, CycleModel::default()).unwrap();
        prop_assert_eq!(out.stream.data(), want.data.as_slice());
    }

    #[test]
    fn max_pool_equals_dense(h in 1usize..=16, w in 1usize..=16, c in 1usize..=8, k in 2usize..=3, s in 1usize..=2, p in 0usize..=1, seed in any::<u64>()) {
        prop_assume!(h + 2 * p >= k && w + 2 * p >= k);
        let input = PixelStream::random(Shape::new(h, w, c), ElemKind::Code(2), seed);
        let want = dense_maxpool(&DenseTensor::from(&input), k, s, p).unwrap();
        let out = max_pool_stage(k, s, p, &input, CycleModel::default()).unwrap();
        prop_assert_eq!(out.stream.data(), want.data.as_slice());
    }

    #[test]
    fn line_buffer_capacity_is_minimal(
        k in prop::sample::select(vec![3usize, 5, 7]), extra_h in 0usize..6, extra_w in 0usize..6, c in 1usize..=4, seed in any::<u64>()
    ) {
        let (h, w) = (k + extra_h, k + extra_w);
        let input = PixelStream::random(Shape::new(h, w, c), ElemKind::Code(2), seed);
        let spec = ConvStageSpec::new(WeightBlock::from_signs(k, c, 1, &vec![1; k * k * c]).unwrap(), None, 1, 0);
        let kernel = spec.kernel("conv", input.shape(), input.kind(), CycleModel::default()).unwrap();
        let cap = kernel.buffer_capacity();
        prop_assert_eq!(cap, depth_first_capacity(c, w, k));
        let mut exact = kernel;
        prop_assert!(drive(&mut exact, &[&input.elements()]).is_ok());
        let mut short = spec.kernel("conv", input.shape(), input.kind(), CycleModel::default()).unwrap().with_buffer_capacity(cap - 1);
        let is_evicted = matches!(drive(&mut short, &[&input.elements()]), Err(KernelError::Evicted { .. }));
        prop_assert!(is_evicted);
    }

    #[test]
    fn depth_first_buffer_is_smaller(h in 1usize..64, w in 2usize..64, c in 1usize..64, k in 1usize..12) {
        // The inequality needs at least as many channels and rows as the
        // window is wide; with fewer channels width-first scanning can win.
        prop_assume!(w > k && c >= k && h >= k);
        prop_assert!(depth_first_capacity(c, w, k) <= width_first_capacity(h, w, c, k));
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn streaming_equals_oracle(seed in any::<u64>()) {
        let net = NetGen::default().generate(seed);
        let params = params_for(&net, seed);
        let image = image_for(&net, seed ^ 0x5a5a);
        let r = common::stream(&net, &params, &image, &RunOptions::default());
        let o = common::oracle(&net, &params, &image);
        prop_assert_eq!(r.output.data(), o.output.data.as_slice());
    }

    #[test]
    fn cycles_do_not_depend_on_data(seed in any::<u64>()) {
        let net = NetGen::default().generate(seed);
        let a = common::stream(&net, &params_for(&net, seed), &image_for(&net, 1), &RunOptions::default());
        let b = common::stream(&net, &params_for(&net, seed + 1), &image_for(&net, 2), &RunOptions::default());
        prop_assert_eq!(a.cycles, b.cycles);
    }

    #[test]
    fn fifo_capacity_preserves_output(seed in any::<u64>(), cap in 1usize..=8, workers in 1usize..=4) {
        let net = NetGen::default().generate(seed);
        let params = params_for(&net, seed);
        let image = image_for(&net, seed);
        let reference = common::stream(&net, &params, &image, &RunOptions::default());
        let graph = build_graph(&net, &params, &GraphOptions { fifo_capacity: Some(cap), ..GraphOptions::default() }).unwrap();
        let r = run(&graph, &image, &RunOptions { workers, ..RunOptions::default() }).unwrap();
        prop_assert_eq!(&r.output, &reference.output);
        for e in &r.fifos {
            prop_assert_eq!(e.pushed, e.popped);
            prop_assert!(e.peak <= e.capacity);
        }
    }

    #[test]
    fn netdesc_round_trip(seed in any::<u64>()) {
        let net = NetGen::default().generate(seed);
        let text = emit_netdesc(&net);
        let back = parse_netdesc(&text).unwrap();
        prop_assert_eq!(emit_netdesc(&back), text);
        prop_assert_eq!(back.layers, net.layers);
    }

    #[test]
    fn blob_length_is_exact(seed in any::<u64>()) {
        let net = NetGen::default().generate(seed);
        let blob = write_params(&random_params(&net, seed).unwrap());
        let layers = census(&net).unwrap();
        let floats: usize = layers.iter().map(|l| l.floats()).sum();
        prop_assert_eq!(blob.len(), 12 + 4 * layers.len() + 4 * floats);
        prop_assert!(load_params(&blob, &net).is_ok());
        prop_assert!(load_params(&blob[..blob.len() - 4], &net).is_err());
        let mut long = blob.clone();
        long.extend_from_slice(&0f32.to_le_bytes());
        prop_assert!(load_params(&long, &net).is_err());
    }

    #[test]
    fn partition_respects_budget(seed in any::<u64>(), bram in 1u64..40, ff in 1_000u64..40_000) {
        let net = NetGen::default().generate(seed);
        let budget = DeviceBudget { bram_blocks: bram, ff_bits: ff, alm_count: 0 };
        let report = estimate_resources(&net).unwrap();
        if let Ok(p) = partition_network(&net, &budget, 64) {
            let mut next = 0;
            for d in &p.devices {
                prop_assert_eq!(d.layers.start, next);
                prop_assert!(!d.layers.is_empty());
                next = d.layers.end;
                let bram_sum: u64 = report.layers[d.layers.clone()].iter().map(|l| l.bram_blocks()).sum();
                let ff_sum: u64 = report.layers[d.layers.clone()].iter().map(|l| l.ff_bits()).sum();
                prop_assert_eq!((bram_sum, ff_sum), (d.bram_blocks, d.ff_bits));
                prop_assert!(bram_sum <= bram && ff_sum <= ff);
            }
            prop_assert_eq!(next, net.layers.len());
        }
    }
}

fn conv_net(h: usize, w: usize, i: usize, o: usize, k: usize) -> NetworkSpec {
    parse_netdesc(&format!("input {h} {w} {i} 2\nconv k={k} p={} o={o} d=1\n", k / 2)).unwrap()
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn resources_are_monotone(h in 4usize..40, w in 4usize..40, i in 1usize..600, o in 1usize..600, k in 1usize..6, which in 0usize..5, step in 1usize..300) {
        let base = [h, w, i, o, k];
        let mut grown = base;
        grown[which] += if which == 4 { 1 } else { step };
        let net = |d: [usize; 5]| conv_net(d[0], d[1], d[2], d[3], d[4]);
        let (a, b) = (estimate_resources(&net(base)).unwrap(), estimate_resources(&net(grown)).unwrap());
        prop_assert!(b.weight_raw_bits >= a.weight_raw_bits);
        prop_assert!(b.weight_granular_bits >= a.weight_granular_bits);
        prop_assert!(b.bn_bits >= a.bn_bits);
        prop_assert!(b.linebuf_bits >= a.linebuf_bits);
        prop_assert!(b.skip_bits >= a.skip_bits);
        prop_assert!(b.bram_blocks >= a.bram_blocks);
        prop_assert!(b.bram_bits() >= a.bram_bits() && b.ff_bits() >= a.ff_bits());
    }
}

#[test]
fn depth_first_wins_on_builtin_layers() {
    use qstream::netdesc::{build_alexnet, build_resnet18, build_vgg_like, LayerSpec};
    for net in [build_resnet18(), build_alexnet(), build_vgg_like(32)] {
        let io = net.layer_io().unwrap();
        for (idx, layer) in net.layers.iter().enumerate() {
            let k = match *layer {
                LayerSpec::Conv(c) => c.k,
                LayerSpec::ResBlock { .. } => 3,
                _ => continue,
            };
            let s = io[idx].input.shape;
            if s.w > k && s.c > 3 {
                assert!(
                    depth_first_capacity(s.c, s.w, k) <= width_first_capacity(s.h, s.w, s.c, k),
                    "{} layer {idx}",
                    net.name
                );
            }
        }
    }
}
