mod common;

use common::{image_for, oracle, params_for, stream, NetGen};
use qstream::engine::{
    apply_link_latency, build_graph, build_topology, estimate_topology, run, GraphOptions, Partition,
    RunOptions, DEFAULT_CLOCK_MHZ, DEFAULT_LINK_LATENCY,
};
use qstream::netdesc::{emit_netdesc, parse_netdesc, NetworkSpec};
use qstream::stream::{CycleModel, InputCost};
use qstream::EngineError;

fn element_mode() -> CycleModel {
    CycleModel {
        input_cost: InputCost::Element,
        mac_cycles: 1,
    }
}

#[test]
fn random_networks_match_oracle() {
    let gen = NetGen::default();
    for seed in 0..60 {
        let net = gen.generate(seed);
        let params = params_for(&net, seed);
        let image = image_for(&net, seed + 1000);
        let r = stream(&net, &params, &image, &RunOptions::default());
        let o = oracle(&net, &params, &image);
        assert_eq!(r.output.data(), o.output.data.as_slice(), "seed {seed}:\n{}", emit_netdesc(&net));
    }
}

#[test]
fn netdesc_round_trips_generated_networks() {
    let gen = NetGen::default();
    for seed in 0..100 {
        let net = gen.generate(seed);
        let text = emit_netdesc(&net);
        let back = parse_netdesc(&text).unwrap();
        assert_eq!(back.layers, net.layers, "{text}");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let gen = NetGen::default();
    for seed in [3, 17, 42, 99] {
        let net = gen.generate(seed);
        let params = params_for(&net, seed);
        let image = image_for(&net, seed);
        let graph = build_graph(&net, &params, &GraphOptions::default()).unwrap();
        let runs: Vec<_> = [1, 2, 3, 8, 0]
            .into_iter()
            .map(|workers| {
                let opts = RunOptions {
                    workers,
                    ..RunOptions::default()
                };
                run(&graph, &image, &opts).unwrap()
            })
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.output, runs[0].output);
            assert_eq!(r.cycles, runs[0].cycles);
        }
    }
}

#[test]
fn estimate_equals_run_in_both_cost_modes() {
    let gen = NetGen::default();
    for seed in 0..40 {
        let net = gen.generate(seed);
        let params = params_for(&net, seed);
        let image = image_for(&net, seed);
        let graph = build_graph(&net, &params, &GraphOptions::default()).unwrap();
        for model in [CycleModel::default(), element_mode()] {
            let opts = RunOptions {
                cycle: model,
                workers: 2,
                ..RunOptions::default()
            };
            let r = run(&graph, &image, &opts).unwrap();
            let est = estimate_topology(&graph.topology, model, DEFAULT_CLOCK_MHZ);
            assert_eq!(est, r.cycles, "seed {seed}");
        }
    }
}

fn resnet_toy() -> NetworkSpec {
    parse_netdesc(
        "input 8 8 3 8\nconv k=3 o=4 p=1 d=1\nresblock o=4 s=1 d=1\nresblock o=8 s=2 d=1 proj\nresblock o=8 s=1 d=1\navgpool k=4 s=4\nfc o=5 d=1 act=none\n",
    )
    .unwrap()
}

#[test]
fn undersized_skip_fifo_deadlocks() {
    let net = resnet_toy();
    let params = params_for(&net, 1);
    let image = image_for(&net, 2);
    let opts = GraphOptions {
        skip_capacity: Some(1),
        ..GraphOptions::default()
    };
    let graph = build_graph(&net, &params, &opts).unwrap();
    for workers in [1, 4] {
        let err = run(
            &graph,
            &image,
            &RunOptions {
                workers,
                ..RunOptions::default()
            },
        )
        .unwrap_err();
        match err {
            EngineError::Deadlock { blocked } => {
                assert!(blocked.iter().any(|s| s.starts_with("res")), "{blocked:?}");
            }
            other => panic!("expected deadlock, got {other}"),
        }
    }
}

#[test]
fn skip_fifo_never_fills_at_design_capacity() {
    let net = resnet_toy();
    let params = params_for(&net, 1);
    let image = image_for(&net, 2);
    let r = stream(&net, &params, &image, &RunOptions::default());
    for e in r.fifos.iter().filter(|e| e.skip) {
        assert!(e.peak <= e.capacity);
        assert_eq!(e.pushed, e.popped);
    }
    for s in r.cycles.stages.iter().filter(|s| s.name.ends_with(".add")) {
        assert_eq!(s.skip_stall, 0, "{}", s.name);
    }
}

#[test]
fn partitioning_is_transparent() {
    let gen = NetGen::default();
    for seed in 0..200 {
        let net = gen.generate(seed);
        let params = params_for(&net, seed);
        let image = image_for(&net, seed);
        let base = build_graph(&net, &params, &GraphOptions::default()).unwrap();
        let stages = base.topology.stages.len();
        let reference = run(&base, &image, &RunOptions::default()).unwrap();
        for devices in 2..=3.min(stages) {
            let partition = Partition::even(stages, devices).unwrap();
            let mut graph = base.clone();
            let added = apply_link_latency(&mut graph.topology, &partition, DEFAULT_LINK_LATENCY).unwrap();
            let r = run(&graph, &image, &RunOptions::default()).unwrap();
            assert_eq!(r.output, reference.output, "seed {seed}");
            let (before, after) = (reference.cycles.total_cycles, r.cycles.total_cycles);
            assert!(after.abs_diff(before) <= added, "seed {seed}: {before} -> {after}, bound {added}");
            for (a, b) in r.cycles.stages.iter().zip(&reference.cycles.stages) {
                assert_eq!(a.busy, b.busy);
            }
        }
    }
}

#[test]
fn input_shape_is_checked() {
    let net = parse_netdesc("input 4 4 1 2\nconv k=3 o=2 d=1\n").unwrap();
    let params = params_for(&net, 0);
    let graph = build_graph(&net, &params, &GraphOptions::default()).unwrap();
    let wrong = qstream::stream::PixelStream::random(qstream::stream::Shape::new(4, 4, 2), qstream::stream::ElemKind::Code(2), 0);
    assert!(matches!(run(&graph, &wrong, &RunOptions::default()), Err(EngineError::Input(_))));
}

#[test]
fn topology_without_params_estimates() {
    let net = resnet_toy();
    let t = build_topology(&net, &GraphOptions::default()).unwrap();
    let est = estimate_topology(&t, CycleModel::default(), DEFAULT_CLOCK_MHZ);
    assert_eq!(est.stages.len(), t.stages.len());
    assert!(est.total_cycles > 0);
}

