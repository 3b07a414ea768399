use super::{Act, ConvLayer, FcLayer, LayerSpec, NetworkSpec, DEFAULT_ACT_BITS};

// Builtin models have no trained scale; every layer uses a unit range.
const UNIT: f64 = 1.0;

fn conv(k: usize, stride: usize, pad: usize, out: usize) -> LayerSpec {
    LayerSpec::Conv(ConvLayer {
        k,
        stride,
        pad,
        out,
        d: UNIT,
        act: Act::Default,
    })
}

fn fc(out: usize, act: Act) -> LayerSpec {
    LayerSpec::Fc(FcLayer { out, d: UNIT, act })
}

fn block(out: usize, stride: usize, proj: bool) -> LayerSpec {
    LayerSpec::ResBlock {
        out,
        stride,
        d: UNIT,
        proj,
    }
}

/// ResNet-18 over a 224×224 RGB image.
pub fn build_resnet18() -> NetworkSpec {
    let mut layers = vec![
        LayerSpec::Input { h: 224, w: 224, c: 3, bits: 8 },
        conv(7, 2, 3, 64),
        LayerSpec::MaxPool { k: 3, stride: 2, pad: 1 },
    ];
    for (i, &out) in [64, 128, 256, 512].iter().enumerate() {
        let down = i > 0;
        layers.push(block(out, if down { 2 } else { 1 }, down));
        layers.push(block(out, 1, false));
    }
    layers.push(LayerSpec::AvgPool { k: 7, stride: 1 });
    layers.push(fc(1000, Act::Linear));
    NetworkSpec::new("resnet18", DEFAULT_ACT_BITS, layers).expect("builtin resnet18 is valid")
}

/// Single-tower AlexNet over a 224×224 RGB image.
pub fn build_alexnet() -> NetworkSpec {
    let pool = || LayerSpec::MaxPool { k: 3, stride: 2, pad: 0 };
    let layers = vec![
        LayerSpec::Input { h: 224, w: 224, c: 3, bits: 8 },
        conv(11, 4, 2, 96),
        pool(),
        conv(5, 1, 2, 256),
        pool(),
        conv(3, 1, 1, 384),
        conv(3, 1, 1, 384),
        conv(3, 1, 1, 256),
        pool(),
        fc(4096, Act::Default),
        fc(4096, Act::Default),
        fc(1000, Act::Linear),
    ];
    NetworkSpec::new("alexnet", DEFAULT_ACT_BITS, layers).expect("builtin alexnet is valid")
}

/// Three blocks of two 3×3 convolutions and a 2×2 max pool, then three
/// fully connected layers, over a `size`×`size` RGB image. `size` must be a
/// positive multiple of 8.
pub fn build_vgg_like(size: usize) -> NetworkSpec {
    let pool = || LayerSpec::MaxPool { k: 2, stride: 2, pad: 0 };
    let mut layers = vec![LayerSpec::Input { h: size, w: size, c: 3, bits: 8 }];
    for out in [64, 128, 256] {
        layers.push(conv(3, 1, 1, out));
        layers.push(conv(3, 1, 1, out));
        layers.push(pool());
    }
    layers.push(fc(512, Act::Default));
    layers.push(fc(512, Act::Default));
    layers.push(fc(10, Act::Linear));
    NetworkSpec::new(format!("vgg_like{size}"), DEFAULT_ACT_BITS, layers)
        .expect("vgg_like needs a positive multiple of 8")
}

/// Looks up a builtin by name: `resnet18`, `alexnet`, `vgg` or `vgg:<size>`.
pub fn builtin(name: &str) -> Option<NetworkSpec> {
    match name {
        "resnet18" => Some(build_resnet18()),
        "alexnet" => Some(build_alexnet()),
        "vgg" | "vgg_like" => Some(build_vgg_like(32)),
        _ => {
            let size: usize = name.strip_prefix("vgg:")?.parse().ok()?;
            (size > 0 && size.is_multiple_of(8)).then(|| build_vgg_like(size))
        }
    }
}
