mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qstream::engine::{
    build_graph, build_topology, estimate_topology, run, simulate_partition, GraphOptions, Partition, RunOptions,
    DEFAULT_CLOCK_MHZ,
};
use qstream::netdesc::{
    builtin, estimate_resources, load_params, parse_netdesc, partition_network, random_params, write_params,
    DeviceBudget, NetworkParams, NetworkSpec,
};
use qstream::oracle::{argmax, dense_infer, DenseTensor};
use qstream::stream::{CycleModel, InputCost, PixelStream, Shape};

use report::{DeviceRow, Format, Report};

/// Published cycle count for ResNet-18 that estimates are checked against.
const RESNET18_REFERENCE_CYCLES: f64 = 1.85e6;

#[derive(Parser)]
#[command(name = "qstream", version, about = "Bit-exact streaming simulator for quantized neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream an image through the pipeline and report the class and cycles.
    Run(RunArgs),
    /// Cycle and memory estimate from the network description alone.
    Estimate(EstimateArgs),
    /// Place the network on daisy-chained devices and check link bandwidth.
    Partition(PartitionArgs),
    /// Run the pipeline and the dense reference and compare outputs.
    Compare(RunArgs),
    /// Write a random parameter blob for a network.
    GenParams(GenArgs),
    /// Write a random raw input image for a network.
    GenImage(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CinMode {
    Pixel,
    Element,
}

#[derive(Args)]
struct NetArgs {
    /// Network description file, or a builtin name (resnet18, alexnet, vgg, vgg:N).
    #[arg(long)]
    net: String,
    #[arg(long, value_enum, default_value = "human")]
    format: Format,
}

#[derive(Args)]
struct CycleArgs {
    /// Input cost per pixel (pixel) or per channel element (element).
    #[arg(long, value_enum, default_value = "pixel")]
    cin_mode: CinMode,
}

impl CycleArgs {
    fn model(&self) -> CycleModel {
        CycleModel {
            input_cost: match self.cin_mode {
                CinMode::Pixel => InputCost::Pixel,
                CinMode::Element => InputCost::Element,
            },
            mac_cycles: 1,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    cycle: CycleArgs,
    /// Parameter blob.
    #[arg(long)]
    params: PathBuf,
    /// Raw 8-bit image, row-major with channels fastest.
    #[arg(long)]
    image: PathBuf,
    /// Image height, width and channels; defaults to the network input.
    #[arg(long, num_args = 3, value_names = ["H", "W", "C"])]
    image_dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_CLOCK_MHZ)]
    clock_mhz: f64,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Flip one weight in the streaming copy of the parameters.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    cycle: CycleArgs,
    /// Clock frequencies to report; repeat or comma-separate for a sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_CLOCK_MHZ])]
    clock_mhz: Vec<f64>,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, default_value_t = DEFAULT_CLOCK_MHZ)]
    clock_mhz: f64,
    /// Capacity of each device-to-device link.
    #[arg(long, default_value_t = 2.0)]
    link_gbps: f64,
    #[arg(long, default_value_t = 8)]
    max_devices: usize,
    /// Block RAMs per device.
    #[arg(long, default_value_t = DeviceBudget::STRATIX_V.bram_blocks)]
    budget_bram: u64,
    /// Flip-flop bits per device.
    #[arg(long, default_value_t = DeviceBudget::STRATIX_V.ff_bits)]
    budget_ff: u64,
    /// Split the layers evenly over this many devices instead of fitting the budget.
    #[arg(long)]
    devices: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    net: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Invalid(anyhow::Error),
    Rejected(Report),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(Failure::Rejected(report)) => {
            print!("{report}");
            ExitCode::from(2)
        }
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<Report, Failure> {
    match command {
        Command::Run(args) => cmd_run(&args),
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Partition(args) => cmd_partition(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::GenParams(args) => {
            let net = load_net(&args.net)?;
            let blob = write_params(&random_params(&net, args.seed)?);
            fs::write(&args.out, blob).with_context(|| format!("cannot write {}", args.out.display()))?;
            Ok(Report::text(format!("wrote parameters for {} to {}\n", net.name, args.out.display())))
        }
        Command::GenImage(args) => {
            let net = load_net(&args.net)?;
            let ty = net.input();
            let image = PixelStream::random(ty.shape, ty.kind, args.seed);
            let bytes: Vec<u8> = image.data().iter().map(|&v| v as u8).collect();
            fs::write(&args.out, bytes).with_context(|| format!("cannot write {}", args.out.display()))?;
            Ok(Report::text(format!("wrote {} {} image to {}\n", ty.shape, ty.kind, args.out.display())))
        }
    }
}

fn load_net(spec: &str) -> anyhow::Result<NetworkSpec> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {spec}"))?;
        return parse_netdesc(&text).with_context(|| format!("invalid network description {spec}"));
    }
    builtin(spec).ok_or_else(|| anyhow!("cannot read network {spec}: no such file or builtin network"))
}

fn check_clock(mhz: f64) -> anyhow::Result<()> {
    if !(mhz.is_finite() && mhz > 0.0) {
        bail!("clock frequency must be positive, got {mhz} MHz");
    }
    Ok(())
}

/// Everything `run` and `compare` need, validated up front.
struct Inputs {
    net: NetworkSpec,
    params: NetworkParams,
    image: PixelStream,
}

fn load_inputs(args: &RunArgs) -> anyhow::Result<Inputs> {
    check_clock(args.clock_mhz)?;
    let net = load_net(&args.net.net)?;
    let blob = fs::read(&args.params).with_context(|| format!("cannot read parameters {}", args.params.display()))?;
    let params = load_params(&blob, &net).with_context(|| format!("invalid parameters {}", args.params.display()))?;
    let ty = net.input();
    let shape = match args.image_dims.as_deref() {
        Some(&[h, w, c]) => Shape::new(h, w, c),
        Some(_) => bail!("--image-dims takes three values"),
        None => ty.shape,
    };
    if shape != ty.shape {
        bail!("image is {shape} but {} expects {}", net.name, ty.shape);
    }
    let bytes = fs::read(&args.image).with_context(|| format!("cannot read image {}", args.image.display()))?;
    if bytes.len() != shape.len() {
        bail!(
            "image {} has {} bytes, {shape} needs {}",
            args.image.display(),
            bytes.len(),
            shape.len()
        );
    }
    if let Some(i) = bytes.iter().position(|&b| !ty.kind.contains(b as i32)) {
        bail!("image byte {i} = {} is outside the {} input range", bytes[i], ty.kind);
    }
    let image = PixelStream::new(shape, ty.kind, bytes.into_iter().map(i32::from).collect())?;
    Ok(Inputs { net, params, image })
}

fn cmd_run(args: &RunArgs) -> Result<Report, Failure> {
    let inputs = load_inputs(args)?;
    let graph = build_graph(&inputs.net, &inputs.params, &GraphOptions::default())?;
    let opts = RunOptions {
        workers: args.workers,
        cycle: args.cycle.model(),
        clock_mhz: args.clock_mhz,
    };
    let result = run(&graph, &inputs.image, &opts)?;
    let class = argmax(result.output.data());
    Ok(report::run_report(args.net.format, &inputs.net.name, class, &result))
}

fn cmd_compare(args: &RunArgs) -> Result<Report, Failure> {
    let inputs = load_inputs(args)?;
    let mut engine_params = inputs.params.clone();
    if args.inject_fault {
        engine_params
            .first_weights_mut()
            .ok_or_else(|| anyhow!("network has no weights to perturb"))?
            .flip(0, 0);
    }
    let graph = build_graph(&inputs.net, &engine_params, &GraphOptions::default())?;
    let opts = RunOptions {
        workers: args.workers,
        cycle: args.cycle.model(),
        clock_mhz: args.clock_mhz,
    };
    let streamed = run(&graph, &inputs.image, &opts)?;
    let reference = dense_infer(&inputs.net, &inputs.params, &DenseTensor::from(&inputs.image))?;
    let mismatch = streamed
        .output
        .data()
        .iter()
        .zip(&reference.output.data)
        .position(|(a, b)| a != b);
    let report = report::compare_report(
        args.net.format,
        &inputs.net.name,
        streamed.output.data(),
        &reference.output.data,
        mismatch,
    );
    match mismatch {
        None => Ok(report),
        Some(_) => Err(Failure::Rejected(report)),
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<Report, Failure> {
    for &mhz in &args.clock_mhz {
        check_clock(mhz)?;
    }
    let net = load_net(&args.net.net)?;
    let topology = build_topology(&net, &GraphOptions::default())?;
    let resources = estimate_resources(&net)?;
    let cycles = estimate_topology(&topology, args.cycle.model(), args.clock_mhz[0]);
    let calibration = (net.name == "resnet18").then_some(RESNET18_REFERENCE_CYCLES);
    Ok(report::estimate_report(
        args.net.format,
        &net.name,
        &cycles,
        &args.clock_mhz,
        &resources,
        calibration,
    ))
}

fn cmd_partition(args: &PartitionArgs) -> Result<Report, Failure> {
    check_clock(args.clock_mhz)?;
    if !(args.link_gbps.is_finite() && args.link_gbps > 0.0) {
        return Err(anyhow!("link capacity must be positive, got {} Gbps", args.link_gbps).into());
    }
    let net = load_net(&args.net.net)?;
    let topology = build_topology(&net, &GraphOptions::default())?;
    let resources = estimate_resources(&net)?;
    let layer_ranges = match args.devices {
        Some(devices) => {
            let layers = net.layers.len() - 1;
            if devices == 0 || devices > layers {
                return Err(anyhow!("cannot split {layers} layers over {devices} devices").into());
            }
            (0..devices)
                .map(|d| {
                    let start = if d == 0 { 0 } else { 1 + d * layers / devices };
                    start..1 + (d + 1) * layers / devices
                })
                .collect::<Vec<_>>()
        }
        None => {
            let budget = DeviceBudget {
                bram_blocks: args.budget_bram,
                ff_bits: args.budget_ff,
                ..DeviceBudget::STRATIX_V
            };
            match partition_network(&net, &budget, args.max_devices) {
                Ok(plan) => plan.layer_ranges(),
                Err(e) => {
                    return Err(Failure::Rejected(report::infeasible_report(args.net.format, &net.name, &e.to_string())))
                }
            }
        }
    };
    let partition = Partition::from_layers(&topology, &layer_ranges)?;
    let link_bps = (args.link_gbps * 1e9).round() as u64;
    let links = simulate_partition(&topology, &partition, args.clock_mhz, link_bps)?;
    let devices: Vec<DeviceRow> = layer_ranges
        .iter()
        .zip(&links.devices)
        .map(|(range, dev)| DeviceRow {
            layers: range.clone(),
            stages: dev.stages.clone(),
            bram_blocks: resources.layers[range.clone()].iter().map(|l| l.bram_blocks()).sum(),
            ff_bits: resources.layers[range.clone()].iter().map(|l| l.ff_bits()).sum(),
        })
        .collect();
    let report = report::partition_report(args.net.format, &net.name, &devices, &links);
    if links.all_ok {
        Ok(report)
    } else {
        Err(Failure::Rejected(report))
    }
}
