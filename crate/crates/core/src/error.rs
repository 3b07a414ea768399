use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("mixed activation bit-widths: {0} and {1}")]
    MixedWidths(u8, u8),
    #[error("activation code {code} does not fit in {bits} bits")]
    CodeRange { code: u32, bits: u8 },
    #[error("unsupported activation bit-width {0} (expected 1..=8)")]
    BitWidth(u8),
    #[error("value {value} does not fit in a {width}-bit accumulator")]
    AccumOverflow { value: i64, width: u8 },
    #[error("degenerate channel: gamma * inv_std is zero")]
    DegenerateChannel,
    #[error("invalid quantizer range size {0} (must be finite and > 0)")]
    InvalidRange(f64),
    #[error("non-finite parameter: {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("line buffer fault: element {index} needed but oldest held is {oldest}")]
    Evicted { index: u64, oldest: u64 },
    #[error("16-bit accumulator overflow in {stage}: {value}")]
    Overflow { stage: String, value: i64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value {value} out of range for {kind}")]
    ValueRange { value: i32, kind: String },
    #[error("kernel received input after consuming its whole stream")]
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("deadlock: no stage can fire; blocked stages: {}", blocked.join(", "))]
    Deadlock { blocked: Vec<String> },
    #[error("stage {stage}: {source}")]
    Kernel {
        stage: String,
        #[source]
        source: KernelError,
    },
    #[error("input stream mismatch: {0}")]
    Input(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("fifo misuse: {0}")]
    Fifo(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown directive `{name}`")]
    UnknownDirective { line: usize, name: String },
    #[error("{}layer {layer}: {msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Shape {
        line: Option<usize>,
        layer: usize,
        msg: String,
    },
    #[error("parameter blob: {0}")]
    Blob(String),
    #[error("parameter blob length mismatch: expected {expected} bytes, got {actual}")]
    BlobLength { expected: usize, actual: usize },
    #[error("layer {layer}: non-finite parameter at float {offset}")]
    NonFinite { layer: usize, offset: usize },
    #[error("layer {layer} channel {channel}: gamma * inv_std is zero")]
    DegenerateChannel { layer: usize, channel: usize },
    #[error("layer {layer}: range size {header} in parameter header differs from {spec} in the network description")]
    RangeMismatch { layer: usize, header: f64, spec: f64 },
    #[error("layer {layer}: {source}")]
    Quant {
        layer: usize,
        #[source]
        source: QuantError,
    },
    #[error("layer {layer} needs {needed} but a device only has {available}")]
    LayerTooLarge {
        layer: usize,
        needed: String,
        available: String,
    },
    #[error("partition needs {needed} devices, more than the allowed {max}")]
    TooManyDevices { needed: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("layer {layer}: value {value} does not fit the 16-bit accumulator path")]
    Overflow { layer: usize, value: i64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameters do not match the network: {0}")]
    Params(String),
}

/// Umbrella error for callers that mix subsystems.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
