//! Streaming simulator for quantized neural networks on FPGA-style dataflow
//! accelerators.
//!
//! Layers run as pipeline stages connected by bounded FIFOs. Convolutions use
//! 1-bit weights against n-bit activation codes through bit-plane popcount
//! dot products, batch normalization is folded into integer thresholds, and
//! residual blocks carry 16-bit pre-activation sums on a delay-matched skip
//! path. Alongside bit-exact execution the crate models per-stage cycle
//! counts, on-chip memory usage and multi-device partitioning.
//!
//! The crate is organised bottom-up:
//!
//! - [`quant`]: packed bits, popcount dot products, weight binarization and
//!   threshold folding.
//! - [`stream`]: pixel streams, line buffers and the per-layer streaming
//!   kernels.
//! - [`engine`]: stage graphs, FIFOs, the deterministic scheduler, cycle
//!   accounting and device partitions.
//! - [`netdesc`]: the network description language, parameter blobs, builtin
//!   models, the resource estimator and the partitioner.
//! - [`oracle`]: a slow dense reference used as ground truth.

pub mod engine;
pub mod error;
pub mod netdesc;
pub mod oracle;
pub mod quant;
pub mod stream;

pub use error::{EngineError, Error, KernelError, NetError, OracleError, QuantError};
