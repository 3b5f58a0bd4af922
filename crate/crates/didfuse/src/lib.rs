//! DIDFuse: infrared/visible image fusion via a dual-stream auto-encoder.
//!
//! The encoder decomposes each grayscale image into a base feature map
//! (low-frequency, shared across modalities) and a detail feature map
//! (high-frequency, modality specific). A composite loss drives the base maps
//! of a registered infrared/visible pair together and the detail maps apart
//! while keeping reconstructions faithful. At test time the feature maps of a
//! pair are merged by spatial- and channel-attention rules and the decoder
//! produces the fused image, which is scored with six standard fusion
//! metrics (EN, SD, SF, VIF, AG, SCD).
//!
//! Entry points:
//! - [`tensor`]: rank-4 tensors with reverse-mode differentiation and Adam.
//! - [`network`]: the 7-layer encoder/decoder with skip connections.
//! - [`loss`]: decomposition + reconstruction objectives and ablation variants.
//! - [`fusion`]: spatial/channel attention merging of encoder outputs.
//! - [`metrics`]: fused-image quality metrics.
//! - [`io`]: image loading, dataset manifests, checkpoints.
//! - [`pipeline`]: training, fusion, evaluation and reproducibility runs.
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `didfuse` binary for the command-line interface.

pub mod error;
pub mod fusion;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
