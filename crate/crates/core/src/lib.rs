//! Spike-camera processing toolkit.
//!
//! The crate covers the whole spike-domain pipeline at desk scale:
//!
//! * [`stream`]: the binary `[T, H, W]` spike tensor, its bit-exact `.dat`
//!   codec and clip windowing.
//! * [`camera`]: integrate-and-fire pixel simulation and the frame-based
//!   video-to-spike encoder.
//! * [`reconstruct`]: texture-from-interval grayscale reconstruction.
//! * [`hsfe`]: block slicing, multi-scale temporal filtering and spatial
//!   attention producing coarse intensity estimates.
//! * [`star_net`]: a miniature attention-pooling ResNet with temporal
//!   self-attention fusion.
//! * [`snn`]: LIF neurons, TDBN, spiking residual blocks and spike-driven
//!   self-attention with operation counting.
//! * [`energy`]: synaptic-operation ledgers and energy estimates.
//! * [`align`]: spike/text contrastive alignment, few-shot head training and
//!   top-k evaluation.

pub mod align;
pub mod camera;
pub mod energy;
pub mod error;
pub mod hsfe;
pub mod reconstruct;
pub mod snn;
pub mod star_net;
pub mod stream;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use stream::{SpikeStream, StreamMeta};
