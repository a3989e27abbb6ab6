//! One-stage fingerprint singular point detection.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] – dense feature maps and the differentiable operators the
//!   network is built from (convolution, pooling, sigmoid, upsampling, ...),
//!   each with an explicit backward pass.
//! - [`net`] – the three-channel network: a VGG-style feature extractor
//!   plus core and delta multi-scale spatial attention channels whose
//!   per-scale maps are fused by multiplication. Also the weights file format.
//! - [`loss`] – Gaussian heatmap targets and the penalty-reduced focal loss.
//! - [`train`] – Adam, dataset ingestion and the deterministic training loop.
//! - [`eval`] – peak extraction (NMS), point matching and the
//!   detection-rate / false-alarm-rate / timing report.
//! - [`detect`] – end-to-end inference on a grayscale image.
//! - [`synth`] – a zero-pole synthetic fingerprint generator with exact
//!   ground truth.
//! - [`image`] – PGM/PNG decoding, padding and overlays.

pub mod detect;
pub mod error;
pub mod eval;
pub mod image;
pub mod loss;
pub mod net;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
