//! Fake-voice detection from layer-wise neuron activation behaviors.
//!
//! A small convolutional speaker network is instrumented so every conv and
//! fully-connected layer reports its neuron outputs. Those traces are turned
//! into compact features (activated-neuron counts against calibrated layer
//! thresholds, or the top-k outputs per layer) and fed to a shallow binary
//! classifier. The crate also carries the manipulation harness (resampling,
//! speed, pitch, SNR-controlled noise) used to probe robustness.

pub mod audio;
pub mod backbone;
pub mod corpus;
pub mod coverage;
pub mod detector;
pub mod error;
pub mod fft;
pub mod manipulate;
pub mod metrics;
pub mod nn;
pub mod nsw;
pub mod pipeline;
pub mod util;

pub use error::{Error, Result};
