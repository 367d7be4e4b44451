//! Binaural scene kit: spatial audio features, a two-branch convolutional
//! recurrent network for joint sound event detection (SED) and acoustic
//! scene classification (ASC), and the segment-based metrics used to score
//! both tasks.
//!
//! The crate is organised bottom-up:
//!
//! - [`dsp`]: framing, Hamming window, STFT, mel filterbank, complex mel projection.
//! - [`features`]: logmel, phase, IPD, sin/cos IPD, ILD, GCC-PHAT and the
//!   seven stacked input layouts, plus the `BFT1` feature file format.
//! - [`dataset`]: WAV reader/writer, annotation and manifest parsing, target
//!   encoding and fixed-length clip windows.
//! - [`model`]: tensors, layers with analytic gradients, the multitask
//!   network, Adam training and the `BMK1` checkpoint format.
//! - [`metrics`]: segment-based error rate and F1 for SED, clip-level F1 for ASC.
//! - [`synth`]: deterministic synthetic binaural scenes used as oracles.

pub mod dataset;
pub mod dsp;
mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod synth;

pub use error::{Error, Result, WavError};
