//! Streaming joint acoustic echo cancellation and noise suppression.
//!
//! The enhancement chain runs once per 16 ms hop of 16 kHz audio:
//!
//! ```text
//! far x(n) ──► delay estimate ──► compensation ──► MDF adaptive filter ──► e(n), ỹ(n)
//!                                                                           │
//!          ŝ(n) ◄── overlap-add ◄── complex ratio mask ◄── MC-TCN cores ◄───┘
//! ```
//!
//! * [`signal`]: framing, spectra, SI-SNR/ERLE, WAV I/O.
//! * [`delay`]: spectral-peak fingerprint delay estimation.
//! * [`mdf`]: multidelay block frequency-domain adaptive filter.
//! * [`model`]: magnitude and complex temporal convolutional cores.
//! * [`scene`]: synthetic near-end/far-end scenes with ground truth.
//! * [`pipeline`]: the per-hop orchestration and evaluation report.

pub mod delay;
pub mod error;
pub mod mdf;
pub mod model;
pub mod pipeline;
pub mod scene;
pub mod signal;

pub use error::{Error, Result};
pub use signal::{SpectralFrame, StftConfig, Waveform, SAMPLE_RATE};
