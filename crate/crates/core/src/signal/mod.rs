//! Time-domain waveforms, short-time spectral analysis/synthesis, quality
//! metrics and WAV file I/O.

mod metrics;
mod stft;
pub mod wav;

pub use metrics::{erle, si_snr, METRIC_CLAMP_DB};
pub use stft::{
    hann_periodic, istft_overlap_add, stft, OverlapAdd, SpectralFrame, Stft, StftConfig,
    StreamingStft, FFT_SIZE, HOP, NUM_BINS,
};

use crate::error::{Error, Result};

/// Sample rate shared by every signal in the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz audio. Every sample is finite.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    /// Wraps `samples`, rejecting the first non-finite value.
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        check_finite(&samples)?;
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn from_f32(samples: &[f32]) -> Result<Self> {
        Self::new(samples.iter().map(|&s| f64::from(s)).collect())
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(SAMPLE_RATE)
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn mean_square(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }

    /// Returns a copy multiplied by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| s * gain).collect(),
        }
    }

    /// Truncates or zero-extends to `len` samples.
    pub fn resized(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self { samples }
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|&v| v * v).sum()
}

pub(crate) fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = Waveform::new(vec![0.0, 1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 2 }));
        assert!(Waveform::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn resize_pads_with_zeros() {
        let w = Waveform::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(w.resized(4).samples(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(w.resized(1).samples(), &[1.0]);
    }
}
